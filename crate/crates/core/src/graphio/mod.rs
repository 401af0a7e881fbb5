//! Graph data model, normalization, text format, and synthetic generators.

mod format;
mod synth;

use std::fmt;

use thiserror::Error;

use crate::numkit::{CsrMatrix, DenseMatrix, NumError};

pub use format::{
    load_dataset, load_graph, load_graphset, parse_dataset, parse_graph, parse_graphset, Dataset, save_graph, save_graphset,
    write_graph, write_graphset,
};
pub use synth::{graphset_generate, sbm_generate, GraphSetParams, SbmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-node targets. Multi-hot labels are only used by the metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(Vec<Vec<bool>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_single(&self) -> Option<&[usize]> {
        match self {
            Labels::Single(v) => Some(v),
            Labels::Multi(_) => None,
        }
    }

    pub fn is_multilabel(&self) -> bool {
        matches!(self, Labels::Multi(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    MalformedHeader(String),
    DanglingEndpoint { v: usize, u: usize, num_nodes: usize },
    SelfLoop(usize),
    MaskOverlap(usize),
    LabelOutOfRange { node: usize, label: usize, classes: usize },
    Duplicate { tag: char, node: usize },
    Syntax(String),
    UnexpectedEof,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MalformedHeader(s) => write!(f, "malformed header: {s}"),
            ParseErrorKind::DanglingEndpoint { v, u, num_nodes } => {
                write!(f, "edge ({v},{u}) has an endpoint outside 0..{num_nodes}")
            }
            ParseErrorKind::SelfLoop(v) => write!(f, "self-loop on node {v}"),
            ParseErrorKind::MaskOverlap(v) => write!(f, "node {v} assigned to more than one mask"),
            ParseErrorKind::LabelOutOfRange { node, label, classes } => {
                write!(f, "label {label} of node {node} outside 0..{classes}")
            }
            ParseErrorKind::Duplicate { tag, node } => write!(f, "duplicate '{tag}' line for node {node}"),
            ParseErrorKind::Syntax(s) => write!(f, "{s}"),
            ParseErrorKind::UnexpectedEof => write!(f, "unexpected end of file"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected graph with node features, labels and a split per node.
///
/// The adjacency is stored symmetrically without self-loops; every edge in
/// `edges` appears as `(v, u)` with `v < u` exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    adjacency: CsrMatrix,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Labels,
    num_classes: usize,
    splits: Vec<Split>,
}

impl Graph {
    /// Validates and builds a graph. Edges may be given in either direction;
    /// they are symmetrized and deduplicated.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Labels,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "feature rows {} != num_nodes {num_nodes}",
                features.rows()
            )));
        }
        if labels.len() != num_nodes || splits.len() != num_nodes {
            return Err(GraphError::Invalid("labels and splits need one entry per node".into()));
        }
        match &labels {
            Labels::Single(ys) => {
                if let Some((v, &y)) = ys.iter().enumerate().find(|(_, &y)| y >= num_classes) {
                    return Err(GraphError::Invalid(format!("label {y} of node {v} outside 0..{num_classes}")));
                }
            }
            Labels::Multi(rows) => {
                if rows.iter().any(|r| r.len() != num_classes) {
                    return Err(GraphError::Invalid("multi-hot rows need num_classes flags".into()));
                }
            }
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::Invalid(format!("edge ({a},{b}) outside 0..{num_nodes}")));
            }
            if a == b {
                return Err(GraphError::Invalid(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut trip = Vec::with_capacity(canon.len() * 2);
        for &(v, u) in &canon {
            trip.push((v, u, 1.0));
            trip.push((u, v, 1.0));
        }
        let adjacency = CsrMatrix::from_triplets(num_nodes, num_nodes, &trip)?;
        Ok(Self {
            num_nodes,
            adjacency,
            edges: canon,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn degree(&self, v: usize) -> usize {
        let rp = self.adjacency.row_ptr();
        rp[v + 1] - rp[v]
    }

    /// Node ids in a split, ascending.
    pub fn mask(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Single-label targets, or an error for multi-label graphs.
    pub fn single_labels(&self) -> Result<&[usize], GraphError> {
        self.labels
            .as_single()
            .ok_or_else(|| GraphError::Invalid("training requires single-label targets".into()))
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.num_nodes;
        if perm.len() != n {
            return Err(GraphError::Invalid("permutation length".into()));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        if inverse.contains(&usize::MAX) {
            return Err(GraphError::Invalid("not a permutation".into()));
        }
        let edges: Vec<_> = self.edges.iter().map(|&(v, u)| (inverse[v], inverse[u])).collect();
        let features = self.features.select_rows(perm)?;
        let labels = match &self.labels {
            Labels::Single(y) => Labels::Single(perm.iter().map(|&o| y[o]).collect()),
            Labels::Multi(y) => Labels::Multi(perm.iter().map(|&o| y[o].clone()).collect()),
        };
        let splits = perm.iter().map(|&o| self.splits[o]).collect();
        Self::new(n, &edges, features, labels, self.num_classes, splits)
    }
}

/// Symmetric normalization with self-loops: `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn gcn_normalize(g: &Graph) -> CsrMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt()).collect();
    let adj = g.adjacency();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(adj.nnz() + n);
    let mut values = Vec::with_capacity(adj.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let mut diag_done = false;
        for (j, _) in adj.row(i) {
            if !diag_done && j > i {
                col_idx.push(i);
                values.push((inv_sqrt[i] * inv_sqrt[i]) as f32);
                diag_done = true;
            }
            col_idx.push(j);
            values.push((inv_sqrt[i] * inv_sqrt[j]) as f32);
        }
        if !diag_done {
            col_idx.push(i);
            values.push((inv_sqrt[i] * inv_sqrt[i]) as f32);
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix::new(n, n, row_ptr, col_idx, values).expect("normalized adjacency keeps CSR invariants")
}

/// A collection of graphs sharing feature dimension and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl GraphSet {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>, splits: Vec<Split>, num_classes: usize) -> Result<Self, GraphError> {
        if graphs.len() != labels.len() || graphs.len() != splits.len() {
            return Err(GraphError::Invalid("one label and split per graph".into()));
        }
        if let Some(first) = graphs.first() {
            let f = first.feature_dim();
            if graphs.iter().any(|g| g.feature_dim() != f) {
                return Err(GraphError::Invalid("graphs disagree on feature dimension".into()));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(GraphError::Invalid(format!("graph label {y} outside 0..{num_classes}")));
        }
        if graphs.iter().any(|g| g.num_nodes() == 0) {
            return Err(GraphError::Invalid("graphs must have at least one node".into()));
        }
        Ok(Self {
            graphs,
            labels,
            splits,
            num_classes,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn mask(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }
}
