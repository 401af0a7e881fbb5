//! Precomputed teacher knowledge and its binary file layout.
//!
//! Layout (little-endian): magic `AKD1`, then `u32` version, n_rows, d, C,
//! n_graphs; then embeddings (n_rows x d), logits, summaries
//! (n_graphs x d) as `f32`, then one `u32` start row per graph when
//! n_graphs > 1. Logits have n_rows rows for node-level knowledge and
//! n_graphs rows for graph-level knowledge.

use std::fs;
use std::path::Path;

use super::{node_forward_values, GinModel, ModelError, NodeModel};
use crate::graphio::{gcn_normalize, Graph, GraphSet};
use crate::numkit::DenseMatrix;

const MAGIC: &[u8; 4] = b"AKD1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnowledgeLevel {
    Node,
    Graph,
}

/// Frozen teacher outputs: node embeddings, logits and mean-pooled summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherKnowledge {
    level: KnowledgeLevel,
    embeddings: DenseMatrix,
    logits: DenseMatrix,
    summaries: DenseMatrix,
    offsets: Vec<usize>,
}

impl TeacherKnowledge {
    pub fn node_level(embeddings: DenseMatrix, logits: DenseMatrix) -> Result<Self, ModelError> {
        if embeddings.rows() != logits.rows() || embeddings.rows() == 0 {
            return Err(ModelError::Dim("embeddings and logits need the same non-zero row count".into()));
        }
        let summaries = embeddings.col_mean()?;
        Ok(Self {
            level: KnowledgeLevel::Node,
            embeddings,
            logits,
            summaries,
            offsets: vec![0],
        })
    }

    /// `offsets[i]` is the first embedding row of graph `i`.
    pub fn graph_level(
        embeddings: DenseMatrix,
        logits: DenseMatrix,
        summaries: DenseMatrix,
        offsets: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let g = offsets.len();
        if g == 0 || logits.rows() != g || summaries.rows() != g || summaries.cols() != embeddings.cols() {
            return Err(ModelError::Dim("graph-level knowledge needs one logit row and summary per graph".into()));
        }
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] >= w[1]) || offsets[g - 1] >= embeddings.rows() {
            return Err(ModelError::Dim("graph offsets must start at 0 and strictly increase".into()));
        }
        Ok(Self {
            level: KnowledgeLevel::Graph,
            embeddings,
            logits,
            summaries,
            offsets,
        })
    }

    pub fn level(&self) -> KnowledgeLevel {
        self.level
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    pub fn logits(&self) -> &DenseMatrix {
        &self.logits
    }

    pub fn summaries(&self) -> &DenseMatrix {
        &self.summaries
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len()
    }

    pub fn num_rows(&self) -> usize {
        self.embeddings.rows()
    }

    /// Embedding rows of graph `i`.
    pub fn graph_rows(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(i + 1).copied().unwrap_or(self.embeddings.rows());
        self.offsets[i]..end
    }

    pub fn graph_embeddings(&self, i: usize) -> DenseMatrix {
        let idx: Vec<usize> = self.graph_rows(i).collect();
        self.embeddings.select_rows(&idx).expect("offsets within embedding rows")
    }

    pub fn graph_summary(&self, i: usize) -> DenseMatrix {
        self.summaries.select_rows(&[i]).expect("graph index in range")
    }

    pub fn graph_logits(&self, i: usize) -> DenseMatrix {
        self.logits.select_rows(&[i]).expect("graph index in range")
    }
}

fn check_student_dim(teacher_dim: usize, student_dim: Option<usize>) -> Result<(), ModelError> {
    match student_dim {
        Some(d) if d != teacher_dim => Err(ModelError::Dim(format!(
            "teacher embedding dim {teacher_dim} differs from student dim {d}"
        ))),
        _ => Ok(()),
    }
}

/// Runs the teacher once without recording gradients.
pub fn precompute_knowledge(
    teacher: &dyn NodeModel,
    graph: &Graph,
    student_dim: Option<usize>,
) -> Result<TeacherKnowledge, ModelError> {
    check_student_dim(teacher.embed_dim(), student_dim)?;
    let adj = gcn_normalize(graph);
    let (h, z) = node_forward_values(teacher, &adj, graph.features())?;
    TeacherKnowledge::node_level(h, z)
}

/// Per-graph teacher outputs, stacked in graph order.
pub fn precompute_graph_knowledge(
    teacher: &GinModel,
    set: &GraphSet,
    student_dim: Option<usize>,
) -> Result<TeacherKnowledge, ModelError> {
    check_student_dim(teacher.embed_dim(), student_dim)?;
    let mut hs = Vec::with_capacity(set.len());
    let mut ss = Vec::with_capacity(set.len());
    let mut zs = Vec::with_capacity(set.len());
    let mut offsets = Vec::with_capacity(set.len());
    let mut row = 0;
    for g in set.graphs() {
        let (h, s, z) = teacher.forward_values(g)?;
        offsets.push(row);
        row += h.rows();
        hs.push(h);
        ss.push(s);
        zs.push(z);
    }
    let stack = |v: &[DenseMatrix]| DenseMatrix::vstack(&v.iter().collect::<Vec<_>>());
    TeacherKnowledge::graph_level(stack(&hs)?, stack(&zs)?, stack(&ss)?, offsets)
}

fn u32_of(n: usize, what: &str) -> Result<u32, ModelError> {
    u32::try_from(n).map_err(|_| ModelError::Format(format!("{what} {n} does not fit in u32")))
}

pub fn write_knowledge(k: &TeacherKnowledge) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        u32_of(k.num_rows(), "n_rows")?,
        u32_of(k.dim(), "d")?,
        u32_of(k.num_classes(), "C")?,
        u32_of(k.num_graphs(), "n_graphs")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in [&k.embeddings, &k.logits, &k.summaries] {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    if k.num_graphs() > 1 {
        for &o in &k.offsets {
            out.extend_from_slice(&u32_of(o, "offset")?.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix, ModelError> {
        let bytes = self.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| {
            ModelError::Format("matrix size overflows".into())
        })?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        DenseMatrix::from_vec(rows, cols, data).map_err(|e| ModelError::Format(e.to_string()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn read_knowledge(bytes: &[u8]) -> Result<TeacherKnowledge, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| ModelError::Version("file shorter than the magic".into()))?;
    if magic != MAGIC {
        return Err(ModelError::Version(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Version(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let g = r.u32()? as usize;
    if g == 0 || n == 0 {
        return Err(ModelError::Format("knowledge needs at least one row and one graph".into()));
    }
    let h = r.matrix(n, d)?;
    let graph_level = if g > 1 {
        true
    } else {
        let node_bytes = (n * c + d) * 4;
        let graph_bytes = (c + d) * 4;
        match r.remaining() {
            x if x == node_bytes => false,
            x if x == graph_bytes => true,
            _ => return Err(ModelError::Format("payload size matches neither node- nor graph-level layout".into())),
        }
    };
    let z = r.matrix(if graph_level { g } else { n }, c)?;
    let s = r.matrix(g, d)?;
    let offsets = if g > 1 {
        (0..g).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?
    } else {
        vec![0]
    };
    if r.remaining() != 0 {
        return Err(ModelError::Format(format!("{} trailing bytes", r.remaining())));
    }
    if graph_level {
        TeacherKnowledge::graph_level(h, z, s, offsets)
    } else {
        Ok(TeacherKnowledge {
            level: KnowledgeLevel::Node,
            embeddings: h,
            logits: z,
            summaries: s,
            offsets,
        })
    }
}

pub fn save_knowledge(k: &TeacherKnowledge, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, write_knowledge(k)?)?;
    Ok(())
}

pub fn load_knowledge(path: impl AsRef<Path>) -> Result<TeacherKnowledge, ModelError> {
    read_knowledge(&fs::read(path)?)
}
