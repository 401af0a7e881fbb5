use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, GraphError, GraphSet, Labels, Split};
use crate::numkit::DenseMatrix;

/// Stochastic block model recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Train and validation fractions per block; the rest is test.
    pub split: (f64, f64),
}

impl SbmParams {
    pub fn new(block_sizes: Vec<usize>, p_in: f64, p_out: f64, feature_dim: usize, noise: f64, seed: u64) -> Self {
        Self {
            block_sizes,
            p_in,
            p_out,
            feature_dim,
            noise,
            seed,
            split: (0.6, 0.2),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::Invalid(m.to_string()));
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return bad("every block needs at least one node");
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return bad("need 0 <= p_out < p_in <= 1");
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise scale must be a finite non-negative number");
        }
        let (tr, va) = self.split;
        if !(tr >= 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        Ok(())
    }
}

fn noise_dist(scale: f64) -> Normal<f64> {
    Normal::new(0.0, scale).expect("validated noise scale")
}

/// Seeded SBM graph. Features are a one-hot block centroid plus Gaussian
/// noise, labels are block ids, and masks are stratified per block.
pub fn sbm_generate(p: &SbmParams) -> Result<Graph, GraphError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let block_of: Vec<usize> = p
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect();
    let n = block_of.len();

    let mut edges = Vec::new();
    for v in 0..n {
        for u in v + 1..n {
            let prob = if block_of[v] == block_of[u] { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((v, u));
            }
        }
    }

    let dist = noise_dist(p.noise);
    let f = p.feature_dim;
    let mut feats = Vec::with_capacity(n * f);
    for &b in &block_of {
        for j in 0..f {
            let centroid = if j == b % f { 1.0 } else { 0.0 };
            feats.push((centroid + dist.sample(&mut rng)) as f32);
        }
    }

    let mut splits = vec![Split::None; n];
    let mut start = 0;
    for &size in &p.block_sizes {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let n_train = (p.split.0 * size as f64).round() as usize;
        let n_val = ((p.split.1 * size as f64).round() as usize).min(size - n_train.min(size));
        for (k, &v) in members.iter().enumerate() {
            splits[v] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        start += size;
    }

    let features = DenseMatrix::from_vec(n, f, feats)?;
    Graph::new(n, &edges, features, Labels::Single(block_of), p.block_sizes.len(), splits)
}

/// Two-class synthetic graph classification recipe: class 0 graphs are
/// dense random graphs ("clique-like"), class 1 graphs are a spanning path
/// with sparse random shortcuts ("path-like").
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSetParams {
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub dense_p: f64,
    pub shortcut_p: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub split: (f64, f64),
}

impl Default for GraphSetParams {
    fn default() -> Self {
        Self {
            num_graphs: 200,
            min_nodes: 6,
            max_nodes: 16,
            dense_p: 0.5,
            shortcut_p: 0.1,
            feature_dim: 8,
            noise: 1.0,
            seed: 0,
            split: (0.6, 0.2),
        }
    }
}

pub fn graphset_generate(p: &GraphSetParams) -> Result<GraphSet, GraphError> {
    if p.num_graphs == 0 || p.min_nodes < 2 || p.max_nodes < p.min_nodes || p.feature_dim == 0 {
        return Err(GraphError::Invalid("graphset recipe needs graphs, >= 2 nodes each, and features".into()));
    }
    for prob in [p.dense_p, p.shortcut_p] {
        if !(0.0..=1.0).contains(&prob) {
            return Err(GraphError::Invalid("edge probabilities must lie in [0, 1]".into()));
        }
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(GraphError::Invalid("noise scale must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let dist = noise_dist(p.noise);
    let mut graphs = Vec::with_capacity(p.num_graphs);
    let mut labels = Vec::with_capacity(p.num_graphs);
    for i in 0..p.num_graphs {
        let class = i % 2;
        let n = rng.random_range(p.min_nodes..=p.max_nodes);
        let mut edges = Vec::new();
        for v in 0..n {
            for u in v + 1..n {
                let on_path = u == v + 1;
                let keep = match class {
                    0 => rng.random_bool(p.dense_p),
                    _ => on_path || rng.random_bool(p.shortcut_p),
                };
                if keep {
                    edges.push((v, u));
                }
            }
        }
        let f = p.feature_dim;
        let feats: Vec<f32> = (0..n * f)
            .map(|k| {
                let base = if k % f == 0 { 1.0 } else { 0.0 };
                (base + dist.sample(&mut rng)) as f32
            })
            .collect();
        let features = DenseMatrix::from_vec(n, f, feats)?;
        graphs.push(Graph::new(n, &edges, features, Labels::Single(vec![0; n]), 2, vec![Split::None; n])?);
        labels.push(class);
    }

    let mut splits = vec![Split::None; p.num_graphs];
    for class in 0..2 {
        let mut members: Vec<usize> = (0..p.num_graphs).filter(|i| i % 2 == class).collect();
        members.shuffle(&mut rng);
        let size = members.len();
        let n_train = (p.split.0 * size as f64).round() as usize;
        let n_val = (p.split.1 * size as f64).round() as usize;
        for (k, &g) in members.iter().enumerate() {
            splits[g] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    GraphSet::new(graphs, labels, splits, 2)
}
