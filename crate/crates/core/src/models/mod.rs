//! Student and teacher GNNs, readout, prediction, and teacher knowledge.

mod gcn;
mod gcnii;
mod gin;
mod knowledge;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphio::GraphError;
use crate::numkit::{softmax_rows, Binding, CsrMatrix, DenseMatrix, NumError, ParamId, ParamSet, Tape, Var};

pub use gcn::GcnModel;
pub use gcnii::GcniiModel;
pub use gin::GinModel;
pub use knowledge::{
    load_knowledge, precompute_graph_knowledge, precompute_knowledge, read_knowledge, save_knowledge, write_knowledge,
    KnowledgeLevel, TeacherKnowledge,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("bad model configuration: {0}")]
    Config(String),
    #[error("knowledge file version: {0}")]
    Version(String),
    #[error("knowledge file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense layer `x W + b` with parameters stored in the owning model's [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn glorot(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), glorot_uniform(rng, fan_in, fan_out));
        let bias = bias.then(|| params.add(format!("{name}.bias"), DenseMatrix::zeros(1, fan_out)));
        Self { weight, bias }
    }

    pub(crate) fn apply(&self, tape: &mut Tape<'_>, bind: &Binding, x: Var) -> Result<Var, NumError> {
        let y = tape.matmul(x, bind[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row_bias(y, bind[b]),
            None => Ok(y),
        }
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform weights, limit `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
}

/// Embeddings and logits of a node-level forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NodeOutput {
    pub embeddings: Var,
    pub logits: Var,
}

/// Node embeddings, mean-pooled summary and graph logits of one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    pub embeddings: Var,
    pub summary: Var,
    pub logits: Var,
}

/// Models that embed and classify the nodes of one graph.
pub trait NodeModel {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn in_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// `adj` is the normalized adjacency, `x` the `num_nodes x in_dim` features.
    fn forward<'a>(&self, tape: &mut Tape<'a>, bind: &Binding, adj: &'a CsrMatrix, x: Var) -> Result<NodeOutput, ModelError>;
}

/// Fixed-parameter forward pass returning `(H, Z)`.
pub fn node_forward_values(
    model: &dyn NodeModel,
    adj: &CsrMatrix,
    features: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix), ModelError> {
    check_input(model.in_dim(), adj, features)?;
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let out = model.forward(&mut tape, &bind, adj, x)?;
    Ok((tape.value(out.embeddings).clone(), tape.value(out.logits).clone()))
}

pub(crate) fn check_input(in_dim: usize, adj: &CsrMatrix, x: &DenseMatrix) -> Result<(), ModelError> {
    if adj.n_rows() != adj.n_cols() || adj.n_rows() != x.rows() {
        return Err(ModelError::Dim(format!(
            "adjacency {}x{} vs {} feature rows",
            adj.n_rows(),
            adj.n_cols(),
            x.rows()
        )));
    }
    if x.cols() != in_dim {
        return Err(ModelError::Dim(format!("model expects {in_dim} features, got {}", x.cols())));
    }
    Ok(())
}

/// Column-wise mean of the node embeddings.
pub fn readout_mean(h: &DenseMatrix) -> Result<DenseMatrix, ModelError> {
    Ok(h.col_mean()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: DenseMatrix,
    pub labels: Vec<usize>,
}

/// Softmax probabilities and argmax labels (lowest index wins ties).
pub fn predict(logits: &DenseMatrix) -> Prediction {
    Prediction {
        probabilities: softmax_rows(logits),
        labels: logits.argmax_rows(),
    }
}

/// Total scalar parameter count including biases.
pub fn count_params(params: &ParamSet) -> usize {
    params.scalar_count()
}

/// Any saved model, tagged by architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum AnyModel {
    Gcn(GcnModel),
    Gcnii(GcniiModel),
    Gin(GinModel),
}

impl AnyModel {
    pub fn arch(&self) -> &'static str {
        match self {
            AnyModel::Gcn(_) => "gcn",
            AnyModel::Gcnii(_) => "gcnii",
            AnyModel::Gin(_) => "gin",
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            AnyModel::Gcn(m) => m.params(),
            AnyModel::Gcnii(m) => m.params(),
            AnyModel::Gin(m) => m.params(),
        }
    }

    pub fn as_node_model(&self) -> Option<&dyn NodeModel> {
        match self {
            AnyModel::Gcn(m) => Some(m),
            AnyModel::Gcnii(m) => Some(m),
            AnyModel::Gin(_) => None,
        }
    }

    pub fn as_gin(&self) -> Option<&GinModel> {
        match self {
            AnyModel::Gin(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
