use serde::{Deserialize, Serialize};

use super::{glorot_uniform, seeded_rng, Linear, ModelError, NodeModel, NodeOutput};
use crate::numkit::{Binding, CsrMatrix, ParamId, ParamSet, Tape, Var};

/// Deep GCN with initial residual and identity mapping.
///
/// `H⁰ = relu(X W_in + b_in)`, then for `l = 1..=L`:
/// `H^l = relu(((1-α) Â H^{l-1} + α H⁰) ((1-β_l) I + β_l W_l))` with
/// `β_l = ln(λ / l + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcniiModel {
    params: ParamSet,
    input: Linear,
    layers: Vec<ParamId>,
    classifier: Linear,
    alpha: f32,
    lambda: f32,
    in_dim: usize,
    hidden: usize,
    classes: usize,
}

impl GcniiModel {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        classes: usize,
        depth: usize,
        alpha: f32,
        lambda: f32,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if depth < 2 {
            return Err(ModelError::Config("GCNII needs at least 2 propagation layers".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ModelError::Config(format!("alpha {alpha} outside (0, 1)")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) || in_dim == 0 || hidden == 0 || classes == 0 {
            return Err(ModelError::Config("lambda and widths must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let input = Linear::glorot(&mut params, &mut rng, "input", in_dim, hidden, true);
        let layers = (0..depth)
            .map(|l| params.add(format!("conv{l}.weight"), glorot_uniform(&mut rng, hidden, hidden)))
            .collect();
        let classifier = Linear::glorot(&mut params, &mut rng, "classifier", hidden, classes, true);
        Ok(Self {
            params,
            input,
            layers,
            classifier,
            alpha,
            lambda,
            in_dim,
            hidden,
            classes,
        })
    }

    /// Defaults for the desk teacher: `α = 0.1`, `λ = 0.5`, 8 layers.
    pub fn desk_teacher(in_dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self, ModelError> {
        Self::new(in_dim, hidden, classes, 8, 0.1, 0.5, seed)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f32) {
        self.alpha = alpha;
    }

    pub fn input(&self) -> Linear {
        self.input
    }

    pub fn layer_weights(&self) -> &[ParamId] {
        &self.layers
    }

    pub fn classifier(&self) -> Linear {
        self.classifier
    }

    /// Identity-mapping strength of layer `l` (1-based).
    pub fn beta(&self, l: usize) -> f32 {
        ((self.lambda as f64 / l as f64) + 1.0).ln() as f32
    }
}

impl NodeModel for GcniiModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn embed_dim(&self) -> usize {
        self.hidden
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn forward<'a>(&self, tape: &mut Tape<'a>, bind: &Binding, adj: &'a CsrMatrix, x: Var) -> Result<NodeOutput, ModelError> {
        super::check_input(self.in_dim, adj, tape.value(x))?;
        let proj = self.input.apply(tape, bind, x)?;
        let h0 = tape.relu(proj)?;
        let initial = tape.scale(h0, self.alpha)?;
        let mut h = h0;
        for (k, &w) in self.layers.iter().enumerate() {
            let beta = self.beta(k + 1);
            let agg = tape.spmm(adj, h)?;
            let agg = tape.scale(agg, 1.0 - self.alpha)?;
            let support = tape.add(agg, initial)?;
            let mapped = tape.matmul(support, bind[w])?;
            let mapped = tape.scale(mapped, beta)?;
            let kept = tape.scale(support, 1.0 - beta)?;
            let pre = tape.add(kept, mapped)?;
            h = tape.relu(pre)?;
        }
        let logits = self.classifier.apply(tape, bind, h)?;
        Ok(NodeOutput { embeddings: h, logits })
    }
}
