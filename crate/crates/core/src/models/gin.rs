use serde::{Deserialize, Serialize};

use super::{seeded_rng, GraphOutput, Linear, ModelError};
use crate::graphio::Graph;
use crate::numkit::{Binding, CsrMatrix, DenseMatrix, ParamId, ParamSet, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub eps: ParamId,
    pub hidden: Linear,
    pub out: Linear,
}

/// Graph isomorphism network for graph classification.
///
/// Each layer computes `h_v ← relu(MLP((1 + ε) h_v + Σ_{u ∈ N(v)} h_u))` on
/// the raw adjacency. Graph logits come from the sum-pooled final
/// embeddings, the discriminator summary from their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinModel {
    params: ParamSet,
    layers: Vec<GinLayer>,
    classifier: Linear,
    in_dim: usize,
    hidden: usize,
    classes: usize,
}

impl GinModel {
    pub fn new(in_dim: usize, hidden: usize, classes: usize, layers: usize, seed: u64) -> Result<Self, ModelError> {
        if layers == 0 || in_dim == 0 || hidden == 0 || classes == 0 {
            return Err(ModelError::Config("GIN needs >= 1 layer and positive widths".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let mut fan_in = in_dim;
        let mut gin_layers = Vec::with_capacity(layers);
        for k in 0..layers {
            let eps = params.add(format!("gin{k}.eps"), DenseMatrix::zeros(1, 1));
            let hidden_lin = Linear::glorot(&mut params, &mut rng, &format!("gin{k}.mlp0"), fan_in, hidden, true);
            let out = Linear::glorot(&mut params, &mut rng, &format!("gin{k}.mlp1"), hidden, hidden, true);
            gin_layers.push(GinLayer { eps, hidden: hidden_lin, out });
            fan_in = hidden;
        }
        let classifier = Linear::glorot(&mut params, &mut rng, "classifier", hidden, classes, true);
        Ok(Self {
            params,
            layers: gin_layers,
            classifier,
            in_dim,
            hidden,
            classes,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layers(&self) -> &[GinLayer] {
        &self.layers
    }

    pub fn classifier(&self) -> Linear {
        self.classifier
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// `adj` is the raw symmetric adjacency (no self-loops, unit weights).
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, bind: &Binding, adj: &'a CsrMatrix, x: Var) -> Result<GraphOutput, ModelError> {
        super::check_input(self.in_dim, adj, tape.value(x))?;
        if tape.value(x).rows() == 0 {
            return Err(ModelError::Dim("GIN forward on an empty graph".into()));
        }
        let mut h = x;
        for layer in &self.layers {
            let neigh = tape.spmm(adj, h)?;
            let scaled = tape.scale_by(h, bind[layer.eps])?;
            let own = tape.add(h, scaled)?;
            let combined = tape.add(own, neigh)?;
            let hid = layer.hidden.apply(tape, bind, combined)?;
            let hid = tape.relu(hid)?;
            let out = layer.out.apply(tape, bind, hid)?;
            h = tape.relu(out)?;
        }
        let summary = tape.col_mean(h)?;
        let pooled = tape.col_sum(h)?;
        let logits = self.classifier.apply(tape, bind, pooled)?;
        Ok(GraphOutput {
            embeddings: h,
            summary,
            logits,
        })
    }

    /// Fixed-parameter pass returning `(H, s, z)` for one graph.
    pub fn forward_values(&self, g: &Graph) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix), ModelError> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let x = tape.constant(g.features().clone());
        let out = self.forward(&mut tape, &bind, g.adjacency(), x)?;
        Ok((
            tape.value(out.embeddings).clone(),
            tape.value(out.summary).clone(),
            tape.value(out.logits).clone(),
        ))
    }
}
