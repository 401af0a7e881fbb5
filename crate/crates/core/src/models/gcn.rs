use serde::{Deserialize, Serialize};

use super::{seeded_rng, Linear, ModelError, NodeModel, NodeOutput};
use crate::numkit::{Binding, CsrMatrix, ParamSet, Tape, Var};

/// Graph convolutional network: `H ← relu(Â H W + b)` per propagation layer,
/// followed by a linear classifier on the final embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    params: ParamSet,
    layers: Vec<Linear>,
    classifier: Linear,
    in_dim: usize,
    hidden: usize,
    classes: usize,
}

impl GcnModel {
    /// `layers` counts weight layers including the classifier, so a
    /// 2-layer GCN has one propagation layer `in_dim -> hidden` and a
    /// `hidden -> classes` classifier.
    pub fn new(in_dim: usize, hidden: usize, classes: usize, layers: usize, seed: u64) -> Result<Self, ModelError> {
        if layers < 2 || in_dim == 0 || hidden == 0 || classes == 0 {
            return Err(ModelError::Config("GCN needs >= 2 layers and positive widths".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let mut convs = Vec::with_capacity(layers - 1);
        let mut fan_in = in_dim;
        for k in 0..layers - 1 {
            convs.push(Linear::glorot(&mut params, &mut rng, &format!("conv{k}"), fan_in, hidden, true));
            fan_in = hidden;
        }
        let classifier = Linear::glorot(&mut params, &mut rng, "classifier", hidden, classes, true);
        Ok(Self {
            params,
            layers: convs,
            classifier,
            in_dim,
            hidden,
            classes,
        })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn classifier(&self) -> Linear {
        self.classifier
    }
}

impl NodeModel for GcnModel {
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
        let mut h = x;
        for layer in &self.layers {
            let xw = tape.matmul(h, bind[layer.weight])?;
            let mut agg = tape.spmm(adj, xw)?;
            if let Some(b) = layer.bias {
                agg = tape.add_row_bias(agg, bind[b])?;
            }
            h = tape.relu(agg)?;
        }
        let logits = self.classifier.apply(tape, bind, h)?;
        Ok(NodeOutput { embeddings: h, logits })
    }
}
