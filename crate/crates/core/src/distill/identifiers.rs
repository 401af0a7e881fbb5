use rand::Rng;

use super::DistillError;
use crate::models::{seeded_rng, Linear};
use crate::numkit::{Binding, DenseMatrix, ParamId, ParamSet, Tape, Var};

/// Topology-aware representation identifier: two learnable diagonal
/// bilinear forms, one scoring node pairs across an edge and one scoring a
/// node against a graph summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RepIdentifier {
    params: ParamSet,
    local: ParamId,
    global: ParamId,
}

impl RepIdentifier {
    /// Both diagonals start as all-ones.
    pub fn new(dim: usize) -> Result<Self, DistillError> {
        if dim == 0 {
            return Err(DistillError::Config("representation identifier needs a positive dimension".into()));
        }
        let mut params = ParamSet::new();
        let local = params.add("w_local", DenseMatrix::filled(1, dim, 1.0));
        let global = params.add("w_global", DenseMatrix::filled(1, dim, 1.0));
        Ok(Self { params, local, global })
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.local).cols()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn local_id(&self) -> ParamId {
        self.local
    }

    pub fn global_id(&self) -> ParamId {
        self.global
    }

    pub fn w_local(&self) -> &DenseMatrix {
        self.params.get(self.local)
    }

    pub fn w_global(&self) -> &DenseMatrix {
        self.params.get(self.global)
    }

    pub fn set_weights(&mut self, w_local: DenseMatrix, w_global: DenseMatrix) -> Result<(), DistillError> {
        let want = (1, self.dim());
        if w_local.shape() != want || w_global.shape() != want {
            return Err(DistillError::Dim(format!("identifier weights must be {want:?}")));
        }
        *self.params.get_mut(self.local) = w_local;
        *self.params.get_mut(self.global) = w_global;
        Ok(())
    }
}

/// Residual MLP over logits with a `C + 1` head: the first `C` outputs are
/// class logits and the last is the Real/Fake logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitIdentifier {
    params: ParamSet,
    blocks: Vec<Linear>,
    head: Linear,
    classes: usize,
}

impl LogitIdentifier {
    /// Every weight and bias is drawn uniformly from `[-1/sqrt(C), 1/sqrt(C)]`.
    pub fn new(classes: usize, n_blocks: usize, seed: u64) -> Result<Self, DistillError> {
        if classes == 0 {
            return Err(DistillError::Config("logit identifier needs at least one class".into()));
        }
        let bound = 1.0 / (classes as f32).sqrt();
        let mut rng = seeded_rng(seed);
        let mut draw = |r: usize, c: usize| DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-bound..=bound));
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(n_blocks);
        for i in 0..n_blocks {
            let weight = params.add(format!("block{i}.weight"), draw(classes, classes));
            let bias = params.add(format!("block{i}.bias"), draw(1, classes));
            blocks.push(Linear {
                weight,
                bias: Some(bias),
            });
        }
        let weight = params.add("head.weight", draw(classes, classes + 1));
        let bias = params.add("head.bias", draw(1, classes + 1));
        Ok(Self {
            params,
            blocks,
            head: Linear {
                weight,
                bias: Some(bias),
            },
            classes,
        })
    }

    /// Same layout with every entry zero.
    pub fn zeros(classes: usize, n_blocks: usize) -> Result<Self, DistillError> {
        let mut ident = Self::new(classes, n_blocks, 0)?;
        for v in ident.params.values_mut() {
            *v = DenseMatrix::zeros(v.rows(), v.cols());
        }
        Ok(ident)
    }

    /// Uniform init bound `1/sqrt(C)`.
    pub fn init_bound(&self) -> f32 {
        1.0 / (self.classes as f32).sqrt()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn blocks(&self) -> &[Linear] {
        &self.blocks
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Returns `(class_logits n x C, rf_logit n x 1)`.
    pub fn forward(&self, tape: &mut Tape<'_>, bind: &Binding, z: Var) -> Result<(Var, Var), DistillError> {
        let c = self.classes;
        if tape.value(z).cols() != c {
            return Err(DistillError::Dim(format!(
                "logit identifier expects {c} columns, got {}",
                tape.value(z).cols()
            )));
        }
        let mut h = z;
        for block in &self.blocks {
            let inner = block.apply(tape, bind, h)?;
            let inner = tape.relu(inner)?;
            h = tape.add(h, inner)?;
        }
        let out = self.head.apply(tape, bind, h)?;
        let class_logits = tape.slice_cols(out, 0, c)?;
        let rf = tape.slice_cols(out, c, c + 1)?;
        Ok((class_logits, rf))
    }
}

/// Pre-sigmoid score `<a, diag(w) b>` for one pair of vectors.
pub fn diag_bilinear(a: &[f32], w: &[f32], b: &[f32]) -> Result<f32, DistillError> {
    if a.len() != w.len() || b.len() != w.len() {
        return Err(DistillError::Dim(format!(
            "bilinear operands of length {}, {} and {}",
            a.len(),
            w.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(w)
        .zip(b)
        .map(|((&x, &w), &y)| x as f64 * w as f64 * y as f64)
        .sum::<f64>() as f32)
}

/// Affinity in `[0, 1]` between the representations of two connected nodes.
pub fn de_local_prob(h_a: &[f32], w_local: &[f32], h_b: &[f32]) -> Result<f32, DistillError> {
    Ok(crate::numkit::sigmoid(diag_bilinear(h_a, w_local, h_b)?))
}

/// Affinity in `[0, 1]` between a node representation and a graph summary.
pub fn de_global_prob(h: &[f32], w_global: &[f32], s: &[f32]) -> Result<f32, DistillError> {
    Ok(crate::numkit::sigmoid(diag_bilinear(h, w_global, s)?))
}

/// Fixed-parameter pass of the logit identifier.
pub fn dl_forward(z: &DenseMatrix, ident: &LogitIdentifier) -> Result<(DenseMatrix, DenseMatrix), DistillError> {
    let mut tape = Tape::new();
    let bind = ident.params().bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let (cls, rf) = ident.forward(&mut tape, &bind, zv)?;
    Ok((tape.value(cls).clone(), tape.value(rf).clone()))
}
