use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::{DenseMatrix, Gradients, NumError, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors that outlive any single tape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.values
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    /// Puts every tensor on `tape`, differentiable when `trainable`.
    pub fn bind<'a>(&self, tape: &mut Tape<'a>, trainable: bool) -> Binding {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Binding { vars }
    }
}

/// Tape handles for a [`ParamSet`], aligned by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Gradients for every bound tensor in parameter order, zeros where absent.
    pub fn gradients(&self, grads: &Gradients) -> Vec<DenseMatrix> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

pub(crate) fn check_aligned(params: &ParamSet, grads: &[DenseMatrix]) -> Result<(), NumError> {
    if params.len() != grads.len() {
        return Err(NumError::dim("adam_step", (params.len(), 1), (grads.len(), 1)));
    }
    for (p, g) in params.values().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NumError::dim("adam_step", p.shape(), g.shape()));
        }
    }
    Ok(())
}
