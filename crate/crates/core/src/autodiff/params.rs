use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SagaError};

/// Handle to a [`Parameter`] inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable matrix and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    name: String,
    value: Array2<f64>,
    grad: Array2<f64>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    pub fn grad(&self) -> &Array2<f64> {
        &self.grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }
}

/// Owns every trainable parameter of a model. Each parameter appears once, so
/// it gets exactly one optimizer state entry however many forward paths use it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

#[derive(Serialize, Deserialize)]
struct SavedParameter {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.dim());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Scalar value of a 1×1 parameter.
    pub fn scalar(&self, id: ParamId) -> f64 {
        self.params[id.0].value[[0, 0]]
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Array2<f64>) {
        self.params[id.0].grad += g;
    }

    /// Mutable access to value and gradient together, for optimizers.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Array2<f64>, &Array2<f64>) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad)
    }

    pub fn to_json(&self) -> Result<String> {
        let saved: Vec<SavedParameter> = self
            .params
            .iter()
            .map(|p| SavedParameter {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
                values: p.value.iter().copied().collect(),
            })
            .collect();
        Ok(serde_json::to_string(&saved)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: Vec<SavedParameter> = serde_json::from_str(text)?;
        let mut store = ParamStore::new();
        for p in saved {
            let value = Array2::from_shape_vec((p.rows, p.cols), p.values).map_err(|e| {
                SagaError::InvalidArgument(format!("parameter {}: {e}", p.name))
            })?;
            store.add(p.name, value);
        }
        Ok(store)
    }
}
