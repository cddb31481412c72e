//! The weight-shared GCN encoder used by the main branch and every masked
//! path, and the GCN decoder that rebuilds attributes.
//!
//! A layer computes `act(Â · Z · W)`; there are no bias terms. The product is
//! evaluated as `Â · (Z · W)`, which is the same matrix and keeps the sparse
//! input features out of any dense product.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Result, SagaError};
use crate::sparse::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

/// Layer input: either a tape node, or a constant feature matrix (the
/// zero-filled attributes) applied as a linear operator.
#[derive(Clone)]
pub enum Input {
    Var(Var),
    Constant(Arc<dyn LinearOperator>),
}

impl From<Var> for Input {
    fn from(v: Var) -> Self {
        Input::Var(v)
    }
}

/// Stack of GCN layers with widths `dims[0] → dims[1] → … → dims[L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    weights: Vec<ParamId>,
    activations: Vec<Activation>,
    dims: Vec<usize>,
}

impl GcnStack {
    /// Registers zero-valued weights in `store`, named `{prefix}.{l}`; the
    /// caller initializes them. Hidden layers use ReLU, the last `last`.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], last: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(SagaError::InvalidConfig(format!(
                "GCN stack needs at least two positive widths, got {dims:?}"
            )));
        }
        let layers = dims.len() - 1;
        let weights = (0..layers)
            .map(|l| store.add(format!("{prefix}.{l}"), Array2::zeros((dims[l], dims[l + 1]))))
            .collect();
        let activations = (0..layers)
            .map(|l| if l + 1 == layers { last } else { Activation::Relu })
            .collect();
        Ok(Self {
            weights,
            activations,
            dims: dims.to_vec(),
        })
    }

    /// Wraps existing weight parameters.
    pub fn from_params(store: &ParamStore, weights: Vec<ParamId>, activations: Vec<Activation>) -> Result<Self> {
        if weights.is_empty() || weights.len() != activations.len() {
            return Err(SagaError::InvalidConfig(
                "one activation per layer required".into(),
            ));
        }
        let mut dims = vec![store.value(weights[0]).nrows()];
        for &w in &weights {
            let (r, c) = store.value(w).dim();
            if r != *dims.last().unwrap() {
                return Err(SagaError::shape(
                    "GcnStack",
                    format!("layer expects {r} inputs after width {}", dims.last().unwrap()),
                ));
            }
            dims.push(c);
        }
        Ok(Self {
            weights,
            activations,
            dims,
        })
    }

    /// A second stack with its own copies of the current weight values.
    pub fn duplicate(&self, store: &mut ParamStore, prefix: &str) -> Self {
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                let value = store.value(w).clone();
                store.add(format!("{prefix}.{l}"), value)
            })
            .collect();
        Self {
            weights,
            activations: self.activations.clone(),
            dims: self.dims.clone(),
        }
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Runs every layer with propagation matrix `adj`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adj: &Arc<dyn LinearOperator>,
        input: Input,
    ) -> Result<Var> {
        let in_dim = match &input {
            Input::Var(v) => tape.shape(*v).1,
            Input::Constant(op) => op.ncols(),
        };
        if in_dim != self.input_dim() {
            return Err(SagaError::shape(
                "gcn forward",
                format!("input width {in_dim}, first layer expects {}", self.input_dim()),
            ));
        }
        let mut z = input;
        for (&w, &act) in self.weights.iter().zip(&self.activations) {
            let wv = tape.param(store, w);
            let zw = match z {
                Input::Var(v) => tape.matmul(v, wv)?,
                Input::Constant(op) => tape.apply(op, wv)?,
            };
            let h = tape.apply(Arc::clone(adj), zw)?;
            z = Input::Var(match act {
                Activation::Relu => tape.relu(h),
                Activation::Linear => h,
            });
        }
        match z {
            Input::Var(v) => Ok(v),
            Input::Constant(_) => unreachable!("stack has at least one layer"),
        }
    }
}

/// Decoder weights, independent from the encoder's.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStack(pub GcnStack);

/// Latent `Z` for propagation matrix `adj` (`Ã` on the main branch).
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    adj: &Arc<dyn LinearOperator>,
    x0: Input,
    stack: &GcnStack,
) -> Result<Var> {
    stack.forward(tape, store, adj, x0)
}

/// One latent matrix per masked adjacency order, all through `stack`.
pub fn encode_paths(
    tape: &mut Tape,
    store: &ParamStore,
    masked: &[Arc<dyn LinearOperator>],
    x0: Input,
    stack: &GcnStack,
) -> Result<Vec<Var>> {
    if masked.is_empty() {
        return Err(SagaError::InvalidArgument(
            "path encoding needs at least one adjacency order".into(),
        ));
    }
    masked
        .iter()
        .map(|adj| stack.forward(tape, store, adj, x0.clone()))
        .collect()
}

/// Rebuilt attributes `X̂` from the fused latent.
pub fn decode(
    tape: &mut Tape,
    store: &ParamStore,
    adj: &Arc<dyn LinearOperator>,
    zf: Var,
    stack: &DecoderStack,
) -> Result<Var> {
    stack.0.forward(tape, store, adj, Input::Var(zf))
}
