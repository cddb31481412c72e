//! Hierarchical structure reconstruction: attention over the per-order path
//! latents, fusion into `Z_s`, inner-product decoding of the adjacency and the
//! weighted reconstruction loss.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Result, SagaError};
use crate::graph::SparseGraph;

/// One `d×1` projection and one `1×1` bias per adjacency order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAttention {
    w: Vec<ParamId>,
    b: Vec<ParamId>,
}

impl PathAttention {
    /// Registers zero-valued parameters `{prefix}.w{h}` and `{prefix}.b{h}`.
    pub fn new(store: &mut ParamStore, prefix: &str, n_paths: usize, latent_dim: usize) -> Result<Self> {
        if n_paths == 0 || latent_dim == 0 {
            return Err(SagaError::InvalidConfig(
                "path attention needs at least one path and a positive width".into(),
            ));
        }
        let w = (0..n_paths)
            .map(|h| store.add(format!("{prefix}.w{h}"), Array2::zeros((latent_dim, 1))))
            .collect();
        let b = (0..n_paths)
            .map(|h| store.add(format!("{prefix}.b{h}"), Array2::zeros((1, 1))))
            .collect();
        Ok(Self { w, b })
    }

    pub fn n_paths(&self) -> usize {
        self.w.len()
    }

    pub fn projections(&self) -> &[ParamId] {
        &self.w
    }

    pub fn biases(&self) -> &[ParamId] {
        &self.b
    }
}

/// Row-wise softmax over the path logits `Z^h·W^h + b^h`; returns N×H.
pub fn path_attention(
    tape: &mut Tape,
    store: &ParamStore,
    paths: &[Var],
    att: &PathAttention,
) -> Result<Var> {
    if paths.len() != att.n_paths() {
        return Err(SagaError::shape(
            "path attention",
            format!("{} paths, {} attention heads", paths.len(), att.n_paths()),
        ));
    }
    let mut logits = Vec::with_capacity(paths.len());
    for (h, &z) in paths.iter().enumerate() {
        let w = tape.param(store, att.w[h]);
        let b = tape.param(store, att.b[h]);
        let e = tape.matmul(z, w)?;
        logits.push(tape.add_row_bias(e, b)?);
    }
    let stacked = tape.hstack(&logits)?;
    Ok(tape.row_softmax(stacked))
}

/// `Z_s = Σ_h a^h ⊙ Z^h`, each node's path weight broadcast across its row.
pub fn fuse_paths(tape: &mut Tape, paths: &[Var], attention: Var) -> Result<Var> {
    let (_, h) = tape.shape(attention);
    if h != paths.len() || paths.is_empty() {
        return Err(SagaError::shape(
            "fuse paths",
            format!("{} paths, attention has {h} columns", paths.len()),
        ));
    }
    let mut acc: Option<Var> = None;
    for (k, &z) in paths.iter().enumerate() {
        let a = tape.select_col(attention, k)?;
        let term = tape.scale_rows(z, a)?;
        acc = Some(match acc {
            None => term,
            Some(s) => tape.add(s, term)?,
        });
    }
    Ok(acc.expect("at least one path"))
}

/// `Â = sigmoid(Z_s·Z_sᵀ)`.
pub fn decode_adjacency(tape: &mut Tape, zs: Var) -> Var {
    let g = tape.gram(zs);
    tape.sigmoid(g)
}

/// Pair weights for the reconstruction loss: `gamma` where both endpoints are
/// attribute-missing, 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightMatrix {
    observed: Vec<bool>,
    gamma: f64,
}

impl EdgeWeightMatrix {
    pub fn new(observed: Vec<bool>, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(SagaError::InvalidConfig(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        Ok(Self { observed, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if !self.observed[i] && !self.observed[j] {
            self.gamma
        } else {
            1.0
        }
    }

    /// Dense N×N weights; the diagonal is zeroed when `include_diagonal` is off.
    pub fn to_dense(&self, include_diagonal: bool) -> Array2<f64> {
        let n = self.observed.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j && !include_diagonal {
                0.0
            } else {
                self.weight(i, j)
            }
        })
    }
}

/// Reconstruction target: the binary adjacency with self-pairs set to 1.
pub fn structure_target(graph: &SparseGraph) -> Array2<f64> {
    let n = graph.n_nodes();
    let mut t = Array2::zeros((n, n));
    for &(i, j) in graph.edges() {
        t[[i, j]] = 1.0;
        t[[j, i]] = 1.0;
    }
    for i in 0..n {
        t[[i, i]] = 1.0;
    }
    t
}

/// `L_s = (1/N²) Σ w_ij · BCE(Â_ij, A_ij)`.
pub fn structure_loss(
    tape: &mut Tape,
    a_hat: Var,
    target: Arc<Array2<f64>>,
    weights: Arc<Array2<f64>>,
) -> Result<Var> {
    tape.bce_loss_weighted(a_hat, target, weights)
}

/// A uniform sample of node pairs with their targets and weights, for an
/// unbiased estimate of [`structure_loss`] without the N×N decode.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub pairs: Arc<Vec<(usize, usize)>>,
    pub target: Arc<Array2<f64>>,
    pub weight: Arc<Array2<f64>>,
}

/// Draws `count` distinct ordered pairs (self-pairs included) uniformly.
pub fn sample_pairs<R: Rng>(
    graph: &SparseGraph,
    weights: &EdgeWeightMatrix,
    include_diagonal: bool,
    count: usize,
    rng: &mut R,
) -> Result<PairSample> {
    let n = graph.n_nodes();
    let total = n * n;
    if count == 0 || count > total {
        return Err(SagaError::InvalidArgument(format!(
            "pair sample size {count} outside 1..={total}"
        )));
    }
    let pairs: Vec<(usize, usize)> = sample(rng, total, count)
        .into_iter()
        .map(|p| (p / n, p % n))
        .collect();
    let target = Array2::from_shape_fn((count, 1), |(p, _)| {
        let (i, j) = pairs[p];
        if i == j || graph.has_edge(i, j) {
            1.0
        } else {
            0.0
        }
    });
    let weight = Array2::from_shape_fn((count, 1), |(p, _)| {
        let (i, j) = pairs[p];
        if i == j && !include_diagonal {
            0.0
        } else {
            weights.weight(i, j)
        }
    });
    Ok(PairSample {
        pairs: Arc::new(pairs),
        target: Arc::new(target),
        weight: Arc::new(weight),
    })
}

/// Sampled estimate of the reconstruction loss from the fused latent `zs`.
pub fn structure_loss_sampled(tape: &mut Tape, zs: Var, sample: &PairSample) -> Result<Var> {
    let dots = tape.pair_dots(zs, Arc::clone(&sample.pairs))?;
    let probs = tape.sigmoid(dots);
    tape.bce_loss_weighted(probs, Arc::clone(&sample.target), Arc::clone(&sample.weight))
}
