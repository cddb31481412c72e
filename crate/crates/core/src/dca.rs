//! Dual correlation aggregating: refine the latent `Z` by aggregating over two
//! filtered cosine-similarity matrices, one plain KNN and one restricted to
//! each node's `P`-hop neighborhood.
//!
//! The filtered matrices are rebuilt from the current latent values and enter
//! the tape as constants; top-k selection has no useful derivative.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SagaError};
use crate::graph::OrderedAdjacencySet;
use crate::sparse::{CsrMatrix, LinearOperator};

/// Dense pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    s: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[[i, j]]
    }
}

/// `S_ij = z_i·z_j / (‖z_i‖‖z_j‖)`; rows and columns of all-zero latents are 0.
pub fn cosine_similarity(z: ArrayView2<'_, f64>) -> SimilarityMatrix {
    let norms: Vec<f64> = z.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut unit = z.to_owned();
    for (mut row, &n) in unit.outer_iter_mut().zip(&norms) {
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(0.0);
        }
    }
    let mut s = unit.dot(&unit.t());
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            s[[i, j]] = s[[j, i]];
        }
        s[[i, i]] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
    }
    s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    SimilarityMatrix { s }
}

/// Filtered similarity matrix: at most `k` kept entries per row, each equal
/// to the corresponding similarity value.
#[derive(Debug, Clone)]
pub struct RefinedIndicator {
    matrix: Arc<CsrMatrix>,
}

impl RefinedIndicator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn operator(&self) -> Arc<dyn LinearOperator> {
        self.matrix.clone()
    }

    /// Kept column indices of row `i`, ascending.
    pub fn kept(&self, i: usize) -> &[usize] {
        self.matrix.row(i).0
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.matrix.to_dense()
    }

    /// Each row divided by the sum of absolute kept values.
    pub fn row_normalized(&self) -> RefinedIndicator {
        let n = self.matrix.shape().0;
        let sums: Vec<f64> = (0..n)
            .map(|i| self.matrix.row(i).1.iter().map(|v| v.abs()).sum())
            .collect();
        let m = self
            .matrix
            .map_values(|i, _, v| if sums[i] > 0.0 { v / sums[i] } else { v });
        RefinedIndicator {
            matrix: Arc::new(m),
        }
    }
}

/// True when `(a, i)` ranks before `(b, j)`: larger value first, lower index
/// on ties.
fn ranks_before(a: f64, i: usize, b: f64, j: usize) -> bool {
    a > b || (a == b && i < j)
}

/// The `k` best `(index, value)` candidates, returned in ascending index
/// order. Keeps a sorted buffer of at most `k` entries, so a row costs
/// `O(n·k)` with no allocation beyond the buffer.
fn top_k(cands: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    for (j, v) in cands {
        if best.len() == k {
            let &(wj, wv) = best.last().expect("k >= 1");
            if !ranks_before(v, j, wv, wj) {
                continue;
            }
            best.pop();
        }
        let pos = best
            .iter()
            .position(|&(bj, bv)| ranks_before(v, j, bv, bj))
            .unwrap_or(best.len());
        best.insert(pos, (j, v));
    }
    best.sort_unstable_by_key(|&(j, _)| j);
    best
}

fn assemble(n: usize, rows: Vec<Vec<(usize, f64)>>) -> RefinedIndicator {
    let triplets = rows
        .into_iter()
        .enumerate()
        .flat_map(|(i, row)| row.into_iter().map(move |(j, v)| (i, j, v)));
    let matrix = CsrMatrix::from_triplets(n, n, triplets).expect("indices below n");
    RefinedIndicator {
        matrix: Arc::new(matrix),
    }
}

/// Keeps the `k` largest off-diagonal similarities of every row.
pub fn knn_filter(s: &SimilarityMatrix, k: usize) -> Result<RefinedIndicator> {
    let n = s.dim();
    if k == 0 || k >= n {
        return Err(SagaError::InvalidArgument(format!(
            "KNN filter needs 1 <= k < N, got k = {k}, N = {n}"
        )));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = s.s.row(i);
            top_k(row.iter().copied().enumerate().filter(|&(j, _)| j != i), k)
        })
        .collect();
    Ok(assemble(n, rows))
}

/// Per-node candidate sets: nodes reachable within orders `1..=p`, excluding
/// the node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralCandidates {
    sets: Vec<Vec<usize>>,
}

impl StructuralCandidates {
    pub fn new(powers: &OrderedAdjacencySet, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(SagaError::InvalidArgument(
                "structural order P must be at least 1".into(),
            ));
        }
        if p > powers.order() {
            return Err(SagaError::InvalidArgument(format!(
                "P = {p} exceeds the {} adjacency orders available",
                powers.order()
            )));
        }
        let n = powers.power(1).dim();
        let sets = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut mark = vec![false; n];
                for h in 1..=p {
                    for j in powers.power(h).row_support(i) {
                        mark[j] = true;
                    }
                }
                mark[i] = false;
                mark.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect()
            })
            .collect();
        Ok(Self { sets })
    }

    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// KNN over the similarities of each node's `P`-hop candidates only.
pub fn structure_constrained_filter(
    s: &SimilarityMatrix,
    powers: &OrderedAdjacencySet,
    p: usize,
    k: usize,
) -> Result<RefinedIndicator> {
    let cands = StructuralCandidates::new(powers, p)?;
    filter_with_candidates(s, &cands, k)
}

/// [`structure_constrained_filter`] with precomputed candidate sets.
pub fn filter_with_candidates(
    s: &SimilarityMatrix,
    cands: &StructuralCandidates,
    k: usize,
) -> Result<RefinedIndicator> {
    let n = s.dim();
    if k == 0 {
        return Err(SagaError::InvalidArgument("k must be at least 1".into()));
    }
    if cands.len() != n {
        return Err(SagaError::shape(
            "structure filter",
            format!("{} candidate sets for {n} nodes", cands.len()),
        ));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = s.s.row(i);
            top_k(cands.candidates(i).iter().map(|&j| (j, row[j])), k)
        })
        .collect();
    Ok(assemble(n, rows))
}

/// `Z_a = α·S^N·Z + (1 − α)·S'^N·Z` for a 1×1 node `alpha`.
pub fn dca_aggregate(
    tape: &mut Tape,
    z: Var,
    knn: &RefinedIndicator,
    structural: &RefinedIndicator,
    alpha: Var,
) -> Result<Var> {
    let a = tape.apply(knn.operator(), z)?;
    let b = tape.apply(structural.operator(), z)?;
    let one_minus = tape.affine(alpha, -1.0, 1.0);
    let a = tape.scale_by(alpha, a)?;
    let b = tape.scale_by(one_minus, b)?;
    tape.add(a, b)
}
