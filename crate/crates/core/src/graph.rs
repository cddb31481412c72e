//! Graph and attribute containers, adjacency normalization, multi-order
//! adjacency powers and the edge masking between attribute-missing nodes.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use crate::error::{Result, SagaError};
use crate::sparse::{AdjacencyMatrix, CsrMatrix};

/// Fill ratio above which an adjacency power is stored dense.
pub const DEFAULT_DENSE_FILL_RATIO: f64 = 0.25;

/// Immutable undirected, unweighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n_nodes: usize,
    /// Canonical pairs with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    /// Symmetric binary adjacency without self-loops.
    adjacency: CsrMatrix,
}

/// What [`SparseGraph::from_edges_lossy`] discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl SparseGraph {
    /// Strict constructor: rejects self-loops, duplicate pairs (in either
    /// orientation) and out-of-range indices.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let (graph, cleanup) = Self::from_edges_lossy(n_nodes, edges)?;
        if cleanup.self_loops > 0 {
            return Err(SagaError::InvalidGraph(format!(
                "{} self-loop(s) in edge list",
                cleanup.self_loops
            )));
        }
        if cleanup.duplicates > 0 {
            return Err(SagaError::InvalidGraph(format!(
                "{} duplicate edge(s) in edge list",
                cleanup.duplicates
            )));
        }
        Ok(graph)
    }

    /// Drops self-loops and repeated pairs instead of failing on them.
    /// Out-of-range indices are still an error.
    pub fn from_edges_lossy(n_nodes: usize, edges: &[(usize, usize)]) -> Result<(Self, EdgeCleanup)> {
        let mut cleanup = EdgeCleanup::default();
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(SagaError::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside [0, {n_nodes})"
                )));
            }
            if a == b {
                cleanup.self_loops += 1;
                continue;
            }
            if !set.insert((a.min(b), a.max(b))) {
                cleanup.duplicates += 1;
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let adjacency = CsrMatrix::from_triplets(
            n_nodes,
            n_nodes,
            edges
                .iter()
                .flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]),
        )?;
        Ok((
            Self {
                n_nodes,
                edges,
                adjacency,
            },
            cleanup,
        ))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Binary adjacency `A` (no self-loops).
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Node relabeling: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::new(self.n_nodes, &edges)
    }
}

/// `D̂^{-1/2}(A + I)D̂^{-1/2}`, always sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape().0
    }
}

/// Symmetric renormalization with self-loops. An isolated node keeps a unit
/// self-loop.
pub fn normalize_adjacency(g: &SparseGraph) -> NormalizedAdjacency {
    let n = g.n_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(n + 2 * g.n_edges());
    for i in 0..n {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    for &(i, j) in g.edges() {
        // same expression in both orientations keeps the matrix bitwise symmetric
        let w = inv_sqrt[i] * inv_sqrt[j];
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    let matrix = CsrMatrix::from_triplets(n, n, triplets).expect("indices validated by graph");
    NormalizedAdjacency { matrix }
}

/// `[A^1, …, A^H]` with `A^h = A^1 · A^{h-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedAdjacencySet {
    matrices: Vec<AdjacencyMatrix>,
}

impl OrderedAdjacencySet {
    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    /// `A^h` for `h` in `1..=order`.
    pub fn power(&self, h: usize) -> &AdjacencyMatrix {
        &self.matrices[h - 1]
    }

    pub fn matrices(&self) -> &[AdjacencyMatrix] {
        &self.matrices
    }

    /// The first `h` orders.
    pub fn truncated(&self, h: usize) -> Result<OrderedAdjacencySet> {
        if h == 0 || h > self.order() {
            return Err(SagaError::InvalidArgument(format!(
                "cannot take {h} orders from a set of {}",
                self.order()
            )));
        }
        Ok(OrderedAdjacencySet {
            matrices: self.matrices[..h].to_vec(),
        })
    }
}

pub fn adjacency_powers(a1: &NormalizedAdjacency, h_max: usize) -> Result<OrderedAdjacencySet> {
    adjacency_powers_with_fill(a1, h_max, DEFAULT_DENSE_FILL_RATIO)
}

/// Like [`adjacency_powers`], storing any power whose fill ratio exceeds
/// `dense_above` as a dense matrix.
pub fn adjacency_powers_with_fill(
    a1: &NormalizedAdjacency,
    h_max: usize,
    dense_above: f64,
) -> Result<OrderedAdjacencySet> {
    if h_max == 0 {
        return Err(SagaError::InvalidArgument(
            "adjacency order must be at least 1".into(),
        ));
    }
    let base = a1.matrix();
    let first = if base.fill_ratio() > dense_above {
        AdjacencyMatrix::Dense(base.to_dense())
    } else {
        AdjacencyMatrix::Sparse(base.clone())
    };
    let mut matrices = vec![first];
    for _ in 1..h_max {
        let next = matrices.last().unwrap().left_mul(base, dense_above)?;
        matrices.push(next);
    }
    Ok(OrderedAdjacencySet { matrices })
}

/// Adjacency powers with every entry between two attribute-missing nodes
/// (off the diagonal) removed.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAdjacencySet {
    matrices: Vec<AdjacencyMatrix>,
    mask_pairs: BTreeSet<(usize, usize)>,
}

impl MaskedAdjacencySet {
    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[AdjacencyMatrix] {
        &self.matrices
    }

    pub fn power(&self, h: usize) -> &AdjacencyMatrix {
        &self.matrices[h - 1]
    }

    /// Positions that held a nonzero entry in at least one order and were removed.
    pub fn mask_pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.mask_pairs
    }

    /// View as an ordered set (for re-masking or inspection).
    pub fn as_ordered(&self) -> OrderedAdjacencySet {
        OrderedAdjacencySet {
            matrices: self.matrices.clone(),
        }
    }
}

pub fn mask_missing_edges(set: &OrderedAdjacencySet, observed: &[bool]) -> Result<MaskedAdjacencySet> {
    let n = set.matrices.first().map(AdjacencyMatrix::dim).unwrap_or(0);
    if observed.len() != n {
        return Err(SagaError::shape(
            "mask_missing_edges",
            format!("mask of length {} for {n} nodes", observed.len()),
        ));
    }
    let mut mask_pairs = BTreeSet::new();
    let mut matrices = Vec::with_capacity(set.order());
    for m in &set.matrices {
        let (masked, removed) = m.zero_where(|i, j| i != j && !observed[i] && !observed[j]);
        mask_pairs.extend(removed);
        matrices.push(masked);
    }
    Ok(MaskedAdjacencySet {
        matrices,
        mask_pairs,
    })
}

/// Node attributes with the observed/missing split.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    x: Array2<f64>,
    observed: Vec<bool>,
}

impl AttributeMatrix {
    pub fn new(x: Array2<f64>, observed: Vec<bool>) -> Result<Self> {
        if x.nrows() != observed.len() {
            return Err(SagaError::shape(
                "AttributeMatrix",
                format!("{} rows but mask of length {}", x.nrows(), observed.len()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SagaError::NonFinite("attribute matrix"));
        }
        Ok(Self { x, observed })
    }

    /// All nodes observed.
    pub fn fully_observed(x: Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        Self::new(x, vec![true; n])
    }

    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.x.ncols()
    }

    /// The full (held-out) attributes, including rows of missing nodes.
    pub fn full(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn n_missing(&self) -> usize {
        self.n_nodes() - self.n_observed()
    }

    pub fn missing_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn observed_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.observed[i]).collect()
    }

    /// `X̃`: rows of missing nodes replaced by zeros.
    pub fn zero_filled(&self) -> Array2<f64> {
        let mut out = self.x.clone();
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            if !self.observed[i] {
                row.fill(0.0);
            }
        }
        out
    }

    /// Same data under a different observed mask.
    pub fn with_mask(&self, observed: Vec<bool>) -> Result<Self> {
        Self::new(self.x.clone(), observed)
    }
}
