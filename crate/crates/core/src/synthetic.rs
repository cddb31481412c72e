//! Planted-partition graphs with block-correlated binary attributes, for
//! tests and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Result, SagaError};
use crate::graph::SparseGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub n_nodes: usize,
    pub n_blocks: usize,
    /// Attribute dimensions owned by each block; `D = n_blocks · dims_per_block`.
    pub dims_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Chance that a node carries each of its own block's dimensions.
    pub attr_prob: f64,
    /// Chance that a node carries each dimension of another block.
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            n_blocks: 2,
            dims_per_block: 4,
            p_in: 0.5,
            p_out: 0.05,
            attr_prob: 0.7,
            noise_prob: 0.0,
            seed: 0,
        }
    }
}

/// Node `i` belongs to block `i % n_blocks`; the label is its block.
pub fn planted_partition(spec: &BlockSpec) -> Result<DatasetBundle> {
    if spec.n_blocks == 0 || spec.n_nodes < spec.n_blocks || spec.dims_per_block == 0 {
        return Err(SagaError::InvalidArgument(
            "need at least one node and one dimension per block".into(),
        ));
    }
    for p in [spec.p_in, spec.p_out, spec.attr_prob, spec.noise_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SagaError::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_nodes;
    let block = |i: usize| i % spec.n_blocks;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { spec.p_in } else { spec.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let d = spec.n_blocks * spec.dims_per_block;
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let own = block(i) * spec.dims_per_block;
        for j in 0..d {
            let p = if (own..own + spec.dims_per_block).contains(&j) {
                spec.attr_prob
            } else {
                spec.noise_prob
            };
            if rng.gen::<f64>() < p {
                x[[i, j]] = 1.0;
            }
        }
        if (own..own + spec.dims_per_block).all(|j| x[[i, j]] == 0.0) {
            // every node keeps at least one positive of its own block
            let j = own + rng.gen_range(0..spec.dims_per_block);
            x[[i, j]] = 1.0;
        }
    }
    let graph = SparseGraph::new(n, &edges)?;
    let labels = (0..n).map(block).collect();
    DatasetBundle::new("planted", graph, x, Some(labels))
}
