//! Attribute profiling metrics: Recall@K and NDCG@K over ranked attribute
//! dimensions, macro-averaged across nodes.

use std::collections::BTreeSet;

use ndarray::{ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Result, SagaError};

/// Ranked dimensions and the true positive set, one entry per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    rankings: Vec<Vec<usize>>,
    truth: Vec<BTreeSet<usize>>,
}

/// Dimensions ordered by descending score; ties keep ascending index order.
pub fn rank_dimensions(scores: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

impl RankingResult {
    /// Validates that each ranking is a permutation of `0..D` and each truth
    /// set lies inside it.
    pub fn new(rankings: Vec<Vec<usize>>, truth: Vec<BTreeSet<usize>>) -> Result<Self> {
        if rankings.len() != truth.len() {
            return Err(SagaError::shape(
                "RankingResult",
                format!("{} rankings, {} truth sets", rankings.len(), truth.len()),
            ));
        }
        for (r, t) in rankings.iter().zip(&truth) {
            let d = r.len();
            let mut seen = vec![false; d];
            for &i in r {
                if i >= d || std::mem::replace(&mut seen[i], true) {
                    return Err(SagaError::InvalidArgument(
                        "ranking is not a permutation of the dimensions".into(),
                    ));
                }
            }
            if t.iter().any(|&i| i >= d) {
                return Err(SagaError::InvalidArgument(
                    "truth dimension out of range".into(),
                ));
            }
        }
        Ok(Self { rankings, truth })
    }

    /// Rankings from predicted scores and truth from binary reference rows
    /// (nonzero entries are positives), for the listed nodes.
    pub fn from_scores(
        predicted: ArrayView2<'_, f64>,
        reference: ArrayView2<'_, f64>,
        nodes: &[usize],
    ) -> Result<Self> {
        if predicted.dim() != reference.dim() {
            return Err(SagaError::shape(
                "RankingResult::from_scores",
                format!("{:?} vs {:?}", predicted.dim(), reference.dim()),
            ));
        }
        if nodes.iter().any(|&n| n >= predicted.nrows()) {
            return Err(SagaError::InvalidArgument("node index out of range".into()));
        }
        let rankings = nodes.iter().map(|&n| rank_dimensions(predicted.row(n))).collect();
        let truth = nodes
            .iter()
            .map(|&n| {
                reference
                    .row(n)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Self::new(rankings, truth)
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    pub fn ranking(&self, i: usize) -> &[usize] {
        &self.rankings[i]
    }

    pub fn truth(&self, i: usize) -> &BTreeSet<usize> {
        &self.truth[i]
    }

    /// Drops nodes whose truth set is empty; returns the number dropped.
    pub fn without_empty_truth(&self) -> (Self, usize) {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !self.truth[i].is_empty()).collect();
        let dropped = self.len() - keep.len();
        (
            Self {
                rankings: keep.iter().map(|&i| self.rankings[i].clone()).collect(),
                truth: keep.iter().map(|&i| self.truth[i].clone()).collect(),
            },
            dropped,
        )
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(SagaError::InvalidArgument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(SagaError::InvalidArgument("no nodes to evaluate".into()));
        }
        let d = self.rankings.iter().map(Vec::len).min().unwrap_or(0);
        if k > d {
            return Err(SagaError::InvalidArgument(format!(
                "k = {k} exceeds the {d} attribute dimensions"
            )));
        }
        if self.truth.iter().any(BTreeSet::is_empty) {
            return Err(SagaError::InvalidArgument(
                "a node has no held-out positive dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Mean over nodes of `|top-k ∩ truth| / |truth|`.
pub fn recall_at_k(rank: &RankingResult, k: usize) -> Result<f64> {
    rank.check(k)?;
    let total: f64 = rank
        .rankings
        .iter()
        .zip(&rank.truth)
        .map(|(r, t)| {
            let hits = r.iter().take(k).filter(|d| t.contains(d)).count();
            hits as f64 / t.len() as f64
        })
        .sum();
    Ok(total / rank.len() as f64)
}

/// Mean over nodes of `DCG@k / IDCG@k` with binary gains and `log₂(pos + 1)`
/// discounts.
pub fn ndcg_at_k(rank: &RankingResult, k: usize) -> Result<f64> {
    rank.check(k)?;
    let disc = |pos: usize| 1.0 / ((pos + 1) as f64).log2();
    let total: f64 = rank
        .rankings
        .iter()
        .zip(&rank.truth)
        .map(|(r, t)| {
            let dcg: f64 = r
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, d)| t.contains(d))
                .map(|(i, _)| disc(i + 1))
                .sum();
            let idcg: f64 = (1..=t.len().min(k)).map(disc).sum();
            dcg / idcg
        })
        .sum();
    Ok(total / rank.len() as f64)
}

pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub rows: Vec<MetricRow>,
    pub evaluated_nodes: usize,
    pub skipped_nodes: usize,
}

impl ProfileReport {
    pub fn at(&self, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("k\trecall\tndcg\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.k, r.recall, r.ndcg));
        }
        s
    }
}

/// Scores `xhat` against the true attributes on `nodes`. Nodes with no
/// positive dimension carry no signal for either metric and are skipped.
pub fn profile_eval(
    xhat: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
    nodes: &[usize],
    ks: &[usize],
) -> Result<ProfileReport> {
    let full = RankingResult::from_scores(xhat, truth, nodes)?;
    let (rank, skipped) = full.without_empty_truth();
    if skipped > 0 {
        log::warn!("{skipped} evaluated nodes have no positive attributes and were skipped");
    }
    let rows = ks
        .iter()
        .map(|&k| {
            Ok(MetricRow {
                k,
                recall: recall_at_k(&rank, k)?,
                ndcg: ndcg_at_k(&rank, k)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ProfileReport {
        rows,
        evaluated_nodes: rank.len(),
        skipped_nodes: skipped,
    })
}
