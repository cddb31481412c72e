//! Downstream node classification with a two-layer GCN, scored by stratified
//! k-fold cross-validation.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tape};
use crate::error::{Result, SagaError};
use crate::graph::{normalize_adjacency, SparseGraph};
use crate::optim::{xavier_init, Adam, AdamConfig};
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-2,
            epochs: 200,
            dropout: 0.5,
            weight_decay: 5e-4,
            folds: 5,
            repeats: 10,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.folds < 2 || self.repeats == 0 {
            return Err(SagaError::InvalidConfig(
                "classifier needs hidden, epochs, repeats >= 1 and folds >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SagaError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(SagaError::InvalidConfig("bad classifier lr or weight decay".into()));
        }
        Ok(())
    }

    /// Sets one field by name (keys carry a `classifier_` prefix, except
    /// `repeats`); `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| SagaError::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        match key {
            "classifier_hidden" => self.hidden = p(key, value)?,
            "classifier_lr" => self.lr = p(key, value)?,
            "classifier_epochs" => self.epochs = p(key, value)?,
            "classifier_dropout" => self.dropout = p(key, value)?,
            "classifier_weight_decay" => self.weight_decay = p(key, value)?,
            "repeats" => self.repeats = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    /// Indexed `[repeat][fold]`.
    pub accuracies: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
}

impl ClassificationReport {
    fn from_runs(accuracies: Vec<Vec<f64>>) -> Self {
        let flat: Vec<f64> = accuracies.iter().flatten().copied().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        let std = (flat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            accuracies,
            mean,
            std,
        }
    }

    /// `repeat<TAB>fold<TAB>accuracy` rows followed by mean and std lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("repeat\tfold\taccuracy\n");
        for (r, row) in self.accuracies.iter().enumerate() {
            for (f, a) in row.iter().enumerate() {
                s.push_str(&format!("{r}\t{f}\t{a:.6}\n"));
            }
        }
        s.push_str(&format!("mean\t-\t{:.6}\nstd\t-\t{:.6}\n", self.mean, self.std));
        s
    }
}

/// Fold index per node: every class is shuffled and dealt round-robin, so
/// each fold holds ⌊n_c/folds⌋ or ⌈n_c/folds⌉ members of class c.
pub fn stratified_folds<R: Rng>(labels: &[usize], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(SagaError::Dataset(format!(
                "class {c} has {} members, fewer than the {folds} folds",
                members.len()
            )));
        }
        members.shuffle(rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = (offset + pos) % folds;
        }
        offset += members.len();
    }
    Ok(fold)
}

struct Prepared {
    adj: Arc<dyn LinearOperator>,
    ax: Arc<Array2<f64>>,
    labels: Arc<Vec<usize>>,
    n_classes: usize,
}

fn run_fold(p: &Prepared, cfg: &ClassifierConfig, train: Vec<usize>, test: &[usize], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = p.ax.ncols();
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Array2::zeros((d, cfg.hidden)));
    let w2 = store.add("w2", Array2::zeros((cfg.hidden, p.n_classes)));
    xavier_init(&mut store, &[w1, w2], &mut rng);
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::with_lr(cfg.lr)
        },
    );
    let train = Arc::new(train);
    let keep = 1.0 - cfg.dropout;
    let dropout_mask = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Arc::new(Array2::from_shape_simple_fn((rows, cols), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    };
    let ax_op: Arc<dyn LinearOperator> = p.ax.clone();
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let wv1 = tape.param(&store, w1);
        let h = tape.apply(ax_op.clone(), wv1)?;
        let h = tape.relu(h);
        let h = if cfg.dropout > 0.0 {
            let m = dropout_mask(p.ax.nrows(), cfg.hidden, &mut rng);
            tape.mul_const(h, m)?
        } else {
            h
        };
        let wv2 = tape.param(&store, w2);
        let hw = tape.matmul(h, wv2)?;
        let logits = tape.apply(p.adj.clone(), hw)?;
        let loss = tape.cross_entropy(logits, p.labels.clone(), train.clone())?;
        store.zero_grad();
        tape.backward(loss, &mut store)?;
        adam.step(&mut store);
    }
    let h = p.ax.dot(store.value(w1)).mapv(|v| v.max(0.0));
    let logits = p.adj.apply(h.dot(store.value(w2)).view());
    let correct = test
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let pred = (0..row.len())
                .fold(0, |best, j| if row[j] > row[best] { j } else { best });
            pred == p.labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Cross-validated accuracy of a GCN classifier on `features`. Fold
/// assignment and weights depend only on `cfg.seed`, so reports are
/// reproducible regardless of thread scheduling.
pub fn classify_nodes(
    graph: &SparseGraph,
    features: &Array2<f64>,
    labels: &[usize],
    cfg: &ClassifierConfig,
) -> Result<ClassificationReport> {
    cfg.validate()?;
    if labels.len() != graph.n_nodes() {
        return Err(SagaError::shape(
            "classify_nodes",
            format!("{} labels for {} nodes", labels.len(), graph.n_nodes()),
        ));
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assignments: Vec<Vec<usize>> = (0..cfg.repeats)
        .map(|_| stratified_folds(labels, cfg.folds, &mut split_rng))
        .collect::<Result<_>>()?;
    classify_with_folds(graph, features, labels, cfg, &assignments)
}

/// [`classify_nodes`] with given fold assignments, one vector per repeat;
/// `cfg.repeats` is ignored in favor of `assignments.len()`.
pub fn classify_with_folds(
    graph: &SparseGraph,
    features: &Array2<f64>,
    labels: &[usize],
    cfg: &ClassifierConfig,
    assignments: &[Vec<usize>],
) -> Result<ClassificationReport> {
    let cfg = &ClassifierConfig {
        repeats: assignments.len(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let n = graph.n_nodes();
    if features.nrows() != n || labels.len() != n {
        return Err(SagaError::shape(
            "classify_nodes",
            format!("{n} nodes, {} feature rows, {} labels", features.nrows(), labels.len()),
        ));
    }
    if assignments.iter().any(|a| a.len() != n || a.iter().any(|&f| f >= cfg.folds)) {
        return Err(SagaError::InvalidArgument("fold assignment does not match the nodes".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(SagaError::NonFinite("classifier features"));
    }
    let adj: Arc<CsrMatrix> = Arc::new(normalize_adjacency(graph).into_matrix());
    let ax = Arc::new(adj.apply(features.view()));
    let prepared = Prepared {
        adj,
        ax,
        labels: Arc::new(labels.to_vec()),
        n_classes: labels.iter().max().map_or(1, |&m| m + 1),
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let a = &assignments[r];
            let train: Vec<usize> = (0..n).filter(|&i| a[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| a[i] == f).collect();
            if test.is_empty() || train.is_empty() {
                return Err(SagaError::InvalidArgument(format!(
                    "fold {f} of repeat {r} leaves an empty train or test set"
                )));
            }
            let seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((r * cfg.folds + f) as u64 + 1);
            run_fold(&prepared, cfg, train, &test, seed)
        })
        .collect::<Result<_>>()?;
    let accuracies = accs.chunks(cfg.folds).map(<[f64]>::to_vec).collect();
    Ok(ClassificationReport::from_runs(accuracies))
}
