//! Observed/missing node splits and classification folds, with a text file
//! format so a split can be reused across runs.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::stratified_folds;
use crate::data::DatasetBundle;
use crate::error::{Result, SagaError};
use crate::graph::AttributeMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of nodes whose attributes stay visible; `N_o = ⌊N · f⌋`.
    pub observed_fraction: f64,
    /// Classification folds; ignored when the dataset has no labels.
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            observed_fraction: 0.4,
            folds: 5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = self.observed_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(SagaError::InvalidConfig(format!(
                "observed_fraction must lie in (0, 1], got {f}"
            )));
        }
        if self.folds < 2 {
            return Err(SagaError::InvalidConfig("folds must be at least 2".into()));
        }
        Ok(())
    }

    /// Sets one field by name; `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || SagaError::InvalidConfig(format!("bad value {value:?} for {key}"));
        match key {
            "observed_fraction" => self.observed_fraction = value.trim().parse().map_err(|_| bad())?,
            "folds" => self.folds = value.trim().parse().map_err(|_| bad())?,
            "split_seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn n_observed(&self, n_nodes: usize) -> usize {
        (n_nodes as f64 * self.observed_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub observed: Vec<bool>,
    /// Fold per node, when labels were available.
    pub folds: Option<Vec<usize>>,
    pub spec: SplitSpec,
}

impl Splits {
    pub fn n_nodes(&self) -> usize {
        self.observed.len()
    }

    pub fn missing_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.observed[i]).collect()
    }

    /// The bundle's attributes with this split's mask.
    pub fn attributes(&self, bundle: &DatasetBundle) -> Result<AttributeMatrix> {
        if bundle.n_nodes() != self.n_nodes() {
            return Err(SagaError::Dataset(format!(
                "split covers {} nodes, dataset has {}",
                self.n_nodes(),
                bundle.n_nodes()
            )));
        }
        AttributeMatrix::new(bundle.attributes.clone(), self.observed.clone())
    }
}

/// Samples `N_m = N − ⌊N·f⌋` missing nodes uniformly without replacement and,
/// if labeled, stratified folds, all from `spec.seed`.
pub fn make_splits(bundle: &DatasetBundle, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = bundle.n_nodes();
    let n_obs = spec.n_observed(n);
    if n_obs == 0 {
        return Err(SagaError::InvalidConfig(format!(
            "observed_fraction {} leaves no observed node among {n}",
            spec.observed_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut observed = vec![false; n];
    for i in sample(&mut rng, n, n_obs) {
        observed[i] = true;
    }
    let folds = match &bundle.labels {
        Some(l) => Some(stratified_folds(l, spec.folds, &mut rng)?),
        None => None,
    };
    Ok(Splits {
        observed,
        folds,
        spec: spec.clone(),
    })
}

/// Text form: a header with the spec, then `node<TAB>0|1<TAB>fold|-` lines.
pub fn format_splits(s: &Splits) -> String {
    let mut out = format!(
        "# n_nodes={} observed_fraction={} folds={} seed={}\n",
        s.n_nodes(),
        s.spec.observed_fraction,
        s.spec.folds,
        s.spec.seed
    );
    for i in 0..s.n_nodes() {
        let fold = s
            .folds
            .as_ref()
            .map_or_else(|| "-".to_string(), |f| f[i].to_string());
        out.push_str(&format!("{i}\t{}\t{fold}\n", u8::from(s.observed[i])));
    }
    out
}

pub fn write_splits(s: &Splits, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_splits(s)).map_err(|e| SagaError::io(path, e))
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<Splits> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SagaError::io(path, e))?;
    parse_splits(path, &text)
}

fn parse_splits(path: &Path, text: &str) -> Result<Splits> {
    let err = |line: usize, message: String| SagaError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty split file".into()))?;
    let mut spec = SplitSpec::default();
    let mut n = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(1, format!("bad header token {tok:?}")))?;
        match k {
            "n_nodes" => n = Some(v.parse().map_err(|_| err(1, format!("bad n_nodes {v:?}")))?),
            "seed" => spec.seed = v.parse().map_err(|_| err(1, format!("bad seed {v:?}")))?,
            other => {
                if !spec.set(other, v).map_err(|e| err(1, e.to_string()))? {
                    return Err(err(1, format!("unknown header key {other:?}")));
                }
            }
        }
    }
    let n: usize = n.ok_or_else(|| err(1, "header lacks n_nodes".into()))?;
    let mut observed = vec![None; n];
    let mut folds: Vec<Option<usize>> = vec![None; n];
    let mut any_fold = false;
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(ln, "expected node, observed flag and fold".into()));
        }
        let node: usize = f[0].parse().map_err(|_| err(ln, format!("bad node {:?}", f[0])))?;
        if node >= n || observed[node].is_some() {
            return Err(err(ln, format!("node {node} out of range or repeated")));
        }
        observed[node] = Some(match f[1] {
            "1" => true,
            "0" => false,
            o => return Err(err(ln, format!("bad observed flag {o:?}"))),
        });
        if f[2] != "-" {
            any_fold = true;
            folds[node] = Some(f[2].parse().map_err(|_| err(ln, format!("bad fold {:?}", f[2])))?);
        }
    }
    let observed = observed
        .into_iter()
        .enumerate()
        .map(|(i, o)| o.ok_or_else(|| SagaError::Dataset(format!("split lacks node {i}"))))
        .collect::<Result<Vec<bool>>>()?;
    let folds = if any_fold {
        Some(
            folds
                .into_iter()
                .enumerate()
                .map(|(i, f)| f.ok_or_else(|| SagaError::Dataset(format!("node {i} has no fold"))))
                .collect::<Result<Vec<usize>>>()?,
        )
    } else {
        None
    };
    Ok(Splits {
        observed,
        folds,
        spec,
    })
}
