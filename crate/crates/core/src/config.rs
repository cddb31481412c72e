//! Training configuration and the flat `key = value` config-file format.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SagaError};
use crate::graph::DEFAULT_DENSE_FILL_RATIO;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Structural order used by the constrained KNN filter.
    pub p: usize,
    /// Neighbors kept per row by both filters.
    pub k: usize,
    /// Loss weight on pairs whose endpoints are both attribute-missing.
    pub gamma: f64,
    /// Weight of the attribute loss in the total.
    pub lambda: f64,
    /// Number of masked adjacency orders (paths).
    pub h: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Hidden widths of the encoder between the input and the latent.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Hidden widths of the decoder between the latent and the output.
    pub decoder_hidden: Vec<usize>,
    pub max_iters: usize,
    /// Early stopping is never considered before this many iterations.
    pub min_iters: usize,
    pub patience: usize,
    /// Relative improvement of the best total loss that resets patience.
    pub rel_tol: f64,
    pub seed: u64,
    pub enable_dca: bool,
    pub enable_hsr: bool,
    pub pseudo_siamese: bool,
    /// Rebuild the similarity filters every this many iterations.
    pub refresh_every: usize,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Include the self-pairs in the structure loss.
    pub include_diagonal: bool,
    pub row_normalize_filters: bool,
    /// When nonzero, estimate the structure loss from this many sampled pairs.
    pub pair_samples: usize,
    pub dense_fill_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 5,
            k: 5,
            gamma: 5.0,
            lambda: 10.0,
            h: 3,
            lr: 1e-3,
            weight_decay: 0.0,
            encoder_hidden: vec![256],
            latent_dim: 64,
            decoder_hidden: vec![256],
            max_iters: 1000,
            min_iters: 500,
            patience: 50,
            rel_tol: 1e-4,
            seed: 0,
            enable_dca: true,
            enable_hsr: true,
            pseudo_siamese: false,
            refresh_every: 1,
            alpha_init: 0.5,
            beta_init: 0.5,
            include_diagonal: true,
            row_normalize_filters: false,
            pair_samples: 0,
            dense_fill_ratio: DEFAULT_DENSE_FILL_RATIO,
        }
    }
}

fn invalid(msg: String) -> SagaError {
    SagaError::InvalidConfig(msg)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let v = value.trim();
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| parse(key, w)).collect()
}

impl TrainConfig {
    /// Default model with both modules switched off.
    pub fn baseline(&self) -> Self {
        Self {
            enable_dca: false,
            enable_hsr: false,
            pseudo_siamese: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p", self.p),
            ("k", self.k),
            ("h", self.h),
            ("latent_dim", self.latent_dim),
            ("max_iters", self.max_iters),
            ("min_iters", self.min_iters),
            ("patience", self.patience),
            ("refresh_every", self.refresh_every),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.max_iters < self.min_iters {
            return Err(invalid(format!(
                "max_iters = {} is below the {}-iteration floor",
                self.max_iters, self.min_iters
            )));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(invalid("layer widths must be positive".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda), ("lr", self.lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be non-negative".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return Err(invalid("rel_tol must be non-negative".into()));
        }
        if !self.alpha_init.is_finite() || !self.beta_init.is_finite() {
            return Err(invalid("alpha_init and beta_init must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.dense_fill_ratio) {
            return Err(invalid("dense_fill_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sets one field by name. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "p" => self.p = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "h" => self.h = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse_widths(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse_widths(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "min_iters" => self.min_iters = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "rel_tol" => self.rel_tol = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "enable_dca" => self.enable_dca = parse_bool(key, value)?,
            "enable_hsr" => self.enable_hsr = parse_bool(key, value)?,
            "pseudo_siamese" => self.pseudo_siamese = parse_bool(key, value)?,
            "refresh_every" => self.refresh_every = parse(key, value)?,
            "alpha_init" => self.alpha_init = parse(key, value)?,
            "beta_init" => self.beta_init = parse(key, value)?,
            "include_diagonal" => self.include_diagonal = parse_bool(key, value)?,
            "row_normalize_filters" => self.row_normalize_filters = parse_bool(key, value)?,
            "pair_samples" => self.pair_samples = parse(key, value)?,
            "dense_fill_ratio" => self.dense_fill_ratio = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Encoder widths `[n_dims, hidden.., latent]`.
    pub fn encoder_dims(&self, n_dims: usize) -> Vec<usize> {
        let mut d = vec![n_dims];
        d.extend(&self.encoder_hidden);
        d.push(self.latent_dim);
        d
    }

    /// Decoder widths `[latent, hidden.., n_dims]`.
    pub fn decoder_dims(&self, n_dims: usize) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.decoder_hidden);
        d.push(n_dims);
        d
    }
}

/// Parses `key = value` lines; `#` starts a comment. Returns
/// `(key, value, line number)` in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!("line {}: expected key = value", idx + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(invalid(format!("line {}: empty key", idx + 1)));
        }
        out.push((k.to_string(), v.trim().to_string(), idx + 1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.p, c.k, c.h), (5, 5, 3));
        assert_eq!(c.encoder_dims(1433), vec![1433, 256, 64]);
        assert_eq!(c.decoder_dims(1433), vec![64, 256, 1433]);
    }

    #[test]
    fn guards() {
        let mut c = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.max_iters = 100;
        assert!(c.validate().is_err());
        c.min_iters = 100;
        c.validate().unwrap();
        c.lambda = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn key_values_round_through_set() {
        let kv = parse_key_values("# comment\nk = 7\nenable_dca=false  # off\n\nencoder_hidden = 32,16\n").unwrap();
        let mut c = TrainConfig::default();
        for (k, v, _) in &kv {
            assert!(c.set(k, v).unwrap());
        }
        assert_eq!(c.k, 7);
        assert!(!c.enable_dca);
        assert_eq!(c.encoder_hidden, vec![32, 16]);
        assert!(!c.set("bogus", "1").unwrap());
        assert!(c.set("k", "x").is_err());
        assert!(parse_key_values("novalue\n").is_err());
    }
}
