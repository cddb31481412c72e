//! Model parameters, the joint forward pass and the full-batch training loop.

use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::config::TrainConfig;
use crate::dca::{
    cosine_similarity, dca_aggregate, filter_with_candidates, knn_filter, RefinedIndicator,
    StructuralCandidates,
};
use crate::encoder::{decode, encode, encode_paths, Activation, DecoderStack, GcnStack, Input};
use crate::error::{Result, SagaError};
use crate::graph::{
    adjacency_powers_with_fill, mask_missing_edges, normalize_adjacency, AttributeMatrix,
    MaskedAdjacencySet, OrderedAdjacencySet, SparseGraph,
};
use crate::hsr::{
    decode_adjacency, fuse_paths, path_attention, sample_pairs, structure_loss,
    structure_loss_sampled, structure_target, EdgeWeightMatrix, PathAttention,
};
use crate::optim::{xavier_init, Adam, AdamConfig};
use crate::sparse::{CsrMatrix, LinearOperator};

/// Every trainable tensor of the model, held in one store.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    pub encoder: GcnStack,
    /// Separate path encoder in the pseudo-siamese variant.
    pub path_encoder: Option<GcnStack>,
    pub decoder: DecoderStack,
    pub attention: PathAttention,
    pub alpha: ParamId,
    pub beta: ParamId,
}

impl ModelParams {
    /// Builds the parameter layout for `n_dims` attributes, Xavier-initialized
    /// from `cfg.seed`.
    pub fn new(n_dims: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = GcnStack::new(&mut store, "encoder", &cfg.encoder_dims(n_dims), Activation::Linear)?;
        let decoder = DecoderStack(GcnStack::new(
            &mut store,
            "decoder",
            &cfg.decoder_dims(n_dims),
            Activation::Linear,
        )?);
        let attention = PathAttention::new(&mut store, "attention", cfg.h, cfg.latent_dim)?;
        let alpha = store.add("alpha", Array2::zeros((1, 1)));
        let beta = store.add("beta", Array2::zeros((1, 1)));
        let mut model = Self {
            store,
            encoder,
            path_encoder: None,
            decoder,
            attention,
            alpha,
            beta,
        };
        model.xavier_init(cfg);
        if cfg.pseudo_siamese {
            model.path_encoder = Some(model.encoder.duplicate(&mut model.store, "path_encoder"));
        }
        Ok(model)
    }

    /// Redraws weights from `cfg.seed`; attention biases zero, `α`, `β` set to
    /// their configured initial values.
    pub fn xavier_init(&mut self, cfg: &TrainConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights: Vec<ParamId> = self.encoder.weights().to_vec();
        weights.extend(self.decoder.0.weights());
        weights.extend(self.attention.projections());
        xavier_init(&mut self.store, &weights, &mut rng);
        for &b in self.attention.biases() {
            self.store.value_mut(b).fill(0.0);
        }
        self.store.value_mut(self.alpha).fill(cfg.alpha_init);
        self.store.value_mut(self.beta).fill(cfg.beta_init);
        if let Some(p) = &self.path_encoder {
            for (&src, &dst) in self.encoder.weights().iter().zip(p.weights()) {
                let v = self.store.value(src).clone();
                *self.store.value_mut(dst) = v;
            }
        }
    }

    pub fn path_stack(&self) -> &GcnStack {
        self.path_encoder.as_ref().unwrap_or(&self.encoder)
    }

    pub fn alpha(&self) -> f64 {
        self.store.scalar(self.alpha)
    }

    pub fn beta(&self) -> f64 {
        self.store.scalar(self.beta)
    }
}

/// Graph-side inputs precomputed once per training run.
pub struct Problem {
    pub graph: SparseGraph,
    pub attributes: AttributeMatrix,
    pub a1: Arc<dyn LinearOperator>,
    pub powers: OrderedAdjacencySet,
    pub masked: MaskedAdjacencySet,
    pub path_ops: Vec<Arc<dyn LinearOperator>>,
    /// Zero-filled attributes as a sparse constant.
    pub x_tilde: Arc<CsrMatrix>,
    pub x_tilde_dense: Arc<Array2<f64>>,
    pub observed: Arc<Vec<bool>>,
    pub candidates: Option<StructuralCandidates>,
    pub edge_weights: EdgeWeightMatrix,
    pub target: Option<Arc<Array2<f64>>>,
    pub weights: Option<Arc<Array2<f64>>>,
}

impl Problem {
    pub fn new(graph: SparseGraph, attributes: AttributeMatrix, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let n = graph.n_nodes();
        if attributes.n_nodes() != n {
            return Err(SagaError::shape(
                "training inputs",
                format!("{n} graph nodes, {} attribute rows", attributes.n_nodes()),
            ));
        }
        if attributes.n_observed() == 0 {
            return Err(SagaError::InvalidArgument(
                "training needs at least one attribute-observed node".into(),
            ));
        }
        if cfg.enable_dca && cfg.k >= n {
            return Err(SagaError::InvalidConfig(format!(
                "k = {} must be below the node count {n}",
                cfg.k
            )));
        }
        let norm = normalize_adjacency(&graph);
        let order = if cfg.enable_dca { cfg.p.max(cfg.h) } else { cfg.h };
        let order = if cfg.enable_hsr || cfg.enable_dca { order } else { 1 };
        let powers = adjacency_powers_with_fill(&norm, order, cfg.dense_fill_ratio)?;
        let observed = attributes.observed().to_vec();
        let masked = mask_missing_edges(&powers.truncated(cfg.h.min(order))?, &observed)?;
        let path_ops = masked
            .matrices()
            .iter()
            .map(|m| Arc::new(m.clone()) as Arc<dyn LinearOperator>)
            .collect();
        let candidates = if cfg.enable_dca {
            Some(StructuralCandidates::new(&powers, cfg.p)?)
        } else {
            None
        };
        let edge_weights = EdgeWeightMatrix::new(observed.clone(), cfg.gamma)?;
        let (target, weights) = if cfg.enable_hsr && cfg.pair_samples == 0 {
            (
                Some(Arc::new(structure_target(&graph))),
                Some(Arc::new(edge_weights.to_dense(cfg.include_diagonal))),
            )
        } else {
            (None, None)
        };
        let x_dense = attributes.zero_filled();
        Ok(Self {
            a1: Arc::new(norm.into_matrix()),
            x_tilde: Arc::new(CsrMatrix::from_dense(x_dense.view())),
            x_tilde_dense: Arc::new(x_dense),
            observed: Arc::new(observed),
            graph,
            attributes,
            powers,
            masked,
            path_ops,
            candidates,
            edge_weights,
            target,
            weights,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }
}

/// Similarity filters carried between iterations.
#[derive(Debug, Clone, Default)]
pub struct FilterCache {
    filters: Option<(RefinedIndicator, RefinedIndicator)>,
}

impl FilterCache {
    pub fn filters(&self) -> Option<&(RefinedIndicator, RefinedIndicator)> {
        self.filters.as_ref()
    }
}

/// Handles into one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub z: Var,
    pub za: Var,
    pub paths_fused: Option<Var>,
    pub attention: Option<Var>,
    pub a_hat: Option<Var>,
    pub zf: Var,
    pub xhat: Var,
    pub la: Var,
    pub ls: Option<Var>,
    pub total: Var,
}

/// `β·za + (1 − β)·zs` for a 1×1 `beta`.
pub fn fuse(tape: &mut Tape, za: Var, zs: Var, beta: Var) -> Result<Var> {
    if tape.shape(za) != tape.shape(zs) {
        return Err(SagaError::shape(
            "fuse",
            format!("{:?} vs {:?}", tape.shape(za), tape.shape(zs)),
        ));
    }
    let one_minus = tape.affine(beta, -1.0, 1.0);
    let a = tape.scale_by(beta, za)?;
    let b = tape.scale_by(one_minus, zs)?;
    tape.add(a, b)
}

/// `λ·la + ls`, or `λ·la` without a structure term.
pub fn total_loss(tape: &mut Tape, la: Var, ls: Option<Var>, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(la, lambda);
    match ls {
        Some(ls) => tape.add(weighted, ls),
        None => Ok(weighted),
    }
}

/// Builds the joint loss on `tape`. Filters are rebuilt from the current
/// latent when `refresh` is set or none are cached.
pub fn forward(
    tape: &mut Tape,
    model: &ModelParams,
    problem: &Problem,
    cfg: &TrainConfig,
    cache: &mut FilterCache,
    refresh: bool,
    pair_rng: &mut ChaCha8Rng,
) -> Result<ForwardOutput> {
    let store = &model.store;
    let x0 = Input::Constant(problem.x_tilde.clone());
    let z = encode(tape, store, &problem.a1, x0.clone(), &model.encoder)?;

    let za = if cfg.enable_dca {
        if refresh || cache.filters.is_none() {
            let s = cosine_similarity(tape.value(z).view());
            let mut knn = knn_filter(&s, cfg.k)?;
            let cands = problem
                .candidates
                .as_ref()
                .ok_or_else(|| SagaError::InvalidConfig("structural candidates missing".into()))?;
            let mut spn = filter_with_candidates(&s, cands, cfg.k)?;
            if cfg.row_normalize_filters {
                knn = knn.row_normalized();
                spn = spn.row_normalized();
            }
            cache.filters = Some((knn, spn));
        }
        let (knn, spn) = cache.filters.as_ref().expect("filled above");
        let alpha = tape.param(store, model.alpha);
        dca_aggregate(tape, z, knn, spn, alpha)?
    } else {
        z
    };

    let (paths_fused, attention, a_hat, ls) = if cfg.enable_hsr {
        let paths = encode_paths(tape, store, &problem.path_ops, x0, model.path_stack())?;
        let att = path_attention(tape, store, &paths, &model.attention)?;
        let zs = fuse_paths(tape, &paths, att)?;
        let (a_hat, ls) = if cfg.pair_samples > 0 {
            let sample = sample_pairs(
                &problem.graph,
                &problem.edge_weights,
                cfg.include_diagonal,
                cfg.pair_samples.min(problem.n_nodes() * problem.n_nodes()),
                pair_rng,
            )?;
            (None, structure_loss_sampled(tape, zs, &sample)?)
        } else {
            let a_hat = decode_adjacency(tape, zs);
            let target = problem.target.clone().expect("dense target built");
            let weights = problem.weights.clone().expect("dense weights built");
            (Some(a_hat), structure_loss(tape, a_hat, target, weights)?)
        };
        (Some(zs), Some(att), a_hat, Some(ls))
    } else {
        (None, None, None, None)
    };

    let zf = match paths_fused {
        Some(zs) => {
            let beta = tape.param(store, model.beta);
            fuse(tape, za, zs, beta)?
        }
        None => za,
    };
    let xhat = decode(tape, store, &problem.a1, zf, &model.decoder)?;
    let la = tape.mse_loss_masked(xhat, problem.x_tilde_dense.clone(), problem.observed.clone())?;
    let total = total_loss(tape, la, ls, cfg.lambda)?;
    Ok(ForwardOutput {
        z,
        za,
        paths_fused,
        attention,
        a_hat,
        zf,
        xhat,
        la,
        ls,
        total,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l_a: f64,
    pub l_s: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: ModelParams,
    /// Decoder output under the final parameters.
    pub xhat: Array2<f64>,
    pub trace: Vec<IterationRecord>,
    pub stopped_early: bool,
}

impl TrainResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.l_total).collect()
    }
}

/// Plateau detector: counts iterations without a relative improvement of the
/// best loss, and allows stopping only once the floor is reached.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    best: f64,
    since: usize,
    rel_tol: f64,
    patience: usize,
    min_iters: usize,
}

impl EarlyStop {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            best: f64::INFINITY,
            since: 0,
            rel_tol: cfg.rel_tol,
            patience: cfg.patience,
            min_iters: cfg.min_iters,
        }
    }

    /// Feeds the loss of the `completed`-th iteration (1-based); returns true
    /// when training should stop.
    pub fn update(&mut self, completed: usize, loss: f64) -> bool {
        if loss < self.best - self.rel_tol * self.best.abs() || !self.best.is_finite() {
            self.best = loss;
            self.since = 0;
        } else {
            self.since += 1;
        }
        completed >= self.min_iters && self.since >= self.patience
    }
}

pub fn train(problem: &Problem, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with_log(problem, cfg, None)
}

/// Trains from a fresh initialization, writing one JSON record per iteration
/// to `log` when given.
pub fn train_with_log(
    problem: &Problem,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut model = ModelParams::new(problem.attributes.n_dims(), cfg)?;
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::with_lr(cfg.lr)
        },
    );
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pair_rng.set_stream(1);
    let mut cache = FilterCache::default();
    let mut stop = EarlyStop::new(cfg);
    let mut trace = Vec::new();
    let mut stopped_early = false;

    for it in 0..cfg.max_iters {
        let mut tape = Tape::new();
        let refresh = it % cfg.refresh_every == 0;
        let out = forward(&mut tape, &model, problem, cfg, &mut cache, refresh, &mut pair_rng)
            .map_err(|e| match e {
                SagaError::NonFinite(what) => SagaError::Divergence {
                    iteration: it,
                    detail: format!("non-finite {what}"),
                },
                other => other,
            })?;
        let record = IterationRecord {
            iteration: it,
            l_a: tape.scalar(out.la),
            l_s: out.ls.map_or(0.0, |v| tape.scalar(v)),
            l_total: tape.scalar(out.total),
            alpha: model.alpha(),
            beta: model.beta(),
        };
        if !record.l_total.is_finite() {
            return Err(SagaError::Divergence {
                iteration: it,
                detail: format!("total loss {} (L_a {}, L_s {})", record.l_total, record.l_a, record.l_s),
            });
        }
        model.store.zero_grad();
        tape.backward(out.total, &mut model.store)?;
        adam.step(&mut model.store);

        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").map_err(|e| SagaError::io("training log", e))?;
        }
        log::debug!(
            "iter {it}: total {:.6} L_a {:.6} L_s {:.6}",
            record.l_total,
            record.l_a,
            record.l_s
        );
        trace.push(record);
        if stop.update(it + 1, record.l_total) {
            stopped_early = it + 1 < cfg.max_iters;
            break;
        }
    }

    let mut tape = Tape::new();
    let out = forward(&mut tape, &model, problem, cfg, &mut cache, true, &mut pair_rng)?;
    let xhat = tape.value(out.xhat).clone();
    Ok(TrainResult {
        model,
        xhat,
        trace,
        stopped_early,
    })
}
