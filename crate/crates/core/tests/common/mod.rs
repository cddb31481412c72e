//! Brute-force reference implementations and fixtures shared by the
//! integration tests. Everything here is written from the definitions with
//! plain loops and owes nothing to the library's code paths.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saga::autodiff::{ParamStore, Tape, Var};
use saga::graph::{AttributeMatrix, SparseGraph};
use saga::TrainConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

/// Random values bounded away from zero, so ReLU is smooth around them.
pub fn away_from_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = r.gen_range(0.2..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64) -> SparseGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    SparseGraph::new(n, &edges).unwrap()
}

pub fn random_mask(r: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
    m[r.gen_range(0..n)] = true;
    m
}

/// Two triangles joined by one edge; nodes 1 and 4 have no attributes.
pub fn six_node() -> (SparseGraph, AttributeMatrix) {
    let g = SparseGraph::new(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)]).unwrap();
    let x = ndarray::array![
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0]
    ];
    let attrs = AttributeMatrix::new(x, vec![true, false, true, true, false, true]).unwrap();
    (g, attrs)
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        p: 2,
        k: 2,
        h: 2,
        encoder_hidden: vec![5],
        latent_dim: 3,
        decoder_hidden: vec![5],
        max_iters: 40,
        min_iters: 10,
        patience: 5,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

pub fn dense_adjacency(g: &SparseGraph) -> Array2<f64> {
    let n = g.n_nodes();
    let mut a = Array2::zeros((n, n));
    for &(i, j) in g.edges() {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

pub fn oracle_normalized(g: &SparseGraph) -> Array2<f64> {
    let n = g.n_nodes();
    let mut a = dense_adjacency(g);
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[[i, j]]).sum()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = a[[i, j]] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m) = a.dim();
    let p = b.ncols();
    assert_eq!(m, b.nrows());
    let mut out = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// `[Ã, Ã², …, Ã^h]`.
pub fn oracle_powers(g: &SparseGraph, h: usize) -> Vec<Array2<f64>> {
    let a = oracle_normalized(g);
    let mut out = vec![a.clone()];
    for _ in 1..h {
        let next = naive_matmul(&a, out.last().unwrap());
        out.push(next);
    }
    out
}

pub fn oracle_mask(m: &Array2<f64>, observed: &[bool]) -> Array2<f64> {
    let mut out = m.clone();
    for i in 0..observed.len() {
        for j in 0..observed.len() {
            if i != j && !observed[i] && !observed[j] {
                out[[i, j]] = 0.0;
            }
        }
    }
    out
}

pub fn oracle_cosine(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let norm = |i: usize| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (norm(i), norm(j));
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(x, y)| x * y).sum();
        dot / (a * b)
    })
}

/// Nodes within `p` hops of `i` (excluding `i`), by breadth-first search.
pub fn bfs_within(g: &SparseGraph, i: usize, p: usize) -> BTreeSet<usize> {
    let n = g.n_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[i] = 0;
    let mut queue = VecDeque::from([i]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == p {
            continue;
        }
        for v in 0..n {
            if g.has_edge(u, v) && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..n).filter(|&v| v != i && dist[v] != usize::MAX).collect()
}

/// Keeps, per row, the `k` best entries of `s` among `allowed(i)`, ranked by
/// value descending then index ascending, via a full sort.
pub fn oracle_topk(s: &Array2<f64>, k: usize, allowed: impl Fn(usize) -> Vec<usize>) -> Array2<f64> {
    let n = s.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let mut c = allowed(i);
        c.sort_by(|&a, &b| s[[i, b]].partial_cmp(&s[[i, a]]).unwrap().then(a.cmp(&b)));
        for &j in c.iter().take(k) {
            out[[i, j]] = s[[i, j]];
        }
    }
    out
}

pub fn oracle_knn(s: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = s.nrows();
    oracle_topk(s, k, |i| (0..n).filter(|&j| j != i).collect())
}

pub fn oracle_structural(s: &Array2<f64>, g: &SparseGraph, p: usize, k: usize) -> Array2<f64> {
    oracle_topk(s, k, |i| bfs_within(g, i, p).into_iter().collect())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row softmax of the per-path scalar logits, then the attention-weighted sum.
pub fn oracle_attention_and_fusion(
    paths: &[Array2<f64>],
    w: &[Array2<f64>],
    b: &[f64],
) -> (Array2<f64>, Array2<f64>) {
    let (n, d) = paths[0].dim();
    let h = paths.len();
    let mut att = Array2::zeros((n, h));
    for i in 0..n {
        let logits: Vec<f64> = (0..h)
            .map(|p| (0..d).map(|c| paths[p][[i, c]] * w[p][[c, 0]]).sum::<f64>() + b[p])
            .collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for p in 0..h {
            att[[i, p]] = logits[p].exp() / denom;
        }
    }
    let mut fused = Array2::zeros((n, d));
    for i in 0..n {
        for c in 0..d {
            fused[[i, c]] = (0..h).map(|p| att[[i, p]] * paths[p][[i, c]]).sum();
        }
    }
    (att, fused)
}

/// `(1/N²) Σ w·BCE(sigmoid(z_i·z_j), A_ij)` with unit diagonal targets.
pub fn oracle_structure_loss(zs: &Array2<f64>, g: &SparseGraph, observed: &[bool], gamma: f64) -> f64 {
    let n = zs.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = zs.row(i).iter().zip(zs.row(j)).map(|(a, b)| a * b).sum();
            let p = sigmoid(dot);
            let t = if i == j || g.has_edge(i, j) { 1.0 } else { 0.0 };
            let w = if !observed[i] && !observed[j] { gamma } else { 1.0 };
            total += w * -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
    }
    total / (n * n) as f64
}

pub fn oracle_masked_mse(pred: &Array2<f64>, target: &Array2<f64>, observed: &[bool]) -> f64 {
    let mut s = 0.0;
    let mut count = 0usize;
    for i in 0..pred.nrows() {
        if observed[i] {
            for j in 0..pred.ncols() {
                s += (pred[[i, j]] - target[[i, j]]).powi(2);
                count += 1;
            }
        }
    }
    s / count as f64
}

/// Ranking by score descending, lower index first on ties, by exhaustive
/// pairwise comparison counting.
pub fn oracle_ranking(scores: &[f64]) -> Vec<usize> {
    let d = scores.len();
    let mut pos = vec![0; d];
    for i in 0..d {
        pos[i] = (0..d)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count();
    }
    let mut out = vec![0; d];
    for i in 0..d {
        out[pos[i]] = i;
    }
    out
}

pub fn oracle_recall(rankings: &[Vec<usize>], truth: &[BTreeSet<usize>], k: usize) -> f64 {
    let mut total = 0.0;
    for (r, t) in rankings.iter().zip(truth) {
        let top: BTreeSet<usize> = r[..k].iter().copied().collect();
        total += top.intersection(t).count() as f64 / t.len() as f64;
    }
    total / rankings.len() as f64
}

pub fn oracle_ndcg(rankings: &[Vec<usize>], truth: &[BTreeSet<usize>], k: usize) -> f64 {
    let mut total = 0.0;
    for (r, t) in rankings.iter().zip(truth) {
        let mut dcg = 0.0;
        for (pos, d) in r[..k].iter().enumerate() {
            if t.contains(d) {
                dcg += 1.0 / (pos as f64 + 2.0).log2();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..t.len().min(k) {
            idcg += 1.0 / (pos as f64 + 2.0).log2();
        }
        total += dcg / idcg;
    }
    total / rankings.len() as f64
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Largest relative error between tape gradients of `build` with respect to
/// each input and central finite differences with step `1e-6`.
pub fn leaf_gradient_error(inputs: &[Array2<f64>], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Array2<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.gradients(out).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(x.dim()));
        let mut numeric = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = inputs.to_vec();
            plus[k][[r, c]] += eps;
            let mut minus = inputs.to_vec();
            minus[k][[r, c]] -= eps;
            numeric[[r, c]] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Same check for every parameter of `store`, with `loss` rebuilding the
/// scalar from a store.
pub fn param_gradient_error(store: &ParamStore, loss: impl Fn(&ParamStore, &mut Tape) -> Var) -> f64 {
    let mut base = store.clone();
    base.zero_grad();
    let mut tape = Tape::new();
    let out = loss(&base, &mut tape);
    tape.backward(out, &mut base).unwrap();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let o = loss(s, &mut t);
        t.scalar(o)
    };
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for id in base.ids().collect::<Vec<_>>() {
        let analytic = base.grad(id).clone();
        let (rows, cols) = analytic.dim();
        let mut numeric = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = store.clone();
                plus.value_mut(id)[[r, c]] += eps;
                let mut minus = store.clone();
                minus.value_mut(id)[[r, c]] -= eps;
                numeric[[r, c]] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Contracts a node against a fixed random weight so every output entry
/// reaches the scalar with a distinct coefficient.
fn contract(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(v);
    let w = std::sync::Arc::new(random_matrix(&mut rng(seed), r, c));
    let m = tape.mul_const(v, w).unwrap();
    tape.sum(m)
}

/// Finite-difference error of every differentiable primitive of the tape.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    use saga::sparse::{CsrMatrix, LinearOperator};
    use std::sync::Arc;

    let mut r = rng(11);
    let a = random_matrix(&mut r, 4, 3);
    let b = random_matrix(&mut r, 3, 5);
    let c = random_matrix(&mut r, 4, 3);
    let signed = away_from_zero(&mut r, 4, 3);
    let s = random_matrix(&mut r, 1, 1);
    let row = random_matrix(&mut r, 1, 3);
    let col = random_matrix(&mut r, 4, 1);
    let sparse: Arc<dyn LinearOperator> = Arc::new(CsrMatrix::from_triplets(
        4,
        4,
        vec![(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0), (2, 3, 0.3), (3, 0, 1.5), (3, 3, -0.7)],
    )
    .unwrap());
    let targets = Arc::new(Array2::from_shape_fn((4, 3), |(i, j)| ((i + j) % 2) as f64));
    let weights = Arc::new(random_matrix(&mut r, 4, 3).mapv(|v| v.abs() + 0.5));
    let rows = Arc::new(vec![true, false, true, true]);
    let labels = Arc::new(vec![0, 2, 1, 2]);
    let label_rows = Arc::new(vec![0, 1, 3]);
    let pairs = Arc::new(vec![(0, 1), (2, 2), (3, 0), (1, 3)]);

    let mut out = Vec::new();
    let mut check = |name: &'static str, inputs: &[Array2<f64>], f: &dyn Fn(&mut Tape, &[Var]) -> Var| {
        out.push((name, leaf_gradient_error(inputs, f)));
    };
    check("matmul", &[a.clone(), b.clone()], &|t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        contract(t, m, 1)
    });
    check("sparse apply", &[a.clone()], &|t, v| {
        let m = t.apply(Arc::clone(&sparse), v[0]).unwrap();
        contract(t, m, 2)
    });
    check("gram", &[a.clone()], &|t, v| {
        let m = t.gram(v[0]);
        contract(t, m, 3)
    });
    check("relu", &[signed.clone()], &|t, v| {
        let m = t.relu(v[0]);
        contract(t, m, 4)
    });
    check("sigmoid", &[a.clone()], &|t, v| {
        let m = t.sigmoid(v[0]);
        contract(t, m, 5)
    });
    check("add", &[a.clone(), c.clone()], &|t, v| {
        let m = t.add(v[0], v[1]).unwrap();
        contract(t, m, 6)
    });
    check("sub", &[a.clone(), c.clone()], &|t, v| {
        let m = t.sub(v[0], v[1]).unwrap();
        contract(t, m, 7)
    });
    check("affine", &[a.clone()], &|t, v| {
        let m = t.affine(v[0], -1.5, 0.25);
        contract(t, m, 8)
    });
    check("scale", &[a.clone()], &|t, v| {
        let m = t.scale(v[0], 3.0);
        contract(t, m, 9)
    });
    check("scale_by", &[s.clone(), a.clone()], &|t, v| {
        let m = t.scale_by(v[0], v[1]).unwrap();
        contract(t, m, 10)
    });
    check("mul_const", &[a.clone()], &|t, v| {
        let m = t.mul_const(v[0], Arc::new(c.clone())).unwrap();
        contract(t, m, 11)
    });
    check("transpose", &[a.clone()], &|t, v| {
        let m = t.transpose(v[0]);
        contract(t, m, 12)
    });
    check("row_softmax", &[a.clone()], &|t, v| {
        let m = t.row_softmax(v[0]);
        contract(t, m, 13)
    });
    check("add_row_bias", &[a.clone(), row.clone()], &|t, v| {
        let m = t.add_row_bias(v[0], v[1]).unwrap();
        contract(t, m, 14)
    });
    check("select_col", &[a.clone()], &|t, v| {
        let m = t.select_col(v[0], 1).unwrap();
        contract(t, m, 15)
    });
    check("scale_rows", &[a.clone(), col.clone()], &|t, v| {
        let m = t.scale_rows(v[0], v[1]).unwrap();
        contract(t, m, 16)
    });
    check("hstack", &[a.clone(), col.clone()], &|t, v| {
        let m = t.hstack(&[v[0], v[1]]).unwrap();
        contract(t, m, 17)
    });
    check("sum", &[a.clone()], &|t, v| t.sum(v[0]));
    check("pair_dots", &[a.clone()], &|t, v| {
        let m = t.pair_dots(v[0], Arc::clone(&pairs)).unwrap();
        contract(t, m, 18)
    });
    check("masked mse", &[a.clone()], &|t, v| {
        t.mse_loss_masked(v[0], Arc::new(c.clone()), Arc::clone(&rows)).unwrap()
    });
    check("weighted bce", &[a.clone()], &|t, v| {
        let p = t.sigmoid(v[0]);
        t.bce_loss_weighted(p, Arc::clone(&targets), Arc::clone(&weights)).unwrap()
    });
    check("cross entropy", &[a.clone()], &|t, v| {
        t.cross_entropy(v[0], Arc::clone(&labels), Arc::clone(&label_rows)).unwrap()
    });
    out
}

/// Finite-difference error of the joint loss on the six-node graph over
/// every model parameter, for the full model and the pseudo-siamese variant.
/// Similarity filters are built once from the unperturbed latent and held
/// fixed, as they are within one optimization step.
pub fn end_to_end_gradient_error(cfg: &TrainConfig) -> f64 {
    use saga::train::{forward, FilterCache, ModelParams, Problem};

    let (g, attrs) = six_node();
    let problem = Problem::new(g, attrs, cfg).unwrap();
    let mut model = ModelParams::new(4, cfg).unwrap();
    // move α, β and the attention away from their symmetric starting points
    let mut r = rng(5);
    for id in model.store.ids().collect::<Vec<_>>() {
        let noise = random_matrix(&mut r, model.store.value(id).nrows(), model.store.value(id).ncols());
        *model.store.value_mut(id) += &(noise * 0.3);
    }
    let mut cache = FilterCache::default();
    let mut pair_rng = rng(0);
    let mut tape = Tape::new();
    forward(&mut tape, &model, &problem, cfg, &mut cache, true, &mut pair_rng).unwrap();

    param_gradient_error(&model.store, |store, tape| {
        let m = ModelParams {
            store: store.clone(),
            ..model.clone()
        };
        let mut cache = cache.clone();
        let mut pair_rng = rng(0);
        forward(tape, &m, &problem, cfg, &mut cache, false, &mut pair_rng)
            .unwrap()
            .total
    })
}

/// Largest deviation of each library component from its brute-force oracle
/// on a random graph with `n` nodes.
pub fn oracle_deviations(seed: u64, n: usize) -> Vec<(&'static str, f64)> {
    use saga::autodiff::ParamStore;
    use saga::dca::{cosine_similarity, knn_filter, structure_constrained_filter};
    use saga::graph::{adjacency_powers, mask_missing_edges, normalize_adjacency};
    use saga::hsr::{decode_adjacency, fuse_paths, path_attention, structure_loss, structure_target, EdgeWeightMatrix, PathAttention};
    use saga::metrics::{ndcg_at_k, rank_dimensions, recall_at_k, RankingResult};
    use std::sync::Arc;

    let mut r = rng(seed);
    let g = random_graph(&mut r, n, 0.35);
    let observed = random_mask(&mut r, n);
    let (p, k, h) = (3, 2.min(n - 1), 3);
    let mut out = Vec::new();

    let norm = normalize_adjacency(&g);
    out.push(("normalization", max_abs_diff(&norm.matrix().to_dense(), &oracle_normalized(&g))));

    let powers = adjacency_powers(&norm, h).unwrap();
    let want = oracle_powers(&g, h);
    let dev = (1..=h)
        .map(|i| max_abs_diff(&powers.power(i).to_dense(), &want[i - 1]))
        .fold(0.0, f64::max);
    out.push(("powers", dev));

    let masked = mask_missing_edges(&powers, &observed).unwrap();
    let dev = (1..=h)
        .map(|i| max_abs_diff(&masked.power(i).to_dense(), &oracle_mask(&want[i - 1], &observed)))
        .fold(0.0, f64::max);
    out.push(("masking", dev));

    let z = random_matrix(&mut r, n, 3);
    let s = cosine_similarity(z.view());
    let mut s_off = s.values().clone();
    let mut want_s = oracle_cosine(&z);
    for i in 0..n {
        s_off[[i, i]] = 0.0;
        want_s[[i, i]] = 0.0;
    }
    out.push(("cosine similarity", max_abs_diff(&s_off, &want_s)));

    let knn = knn_filter(&s, k).unwrap();
    out.push(("knn filter", max_abs_diff(&knn.to_dense(), &oracle_knn(s.values(), k))));
    let sn = structure_constrained_filter(&s, &powers, p, k).unwrap();
    out.push((
        "structure filter",
        max_abs_diff(&sn.to_dense(), &oracle_structural(s.values(), &g, p, k)),
    ));

    let mut store = ParamStore::new();
    let att = PathAttention::new(&mut store, "att", h, 3).unwrap();
    for (&w, &b) in att.projections().iter().zip(att.biases()) {
        *store.value_mut(w) = random_matrix(&mut r, 3, 1);
        *store.value_mut(b) = random_matrix(&mut r, 1, 1);
    }
    let paths: Vec<Array2<f64>> = (0..h).map(|_| random_matrix(&mut r, n, 3)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = paths.iter().map(|p| tape.constant(p.clone())).collect();
    let a = path_attention(&mut tape, &store, &vars, &att).unwrap();
    let zs = fuse_paths(&mut tape, &vars, a).unwrap();
    let ws: Vec<Array2<f64>> = att.projections().iter().map(|&w| store.value(w).clone()).collect();
    let bs: Vec<f64> = att.biases().iter().map(|&b| store.scalar(b)).collect();
    let (want_a, want_z) = oracle_attention_and_fusion(&paths, &ws, &bs);
    out.push((
        "path attention and fusion",
        max_abs_diff(tape.value(a), &want_a).max(max_abs_diff(tape.value(zs), &want_z)),
    ));

    let gamma = 5.0;
    let a_hat = decode_adjacency(&mut tape, zs);
    let weights = EdgeWeightMatrix::new(observed.clone(), gamma).unwrap();
    let ls = structure_loss(
        &mut tape,
        a_hat,
        Arc::new(structure_target(&g)),
        Arc::new(weights.to_dense(true)),
    )
    .unwrap();
    let want_ls = oracle_structure_loss(&want_z, &g, &observed, gamma);
    out.push(("structure loss", (tape.scalar(ls) - want_ls).abs()));

    let d = 7;
    let scores = random_matrix(&mut r, n, d).mapv(|v| (v * 4.0).round());
    let truth: Vec<BTreeSet<usize>> = (0..n)
        .map(|_| {
            let mut t: BTreeSet<usize> = (0..d).filter(|_| r.gen_bool(0.4)).collect();
            t.insert(r.gen_range(0..d));
            t
        })
        .collect();
    let rankings: Vec<Vec<usize>> = (0..n).map(|i| rank_dimensions(scores.row(i))).collect();
    let oracle_rankings: Vec<Vec<usize>> = (0..n)
        .map(|i| oracle_ranking(&scores.row(i).to_vec()))
        .collect();
    let rank_dev = if rankings == oracle_rankings { 0.0 } else { 1.0 };
    let rr = RankingResult::new(rankings, truth.clone()).unwrap();
    let mut recall_dev: f64 = rank_dev;
    let mut ndcg_dev: f64 = rank_dev;
    for k in 1..=d {
        recall_dev = recall_dev.max((recall_at_k(&rr, k).unwrap() - oracle_recall(&oracle_rankings, &truth, k)).abs());
        ndcg_dev = ndcg_dev.max((ndcg_at_k(&rr, k).unwrap() - oracle_ndcg(&oracle_rankings, &truth, k)).abs());
    }
    out.push(("recall@k", recall_dev));
    out.push(("ndcg@k", ndcg_dev));
    out
}

/// Recall@3 on the missing rows of the 20-node two-block instance (30% of
/// nodes missing) for the full model and for the zero-fill GAE baseline,
/// trained under the same seed and defaults.
pub fn self_baseline_recall(seed: u64) -> (f64, f64) {
    use saga::metrics::profile_eval;
    use saga::split::{make_splits, SplitSpec};
    use saga::synthetic::{planted_partition, BlockSpec};
    use saga::train::{train, Problem};

    let bundle = planted_partition(&BlockSpec {
        seed,
        ..BlockSpec::default()
    })
    .unwrap();
    let splits = make_splits(
        &bundle,
        &SplitSpec {
            observed_fraction: 0.7,
            seed,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let attrs = splits.attributes(&bundle).unwrap();
    let missing = splits.missing_nodes();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let recall = |cfg: &TrainConfig| {
        let problem = Problem::new(bundle.graph.clone(), attrs.clone(), cfg).unwrap();
        let result = train(&problem, cfg).unwrap();
        profile_eval(result.xhat.view(), bundle.attributes.view(), &missing, &[3])
            .unwrap()
            .rows[0]
            .recall
    };
    (recall(&cfg), recall(&cfg.baseline()))
}
