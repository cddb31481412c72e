mod common;

use common::*;
use ndarray::Array2;
use saga::graph::AttributeMatrix;
use saga::split::{make_splits, SplitSpec};
use saga::synthetic::{planted_partition, BlockSpec};
use saga::train::{train, train_with_log, IterationRecord, Problem};
use saga::TrainConfig;

#[test]
fn full_model_is_not_worse_than_the_zero_fill_baseline() {
    let (full, gae) = self_baseline_recall(0);
    assert!(full >= gae, "full {full} vs baseline {gae}");
}

#[test]
fn a_single_observed_node_is_fitted_closely() {
    let (g, a) = six_node();
    let x = a.full().to_owned();
    let mut observed = vec![false; 6];
    observed[0] = true;
    let attrs = AttributeMatrix::new(x.clone(), observed).unwrap();
    let cfg = TrainConfig {
        lambda: 1e3,
        max_iters: 300,
        min_iters: 300,
        ..small_config()
    };
    let p = Problem::new(g, attrs, &cfg).unwrap();
    let r = train(&p, &cfg).unwrap();
    let l_a: Vec<f64> = r.trace.iter().map(|t| t.l_a).collect();
    assert!(l_a.last().unwrap() < &(l_a[0] * 1e-2), "{} -> {}", l_a[0], l_a.last().unwrap());
    let head: f64 = l_a[..50].iter().sum();
    let tail: f64 = l_a[250..].iter().sum();
    assert!(tail < head);
    let err: f64 = (0..4).map(|j| (r.xhat[[0, j]] - x[[0, j]]).powi(2)).sum::<f64>() / 4.0;
    assert!(err < 5e-3, "observed row error {err}");
}

#[test]
fn smoothed_loss_does_not_rise_early_on() {
    let bundle = planted_partition(&BlockSpec::default()).unwrap();
    let splits = make_splits(&bundle, &SplitSpec { observed_fraction: 0.7, ..SplitSpec::default() }).unwrap();
    let cfg = TrainConfig::default();
    let p = Problem::new(bundle.graph.clone(), splits.attributes(&bundle).unwrap(), &cfg).unwrap();
    let r = train(&p, &TrainConfig { max_iters: 500, ..cfg }).unwrap();
    let losses = r.losses();
    let windows: Vec<f64> = losses[..100].chunks(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0] * 1.05, "{windows:?}");
    }
}

#[test]
fn log_records_one_line_per_iteration() {
    let (g, a) = six_node();
    let cfg = TrainConfig { max_iters: 12, ..small_config() };
    let p = Problem::new(g, a, &cfg).unwrap();
    let mut buf = Vec::new();
    let r = train_with_log(&p, &cfg, Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), r.iterations());
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let rec: &IterationRecord = &r.trace[0];
    assert_eq!(first["iteration"], rec.iteration);
    assert_eq!(first["l_total"].as_f64().unwrap(), rec.l_total);
    for key in ["l_a", "l_s", "alpha", "beta"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn ablation_switches_change_the_graph_of_computation() {
    let (g, a) = six_node();
    let base = small_config();
    let run = |cfg: &TrainConfig| {
        let p = Problem::new(g.clone(), a.clone(), cfg).unwrap();
        train(&p, cfg).unwrap()
    };
    let gae = run(&TrainConfig { max_iters: 10, ..base.baseline() });
    assert!(gae.trace.iter().all(|t| t.l_s == 0.0));
    // without structure loss the joint loss is the weighted attribute loss
    for t in &gae.trace {
        assert!((t.l_total - base.lambda * t.l_a).abs() < 1e-12);
    }
    let hsr = run(&TrainConfig { max_iters: 10, enable_dca: false, ..base.clone() });
    assert!(hsr.trace.iter().all(|t| t.l_s > 0.0));
    // α is untouched when aggregation is off
    assert!(hsr.trace.iter().all(|t| t.alpha == base.alpha_init));
}

#[test]
fn config_guards() {
    assert!(TrainConfig { max_iters: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { max_iters: 499, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { gamma: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let (g, _) = six_node();
    let none = AttributeMatrix::new(Array2::zeros((6, 2)), vec![false; 6]).unwrap();
    assert!(Problem::new(g, none, &small_config()).is_err());
}
