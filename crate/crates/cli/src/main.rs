use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use saga::classify::{classify_with_folds, stratified_folds, ClassificationReport, ClassifierConfig};
use saga::config::parse_key_values;
use saga::data::{load_attributes, load_dataset, save_attributes, save_dataset, DatasetBundle};
use saga::metrics::{profile_eval, ProfileReport, DEFAULT_KS};
use saga::synthetic::{planted_partition, BlockSpec};
use saga::split::{make_splits, read_splits, write_splits, SplitSpec, Splits};
use saga::train::{train_with_log, Problem, TrainResult};
use saga::TrainConfig;

#[derive(Parser)]
#[command(name = "saga", version, about = "Attribute imputation for graphs with attribute-missing nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its parameters, the imputed attributes and the log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write only the imputed attribute matrix.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
        /// Output attribute file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an imputed attribute matrix: profiling on missing nodes and
    /// node classification.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
        /// Imputed attributes to score.
        #[arg(long)]
        xhat: PathBuf,
        /// Cutoffs for Recall@K and NDCG@K.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        #[arg(long)]
        no_classify: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an observed/missing split and classification folds.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        settings: Settings,
        /// Output split file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a planted-partition dataset with block-correlated binary attributes.
    Generate {
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 8)]
        dims_per_block: usize,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        #[arg(long, default_value_t = 0.5)]
        attr_prob: f64,
        #[arg(long, default_value_t = 0.02)]
        noise_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the module variants under one seed and compare them.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: Settings,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        /// Also run node classification on every variant.
        #[arg(long)]
        classify: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory (edges.tsv, attributes.tsv, optional labels.tsv).
    #[arg(long)]
    data: PathBuf,
    /// Split file; generated from the split settings when absent.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct Settings {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for training and, for `split`, for the split itself.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    observed_fraction: Option<f64>,
    /// Write debug progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

struct Resolved {
    train: TrainConfig,
    split: SplitSpec,
    classifier: ClassifierConfig,
}

impl Settings {
    fn resolve(&self, seed_is_split_seed: bool) -> Result<Resolved> {
        let mut r = Resolved {
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            classifier: ClassifierConfig::default(),
        };
        let apply = |k: &str, v: &str, r: &mut Resolved| -> Result<()> {
            let known = r.train.set(k, v)? || r.split.set(k, v)? || r.classifier.set(k, v)?;
            if !known {
                bail!("unknown config key {k:?}");
            }
            Ok(())
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (k, v, line) in parse_key_values(&text)? {
                apply(&k, &v, &mut r).with_context(|| format!("{}:{line}", path.display()))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            apply(k.trim(), v.trim(), &mut r)?;
        }
        if let Some(s) = self.seed {
            if seed_is_split_seed {
                r.split.seed = s;
            } else {
                r.train.seed = s;
            }
        }
        if let Some(m) = self.max_iters {
            r.train.max_iters = m;
        }
        if let Some(lr) = self.lr {
            r.train.lr = lr;
        }
        if let Some(f) = self.observed_fraction {
            r.split.observed_fraction = f;
        }
        r.train.validate()?;
        r.split.validate()?;
        r.classifier.folds = r.split.folds;
        r.classifier.seed = r.split.seed;
        r.classifier.validate()?;
        Ok(r)
    }
}

fn load(data: &DataArgs, spec: &SplitSpec) -> Result<(DatasetBundle, Splits)> {
    let bundle = load_dataset(&data.data)
        .with_context(|| format!("loading dataset {}", data.data.display()))?;
    let splits = match &data.split {
        Some(p) => read_splits(p).with_context(|| format!("reading split {}", p.display()))?,
        None => make_splits(&bundle, spec)?,
    };
    Ok((bundle, splits))
}

fn fit(bundle: &DatasetBundle, splits: &Splits, cfg: &TrainConfig, log: Option<&Path>) -> Result<TrainResult> {
    let attrs = splits.attributes(bundle)?;
    let problem = Problem::new(bundle.graph.clone(), attrs, cfg)?;
    let result = match log {
        Some(path) => {
            let mut w = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            let r = train_with_log(&problem, cfg, Some(&mut w))?;
            w.flush()?;
            r
        }
        None => train_with_log(&problem, cfg, None)?,
    };
    log::info!(
        "trained {} iterations, final loss {:.6}",
        result.iterations(),
        result.trace.last().map_or(f64::NAN, |r| r.l_total)
    );
    Ok(result)
}

fn profile(bundle: &DatasetBundle, splits: &Splits, xhat: &ndarray::Array2<f64>, ks: &[usize]) -> Result<Option<ProfileReport>> {
    if !bundle.is_binary() {
        log::info!("attributes are not binary; skipping profiling");
        return Ok(None);
    }
    let missing = splits.missing_nodes();
    if missing.is_empty() {
        log::info!("no attribute-missing nodes; skipping profiling");
        return Ok(None);
    }
    Ok(Some(profile_eval(xhat.view(), bundle.attributes.view(), &missing, ks)?))
}

/// Split-file folds as the first repeat, further repeats drawn from the seed.
fn fold_assignments(labels: &[usize], splits: &Splits, cfg: &ClassifierConfig) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(cfg.repeats);
    if let Some(f) = &splits.folds {
        out.push(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    while out.len() < cfg.repeats {
        out.push(stratified_folds(labels, cfg.folds, &mut rng)?);
    }
    Ok(out)
}

fn classify(bundle: &DatasetBundle, splits: &Splits, xhat: &ndarray::Array2<f64>, cfg: &ClassifierConfig) -> Result<Option<ClassificationReport>> {
    let Some(labels) = &bundle.labels else {
        log::info!("dataset has no labels; skipping classification");
        return Ok(None);
    };
    let cfg = ClassifierConfig {
        folds: splits.spec.folds,
        seed: splits.spec.seed,
        ..cfg.clone()
    };
    let folds = fold_assignments(labels, splits, &cfg)?;
    Ok(Some(classify_with_folds(&bundle.graph, xhat, labels, &cfg, &folds)?))
}

fn write_text(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, settings, out } => {
            let r = settings.resolve(false)?;
            let (bundle, splits) = load(&data, &r.split)?;
            create_dir(&out)?;
            let result = fit(&bundle, &splits, &r.train, Some(&out.join("train_log.jsonl")))?;
            write_text(out.join("params.json"), result.model.store.to_json()?)?;
            save_attributes(&result.xhat, out.join("xhat.tsv"))?;
            write_text(out.join("config.json"), serde_json::to_string_pretty(&r.train)?)?;
            if data.split.is_none() {
                write_splits(&splits, out.join("split.tsv"))?;
            }
        }
        Command::Impute { data, settings, out } => {
            let r = settings.resolve(false)?;
            let (bundle, splits) = load(&data, &r.split)?;
            let result = fit(&bundle, &splits, &r.train, None)?;
            save_attributes(&result.xhat, &out)?;
        }
        Command::Evaluate {
            data,
            settings,
            xhat,
            ks,
            no_classify,
            out,
        } => {
            let r = settings.resolve(false)?;
            if data.split.is_none() {
                bail!("evaluate needs --split, the split the attributes were imputed under");
            }
            let (bundle, splits) = load(&data, &r.split)?;
            let xhat = load_attributes(&xhat)?;
            if xhat.dim() != bundle.attributes.dim() {
                bail!(
                    "imputed matrix is {:?}, dataset attributes are {:?}",
                    xhat.dim(),
                    bundle.attributes.dim()
                );
            }
            create_dir(&out)?;
            let prof = profile(&bundle, &splits, &xhat, &ks)?;
            if let Some(p) = &prof {
                write_text(out.join("profiling.tsv"), p.to_tsv())?;
                write_text(out.join("profiling.json"), serde_json::to_string_pretty(p)?)?;
                print!("{}", p.to_tsv());
            }
            if !no_classify {
                if let Some(c) = classify(&bundle, &splits, &xhat, &r.classifier)? {
                    write_text(out.join("classification.tsv"), c.to_tsv())?;
                    write_text(out.join("classification.json"), serde_json::to_string_pretty(&c)?)?;
                    println!("accuracy\t{:.6}\t{:.6}", c.mean, c.std);
                }
            }
        }
        Command::Split { data, settings, out } => {
            let r = settings.resolve(true)?;
            let bundle = load_dataset(&data)
                .with_context(|| format!("loading dataset {}", data.display()))?;
            let splits = make_splits(&bundle, &r.split)?;
            write_splits(&splits, &out)?;
        }
        Command::Generate {
            nodes,
            blocks,
            dims_per_block,
            p_in,
            p_out,
            attr_prob,
            noise_prob,
            seed,
            out,
        } => {
            let spec = BlockSpec {
                n_nodes: nodes,
                n_blocks: blocks,
                dims_per_block,
                p_in,
                p_out,
                attr_prob,
                noise_prob,
                seed,
            };
            save_dataset(&planted_partition(&spec)?, &out)?;
        }
        Command::Ablate {
            data,
            settings,
            ks,
            classify: with_classification,
            out,
        } => {
            let r = settings.resolve(false)?;
            let (bundle, splits) = load(&data, &r.split)?;
            create_dir(&out)?;
            let base = r.train.baseline();
            let variants = [
                ("gae", base.clone()),
                ("+dca", TrainConfig { enable_dca: true, ..base.clone() }),
                ("+hsr", TrainConfig { enable_hsr: true, ..base.clone() }),
                ("+ps", TrainConfig { enable_dca: true, enable_hsr: true, pseudo_siamese: true, ..base.clone() }),
                ("full", TrainConfig { enable_dca: true, enable_hsr: true, ..base }),
            ];
            let mut header = vec!["variant".to_string()];
            for k in &ks {
                header.push(format!("recall@{k}"));
                header.push(format!("ndcg@{k}"));
            }
            if with_classification {
                header.push("accuracy".into());
            }
            let mut table = header.join("\t") + "\n";
            let mut records = Vec::new();
            for (name, cfg) in &variants {
                log::info!("training variant {name}");
                let result = fit(&bundle, &splits, cfg, None)?;
                let prof = profile(&bundle, &splits, &result.xhat, &ks)?;
                let acc = if with_classification {
                    classify(&bundle, &splits, &result.xhat, &r.classifier)?.map(|c| c.mean)
                } else {
                    None
                };
                let mut row = vec![name.to_string()];
                for k in &ks {
                    match prof.as_ref().and_then(|p| p.at(*k)) {
                        Some(m) => {
                            row.push(format!("{:.6}", m.recall));
                            row.push(format!("{:.6}", m.ndcg));
                        }
                        None => row.extend(["-".to_string(), "-".to_string()]),
                    }
                }
                if with_classification {
                    row.push(acc.map_or("-".into(), |a| format!("{a:.6}")));
                }
                table.push_str(&(row.join("\t") + "\n"));
                records.push(json!({
                    "variant": name,
                    "iterations": result.iterations(),
                    "profiling": prof,
                    "accuracy": acc,
                }));
            }
            write_text(out.join("ablation.tsv"), &table)?;
            write_text(out.join("ablation.json"), serde_json::to_string_pretty(&records)?)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let verbose = match &cli.command {
        Command::Train { settings, .. }
        | Command::Impute { settings, .. }
        | Command::Evaluate { settings, .. }
        | Command::Split { settings, .. }
        | Command::Ablate { settings, .. } => settings.verbose,
        Command::Generate { .. } => false,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if verbose { "debug" } else { "info" }))
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
