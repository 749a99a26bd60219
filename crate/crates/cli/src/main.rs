//! `ccl-lab`: data generation, noise injection, training and diagnostics.
//!
//! Exit codes: 0 on success, 1 on a usage or validation error, 2 when a run
//! fails.

use std::path::PathBuf;
use std::process::ExitCode;

use ccl_core::data::{gen_blobs, BlobSpec, LabeledDataset};
use ccl_core::error::{Error, Result};
use ccl_core::gradcheck;
use ccl_core::harness::{apply_noise, split_assignment, ExperimentConfig, NoiseChoice, NoiseConfig};
use ccl_core::metrics::{mi_bound_check, Dump, SemanticMetrics, Taxonomy, VarianceOver};
use ccl_core::model::{AdamConfig, ModelPair};
use ccl_core::trainer::accuracy;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ccl-lab", version, about = "Co-trained learning with noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset container.
    GenData(GenData),
    /// Rewrite the noisy labels of a dataset container.
    InjectNoise(InjectNoise),
    /// Run an experiment from a TOML config.
    Train(Train),
    /// Score a checkpoint on the test split of a dataset.
    Eval(Eval),
    /// Semantic diagnostics on an embedding/logit dump.
    Metrics(Metrics),
    /// Finite-difference check of every loss gradient.
    Gradcheck(Gradcheck),
    /// Monte Carlo check of the mutual-information bound.
    MiCheck(MiCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    #[arg(long, default_value_t = 250)]
    test_per_class: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Symmetric,
    Pair,
    Instance,
}

#[derive(Args)]
struct InjectNoise {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseArg::Symmetric)]
    kind: NoiseArg,
    #[arg(long, default_value_t = 0.4)]
    tau0: f64,
    /// Standard deviation of per-sample flip rates for instance noise.
    #[arg(long, default_value_t = 0.1)]
    rate_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    /// Run this single seed instead of `output.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverArg {
    Probs,
    Logits,
}

#[derive(Args)]
struct Metrics {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, requires = "class_names")]
    taxonomy: Option<PathBuf>,
    /// Comma-separated taxonomy leaf per class index.
    #[arg(long, value_delimiter = ',', requires = "taxonomy")]
    class_names: Option<Vec<String>>,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OverArg::Probs)]
    variance_over: OverArg,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MiCheck {
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,64")]
    k: Vec<usize>,
    /// Batch sizes; values above K are clipped to K.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1")]
    tau: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{line}");
    Ok(())
}

fn gen_data(a: GenData) -> Result<bool> {
    let ds = gen_blobs(&BlobSpec {
        classes: a.classes,
        per_class: a.per_class,
        test_per_class: a.test_per_class,
        dim: a.dim,
        separation: a.separation,
        spread: a.spread,
        seed: a.seed,
    })?;
    ds.save(&a.out)?;
    Ok(true)
}

fn inject_noise(a: InjectNoise) -> Result<bool> {
    let ds = LabeledDataset::load(&a.data)?;
    let noise = NoiseConfig {
        kind: match a.kind {
            NoiseArg::Symmetric => NoiseChoice::Symmetric,
            NoiseArg::Pair => NoiseChoice::Pair,
            NoiseArg::Instance => NoiseChoice::Instance,
        },
        tau0: a.tau0,
        rate_sd: a.rate_sd,
        ..Default::default()
    };
    apply_noise(&ds, &noise, a.seed)?.save(&a.out)?;
    Ok(true)
}

fn train(a: Train) -> Result<bool> {
    let mut overrides = Vec::new();
    for s in &a.set {
        let (k, v) = split_assignment(s)?;
        overrides.push((k.to_string(), v.to_string()));
    }
    let mut flag = |k: &str, v: String| overrides.push((k.to_string(), v));
    if let Some(t) = a.tau0 {
        flag("noise.tau0", format!("{t:?}"));
    }
    if let Some(e) = a.epochs {
        flag("train.epochs", e.to_string());
    }
    if let Some(m) = a.method {
        flag("train.method", m);
    }
    if let Some(s) = a.seed {
        flag("output.seeds", format!("[{s}]"));
    }
    if let Some(o) = a.out {
        flag("output.dir", toml_string(&o.to_string_lossy()));
    }
    let cfg = ExperimentConfig::load(&a.config, &overrides)?;
    for run in ccl_core::harness::run_experiment(&cfg)? {
        print_json(&serde_json::json!({
            "seed": run.seed,
            "dir": run.dir,
            "summary": run.summary,
        }))?;
    }
    Ok(true)
}

/// Quotes a string as a TOML literal so paths are never reinterpreted.
fn toml_string(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn eval(a: Eval) -> Result<bool> {
    let (pair, _) = ModelPair::load(&a.checkpoint, AdamConfig::default())?;
    let ds = LabeledDataset::load(&a.data)?;
    print_json(&accuracy(&pair, &ds.test_set())?)?;
    Ok(true)
}

fn metrics(a: Metrics) -> Result<bool> {
    let dump = Dump::load(&a.dump)?;
    let tax = match (&a.taxonomy, a.class_names) {
        (Some(path), Some(names)) => Some((Taxonomy::load(path)?, names)),
        _ => None,
    };
    let over = match a.variance_over {
        OverArg::Probs => VarianceOver::Probs,
        OverArg::Logits => VarianceOver::Logits,
    };
    let tax_ref = tax.as_ref().map(|(t, n)| (t, n.as_slice()));
    print_json(&SemanticMetrics::from_dump(&dump, a.pairs, a.seed, over, tax_ref)?)?;
    Ok(true)
}

fn run_gradcheck(a: Gradcheck) -> Result<bool> {
    let reports = gradcheck::run_suite(a.points, a.seed)?;
    for r in &reports {
        print_json(r)?;
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn mi_check(a: MiCheck) -> Result<bool> {
    let mut ok = true;
    for &k in &a.k {
        let mut ns: Vec<usize> = a.n.iter().map(|&n| n.min(k)).collect();
        ns.dedup();
        for &n in &ns {
            for &tau in &a.tau {
                let r = mi_bound_check(k, n, tau, a.batches, a.seed)?;
                ok &= r.holds;
                print_json(&r)?;
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            return ExitCode::from(if help { 0 } else { 1 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::InjectNoise(a) => inject_noise(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Metrics(a) => metrics(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::MiCheck(a) => mi_check(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ccl-lab: check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("ccl-lab: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
