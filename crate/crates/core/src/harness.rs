//! Experiment configuration, orchestration and metrics persistence.
//!
//! A config is a TOML file with sections `[data] [noise] [model] [train]
//! [augment] [metrics] [output]`. Every key has a default except
//! `data.source`. Unknown keys are rejected, all of them at once.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use toml::Table;

use crate::augment::AugmentPolicy;
use crate::data::noise::{build_transition_matrix, inject_instance_noise, inject_label_noise, InstanceNoise, NoiseKind};
use crate::data::{gen_blobs, BlobSpec, EvalSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{LossParams, PgTarget};
use crate::metrics::{label_recovery_rate, Dump, SemanticMetrics, Taxonomy, VarianceOver};
use crate::model::{Activation, AdamConfig, Architecture, ModelPair};
use crate::seeds::SeedPlan;
use crate::trainer::{
    accuracy, run_training, summarize, Accuracy, ConfidenceView, EpochMetrics, EpochOutput, EpochRecord, Evaluate, Method,
    Summary, TrainConfig,
};

/// Environment variable that overrides `output.dir`.
pub const OUT_ENV: &str = "CCL_LAB_OUT";

/// Identifier of the build that produced a run.
pub const BUILD_ID: &str = match option_env!("CCL_BUILD_ID") {
    Some(id) => id,
    None => "unknown",
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Blobs,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Option<DataSource>,
    /// Container file, for `source = "file"`.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: None,
            path: None,
            classes: 4,
            per_class: 1000,
            test_per_class: 250,
            dim: 20,
            separation: 4.0,
            spread: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseChoice {
    None,
    Symmetric,
    Pair,
    Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseChoice,
    pub tau0: f64,
    /// Pair-noise target of each class; cyclic `i -> i + 1` when absent.
    pub pair_map: Option<Vec<usize>>,
    /// Spread of per-sample flip rates for instance noise.
    pub rate_sd: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseChoice::Symmetric,
            tau0: 0.4,
            pair_map: None,
            rate_sd: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub embed_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            embed_dim: 32,
            embed_activation: Activation::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub c: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub tau: f64,
    pub pg_target: PgTarget,
    pub confidence_view: ConfidenceView,
    pub sharpen_collaborative: bool,
    pub forced_omega: Option<f64>,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let loss = LossParams::default();
        Self {
            method: Method::Ccl,
            epochs: 60,
            warmup_epochs: 10,
            batch_size: 128,
            lr: AdamConfig::default().lr,
            c: loss.c,
            t: loss.sharpen_t,
            tau: loss.tau,
            pg_target: loss.pg_target,
            confidence_view: ConfidenceView::Plain,
            sharpen_collaborative: true,
            forced_omega: None,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_jitter: f64,
    pub strong_jitter: f64,
    pub strong_ops: usize,
    pub mask_fraction: f64,
    pub op_magnitude: f64,
    /// `[height, width]` when features are image grids.
    pub image_shape: Option<[usize; 2]>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_jitter: 0.1,
            strong_jitter: 0.3,
            strong_ops: 2,
            mask_fraction: 0.1,
            op_magnitude: 0.2,
            image_shape: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Compute the semantic diagnostics at every evaluation.
    pub enabled: bool,
    pub n_pairs: usize,
    pub variance_over: VarianceOver,
    pub taxonomy: Option<PathBuf>,
    /// Taxonomy leaf name of each class, in class order.
    pub class_names: Option<Vec<String>>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_pairs: 2000,
            variance_over: VarianceOver::Probs,
            taxonomy: None,
            class_names: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub checkpoint: bool,
    pub dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            seeds: vec![0],
            checkpoint: true,
            dump: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub augment: AugmentConfig,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
}

/// Keys accepted in each section.
const SCHEMA: &[(&str, &[&str])] = &[
    ("data", &["source", "path", "classes", "per_class", "test_per_class", "dim", "separation", "spread"]),
    ("noise", &["kind", "tau0", "pair_map", "rate_sd"]),
    ("model", &["hidden", "embed_dim", "embed_activation"]),
    (
        "train",
        &[
            "method",
            "epochs",
            "warmup_epochs",
            "batch_size",
            "lr",
            "c",
            "T",
            "tau",
            "pg_target",
            "confidence_view",
            "sharpen_collaborative",
            "forced_omega",
            "eval_every",
        ],
    ),
    ("augment", &["weak_jitter", "strong_jitter", "strong_ops", "mask_fraction", "op_magnitude", "image_shape"]),
    ("metrics", &["enabled", "n_pairs", "variance_over", "taxonomy", "class_names"]),
    ("output", &["dir", "seeds", "checkpoint", "dump"]),
];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

fn unknown_keys(table: &Table) -> Vec<String> {
    let mut bad = Vec::new();
    for (section, value) in table {
        match (section_keys(section), value.as_table()) {
            (Some(keys), Some(inner)) => {
                bad.extend(inner.keys().filter(|k| !keys.contains(&k.as_str())).map(|k| format!("{section}.{k}")));
            }
            (Some(_), None) => bad.push(format!("{section} (must be a table)")),
            (None, _) => bad.push(section.clone()),
        }
    }
    bad
}

/// Parses a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `section.key` to `raw` (parsed as TOML) in `table`.
pub fn apply_override(table: &mut Table, path: &str, raw: &str) -> Result<()> {
    let (section, key) = path
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override {path:?} must look like section.key")))?;
    match section_keys(section) {
        Some(keys) if keys.contains(&key) => {}
        _ => return Err(Error::Validation(vec![format!("unknown key {path}")])),
    }
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(Table::new()));
    let inner = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{section} must be a table")))?;
    inner.insert(key.to_string(), parse_value(raw));
    Ok(())
}

/// Parses `key=value` into its two halves.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected section.key=value, got {s:?}")))
}

impl ExperimentConfig {
    /// Builds a config from TOML text plus `(section.key, value)` overrides
    /// applied in order, then `CCL_LAB_OUT` if `env_out` is given.
    pub fn from_toml(text: &str, overrides: &[(String, String)], env_out: Option<&str>) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        let bad = unknown_keys(&table);
        if !bad.is_empty() {
            return Err(Error::Validation(bad.into_iter().map(|k| format!("unknown key {k}")).collect()));
        }
        if let Some(dir) = env_out {
            apply_override(&mut table, "output.dir", &toml::Value::String(dir.to_string()).to_string())?;
        }
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; `CCL_LAB_OUT` overrides the file's `output.dir`, and
    /// explicit overrides win over both.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let env = std::env::var(OUT_ENV).ok();
        Self::from_toml(&text, overrides, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let d = &self.data;
        match d.source {
            None => errs.push("data.source is required (\"blobs\" or \"file\")".into()),
            Some(DataSource::File) if d.path.is_none() => errs.push("data.path is required when data.source = \"file\"".into()),
            Some(DataSource::Blobs) => {
                if d.classes < 2 {
                    errs.push(format!("data.classes must be >= 2, got {}", d.classes));
                }
                if d.per_class == 0 || d.test_per_class == 0 || d.dim == 0 {
                    errs.push("data.per_class, data.test_per_class and data.dim must be >= 1".into());
                }
                if !(d.separation >= 0.0) || !(d.spread > 0.0) {
                    errs.push("data.separation must be >= 0 and data.spread > 0".into());
                }
            }
            _ => {}
        }
        let n = &self.noise;
        if n.kind != NoiseChoice::None && !(0.0..1.0).contains(&n.tau0) {
            errs.push(format!("noise.tau0 must lie in [0, 1), got {}", n.tau0));
        }
        if !(n.rate_sd >= 0.0) {
            errs.push(format!("noise.rate_sd must be >= 0, got {}", n.rate_sd));
        }
        if self.model.embed_dim == 0 || self.model.hidden.contains(&0) {
            errs.push("model widths must be >= 1".into());
        }
        if self.metrics.n_pairs == 0 {
            errs.push("metrics.n_pairs must be >= 1".into());
        }
        if self.metrics.taxonomy.is_some() && self.metrics.class_names.is_none() {
            errs.push("metrics.class_names is required with metrics.taxonomy".into());
        }
        if self.output.seeds.is_empty() {
            errs.push("output.seeds must list at least one seed".into());
        }
        // field-level checks on the derived training config
        let t = &self.train;
        if self.train.epochs > 0 && t.warmup_epochs > t.epochs {
            errs.push(format!("train.warmup_epochs ({}) must not exceed train.epochs ({})", t.warmup_epochs, t.epochs));
        }
        if t.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".into());
        }
        if !(t.c > 0.0 && t.c < 1.0) {
            errs.push(format!("train.c must lie in (0, 1), got {}", t.c));
        }
        if !(t.t > 0.0) {
            errs.push(format!("train.T must be > 0, got {}", t.t));
        }
        if !(t.tau > 0.0) {
            errs.push(format!("train.tau must be > 0, got {}", t.tau));
        }
        if !(t.lr > 0.0) {
            errs.push(format!("train.lr must be > 0, got {}", t.lr));
        }
        if let Some(w) = t.forced_omega {
            if !(0.0..=1.0).contains(&w) {
                errs.push(format!("train.forced_omega must lie in [0, 1], got {w}"));
            }
        }
        if t.eval_every == 0 {
            errs.push("train.eval_every must be >= 1".into());
        }
        let a = &self.augment;
        if !(a.weak_jitter >= 0.0) || !(a.strong_jitter >= 0.0) {
            errs.push("augment jitter must be >= 0".into());
        }
        if !(0.0..1.0).contains(&a.mask_fraction) {
            errs.push(format!("augment.mask_fraction must lie in [0, 1), got {}", a.mask_fraction));
        }
        if !(0.0..1.0).contains(&a.op_magnitude) {
            errs.push(format!("augment.op_magnitude must lie in [0, 1), got {}", a.op_magnitude));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Training config for one master seed on data with `dim` inputs and
    /// `classes` classes.
    pub fn train_config(&self, seed: u64, dim: usize, classes: usize) -> TrainConfig {
        let t = &self.train;
        let mut dims = vec![dim];
        dims.extend(&self.model.hidden);
        dims.push(self.model.embed_dim);
        let mut weak = AugmentPolicy::weak(self.augment.weak_jitter);
        let mut strong = AugmentPolicy::strong(
            self.augment.strong_jitter,
            self.augment.strong_ops,
            self.augment.mask_fraction,
            self.augment.op_magnitude,
        );
        let shape = self.augment.image_shape.map(|[h, w]| (h, w));
        weak.image_shape = shape;
        strong.image_shape = shape;
        TrainConfig {
            method: t.method,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            batch_size: t.batch_size,
            arch: Architecture {
                dims,
                classes,
                embed_activation: self.model.embed_activation,
            },
            adam: AdamConfig { lr: t.lr, ..Default::default() },
            loss: LossParams {
                c: t.c,
                sharpen_t: t.t,
                tau: t.tau,
                pg_target: t.pg_target,
            },
            weak,
            strong,
            confidence_view: t.confidence_view,
            sharpen_collaborative: t.sharpen_collaborative,
            forced_omega: t.forced_omega,
            eval_every: t.eval_every,
            seeds: SeedPlan::from_master(seed),
        }
    }

    /// Clean dataset for one master seed.
    pub fn clean_dataset(&self, plan: &SeedPlan) -> Result<LabeledDataset> {
        let d = &self.data;
        match d.source {
            Some(DataSource::Blobs) => gen_blobs(&BlobSpec {
                classes: d.classes,
                per_class: d.per_class,
                test_per_class: d.test_per_class,
                dim: d.dim,
                separation: d.separation,
                spread: d.spread,
                seed: plan.data,
            }),
            Some(DataSource::File) => LabeledDataset::load(d.path.as_ref().expect("validated")),
            None => Err(Error::Config("data.source is required".into())),
        }
    }

    /// Dataset with the configured noise applied. A file that already
    /// carries noise is used as is only when `noise.kind = "none"`.
    pub fn dataset(&self, plan: &SeedPlan) -> Result<LabeledDataset> {
        let ds = self.clean_dataset(plan)?;
        apply_noise(&ds, &self.noise, plan.noise)
    }
}

pub fn apply_noise(ds: &LabeledDataset, noise: &NoiseConfig, seed: u64) -> Result<LabeledDataset> {
    let c = ds.classes();
    match noise.kind {
        NoiseChoice::None => Ok(ds.clone()),
        NoiseChoice::Symmetric => inject_label_noise(ds, &build_transition_matrix(NoiseKind::Symmetric, noise.tau0, c)?, seed),
        NoiseChoice::Pair => {
            let kind = match &noise.pair_map {
                Some(map) => NoiseKind::Pair { map: map.clone() },
                None => NoiseKind::cyclic_pair(c),
            };
            inject_label_noise(ds, &build_transition_matrix(kind, noise.tau0, c)?, seed)
        }
        NoiseChoice::Instance => inject_instance_noise(
            ds,
            InstanceNoise {
                tau0: noise.tau0,
                rate_sd: noise.rate_sd,
            },
            seed,
        ),
    }
}

/// Flattens nested JSON objects into `a.b.c` columns.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        other => out.push((prefix.to_string(), other.clone())),
    }
}

/// A record with every optional field present, used to fix CSV columns.
fn column_template() -> Vec<String> {
    let rec = EpochRecord {
        epoch: 0,
        phase: crate::trainer::Phase::Warmup,
        losses: Default::default(),
        accuracy: Some(Accuracy::default()),
        metrics: Some(EpochMetrics {
            lca: Some(0.0),
            recovery: [Some(0.0); 2],
            omega_clean: Some([0.0; 2]),
            omega_corrupted: Some([0.0; 2]),
            ..Default::default()
        }),
        omega_mean: Some([0.0; 2]),
        gmm_fallback: [false; 2],
        rng: crate::trainer::EpochSeeds { shuffle: 0, augment: 0 },
        wall_time_s: 0.0,
    };
    let mut cols = Vec::new();
    flatten("", &serde_json::to_value(&rec).expect("serializable"), &mut cols);
    cols.into_iter().map(|(k, _)| k).collect()
}

fn csv_cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

/// Append-only per-epoch JSONL stream with a mirrored CSV. Both files are
/// flushed after every record.
pub struct MetricsSink {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    columns: Vec<String>,
    dir: PathBuf,
    lines: usize,
}

impl MetricsSink {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e))
        };
        let columns = column_template();
        let mut csv = open("epochs.csv")?;
        writeln!(csv, "{}", columns.join(",")).map_err(|e| Error::io(dir.join("epochs.csv"), e))?;
        csv.flush().map_err(|e| Error::io(dir.join("epochs.csv"), e))?;
        Ok(Self {
            jsonl: open("epochs.jsonl")?,
            csv,
            columns,
            dir,
            lines: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn emit(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        let jp = self.dir.join("epochs.jsonl");
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io(&jp, e))?;
        self.jsonl.flush().map_err(|e| Error::io(&jp, e))?;

        let mut flat = Vec::new();
        flatten("", &serde_json::to_value(record).expect("serializable"), &mut flat);
        let row: Vec<String> = self
            .columns
            .iter()
            .map(|c| csv_cell(flat.iter().find(|(k, _)| k == c).map(|(_, v)| v)))
            .collect();
        let cp = self.dir.join("epochs.csv");
        writeln!(self.csv, "{}", row.join(",")).map_err(|e| Error::io(&cp, e))?;
        self.csv.flush().map_err(|e| Error::io(&cp, e))?;
        self.lines += 1;
        Ok(())
    }
}

pub fn emit_records(sink: &mut MetricsSink, records: &[EpochRecord]) -> Result<()> {
    records.iter().try_for_each(|r| sink.emit(r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub build_id: String,
    pub seed: u64,
    pub seeds: SeedPlan,
    pub config: ExperimentConfig,
    pub summary: Summary,
}

/// Evaluator with access to clean labels: test accuracy plus the semantic
/// diagnostics and refurbishment quality.
pub struct LabEvaluator<'a> {
    pub test: &'a EvalSet,
    pub train_clean: &'a [usize],
    pub train_noisy: &'a [usize],
    pub metrics: &'a MetricsConfig,
    pub taxonomy: Option<(Taxonomy, Vec<String>)>,
    pub seed: u64,
}

impl Evaluate for LabEvaluator<'_> {
    fn evaluate(&mut self, pair: &ModelPair, out: &EpochOutput) -> Result<(Accuracy, Option<EpochMetrics>)> {
        let acc = accuracy(pair, self.test)?;
        if !self.metrics.enabled {
            return Ok((acc, None));
        }
        let dump = Dump::compute(pair, self.test)?;
        let tax = self.taxonomy.as_ref().map(|(t, n)| (t, n.as_slice()));
        let sem = SemanticMetrics::from_dump(&dump, self.metrics.n_pairs, self.seed, self.metrics.variance_over, tax)?;
        let mut m = EpochMetrics {
            m_embed: sem.m_embed,
            m_logit: sem.m_logit,
            class_variance_entropy: sem.class_variance_entropy,
            lca: sem.lca,
            ..Default::default()
        };
        if let Some(r) = &out.refurbished {
            for k in 0..2 {
                m.recovery[k] = label_recovery_rate(&r[k], self.train_noisy, self.train_clean)?;
            }
        }
        if let Some(w) = &out.omega {
            let mean_where = |k: usize, corrupted: bool| {
                let v: Vec<f64> = (0..w[k].len())
                    .filter(|&i| (self.train_noisy[i] != self.train_clean[i]) == corrupted)
                    .map(|i| w[k][i])
                    .collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            if let (Some(a), Some(b)) = (mean_where(0, false), mean_where(1, false)) {
                m.omega_clean = Some([a, b]);
            }
            if let (Some(a), Some(b)) = (mean_where(0, true), mean_where(1, true)) {
                m.omega_corrupted = Some([a, b]);
            }
        }
        Ok((acc, Some(m)))
    }
}

/// Result of one seed of an experiment.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub pair: ModelPair,
    pub records: Vec<EpochRecord>,
    pub summary: Summary,
}

fn load_taxonomy(m: &MetricsConfig) -> Result<Option<(Taxonomy, Vec<String>)>> {
    match (&m.taxonomy, &m.class_names) {
        (Some(path), Some(names)) => Ok(Some((Taxonomy::load(path)?, names.clone()))),
        _ => Ok(None),
    }
}

/// Runs one master seed and writes `seed-<s>/` under the output directory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let plan = SeedPlan::from_master(seed);
    let ds = cfg.dataset(&plan)?;
    let train = ds.train_set();
    let test = ds.test_set();
    let clean = ds.train_clean_labels();
    let tcfg = cfg.train_config(seed, ds.dim(), ds.classes());
    tcfg.validate()?;

    let dir = cfg.output.dir.join(format!("seed-{seed}"));
    let mut sink = MetricsSink::create(&dir)?;
    ds.save(dir.join("data.ccl"))?;
    let mut eval = LabEvaluator {
        test: &test,
        train_clean: &clean,
        train_noisy: &train.noisy_labels,
        metrics: &cfg.metrics,
        taxonomy: load_taxonomy(&cfg.metrics)?,
        seed: plan.metrics,
    };
    let (pair, records) = run_training(&train, &tcfg, &mut eval, &mut |r| sink.emit(r))?;
    let summary = summarize(&tcfg, &records);

    let steps = pair.optimizers[0].steps();
    if cfg.output.checkpoint {
        pair.save(steps, dir.join("checkpoint.ccl"))?;
    }
    if cfg.output.dump {
        Dump::compute(&pair, &test)?.save(dir.join("dump.ccl"))?;
    }
    let file = SummaryFile {
        build_id: BUILD_ID.to_string(),
        seed,
        seeds: plan,
        config: cfg.clone(),
        summary: summary.clone(),
    };
    let sp = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))?;
    Ok(SeedRun {
        seed,
        dir,
        pair,
        records,
        summary,
    })
}

/// Runs every configured seed in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.output.seeds.iter().map(|&s| run_seed(cfg, s)).collect()
}

/// Removes wall-time fields from a JSONL line for reproducibility checks.
pub fn mask_wall_time(line: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(line).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_time_s");
    }
    Ok(v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nsource = \"blobs\"\n";

    fn tiny(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
[data]
source = "blobs"
classes = 3
per_class = 30
test_per_class = 10
dim = 4
separation = 5.0

[model]
hidden = [8]
embed_dim = 4

[train]
epochs = 3
warmup_epochs = 1
batch_size = 32

[metrics]
n_pairs = 50

[output]
dir = "{}"
seeds = [7]
"#,
            dir.display()
        );
        ExperimentConfig::from_toml(&text, &[], None).unwrap()
    }

    #[test]
    fn defaults_are_documented_values() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, &[], None).unwrap();
        assert_eq!(cfg.train.c, 0.95);
        assert_eq!(cfg.train.t, 0.5);
        assert_eq!(cfg.train.tau, 0.1);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.batch_size, 128);
        let echo = serde_json::to_value(&cfg).unwrap();
        assert_eq!(echo["train"]["T"], 0.5);
        assert_eq!(echo["train"]["c"], 0.95);
        assert_eq!(echo["noise"]["tau0"], 0.4);
    }

    #[test]
    fn out_of_range_c_names_the_field() {
        let text = format!("{MINIMAL}[train]\nc = 1.5\n");
        let err = ExperimentConfig::from_toml(&text, &[], None).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("train.c"), "{err}");
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text = format!("{MINIMAL}bogus = 1\n[train]\nepochz = 3\n[extra]\nx = 1\n");
        let err = ExperimentConfig::from_toml(&text, &[], None).unwrap_err().to_string();
        for key in ["data.bogus", "train.epochz", "extra"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn missing_dataset_source_is_rejected() {
        let err = ExperimentConfig::from_toml("", &[], None).unwrap_err();
        assert!(err.is_validation() && err.to_string().contains("data.source"));
    }

    #[test]
    fn overrides_take_precedence() {
        let text = format!("{MINIMAL}[noise]\ntau0 = 0.2\n[output]\ndir = \"a\"\n");
        let o = vec![("noise.tau0".to_string(), "0.4".to_string())];
        let cfg = ExperimentConfig::from_toml(&text, &o, None).unwrap();
        assert_eq!(cfg.noise.tau0, 0.4);
        assert_eq!(cfg.output.dir, PathBuf::from("a"));

        let cfg = ExperimentConfig::from_toml(&text, &[], Some("b")).unwrap();
        assert_eq!(cfg.output.dir, PathBuf::from("b"));
        let o = vec![("output.dir".to_string(), "c".to_string())];
        let cfg = ExperimentConfig::from_toml(&text, &o, Some("b")).unwrap();
        assert_eq!(cfg.output.dir, PathBuf::from("c"));

        let bad = vec![("train.nope".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml(&text, &bad, None).unwrap_err().is_validation());
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, &[], None).unwrap();
        let echoed = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&echoed, &[], None).unwrap(), cfg);
    }

    #[test]
    fn run_writes_mirrored_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let runs = run_experiment(&cfg).unwrap();
        let dir = &runs[0].dir;
        let jsonl = std::fs::read_to_string(dir.join("epochs.jsonl")).unwrap();
        let csv = std::fs::read_to_string(dir.join("epochs.csv")).unwrap();
        assert_eq!(jsonl.lines().count(), 3);
        assert_eq!(csv.lines().count(), jsonl.lines().count() + 1);
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert!(csv.lines().all(|l| l.split(',').count() == header.len()));

        let summary: SummaryFile = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.config, cfg);
        assert_eq!(summary.summary, runs[0].summary);
        for f in ["checkpoint.ccl", "dump.ccl", "data.ccl"] {
            assert!(dir.join(f).exists(), "{f}");
        }

        // rerun from the echoed config reproduces the records
        let again = run_seed(&summary.config, summary.seed).unwrap();
        let masked = |s: &str| s.lines().map(|l| mask_wall_time(l).unwrap()).collect::<Vec<_>>();
        let jsonl2 = std::fs::read_to_string(again.dir.join("epochs.jsonl")).unwrap();
        assert_eq!(masked(&jsonl), masked(&jsonl2));
    }

    #[test]
    fn zero_epochs_give_empty_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny(tmp.path());
        cfg.train.epochs = 0;
        cfg.train.warmup_epochs = 0;
        let run = run_seed(&cfg, 1).unwrap();
        assert_eq!(std::fs::read_to_string(run.dir.join("epochs.jsonl")).unwrap(), "");
        assert_eq!(run.summary.mean_accuracy, None);
        let s: Value = serde_json::from_str(&std::fs::read_to_string(run.dir.join("summary.json")).unwrap()).unwrap();
        assert!(s["summary"]["mean_accuracy"].is_null());
    }

    #[test]
    fn noisy_file_cannot_be_noised_again() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let plan = SeedPlan::from_master(1);
        let noisy = cfg.dataset(&plan).unwrap();
        let err = apply_noise(&noisy, &cfg.noise, 3).unwrap_err();
        assert!(err.is_validation());
    }
}
