//! Training loops: cross-entropy warm-up, the collaborative epoch, the
//! pseudo-label baseline and plain cross-entropy.
//!
//! Everything here sees only a [`TrainSet`] (features and noisy labels).
//! Evaluation against clean labels happens through the [`Evaluate`] hook.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{view_batch, AugmentPolicy};
use crate::data::TrainSet;
use crate::error::{Error, Result};
use crate::losses::{self, CclBatch, LossBreakdown, LossParams, Target};
use crate::model::{init_pair, AdamConfig, Architecture, Model, ModelPair};
use crate::refurbish::{self, collaborative_labels, rolr_pseudo_labels, LossView};
use crate::seeds::{self, SeedPlan};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ccl,
    Rolr,
    Ce,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ccl => "ccl",
            Method::Rolr => "rolr",
            Method::Ce => "ce",
        }
    }
}

/// View the peer scores when computing per-sample losses for the GMM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceView {
    #[default]
    Plain,
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub arch: Architecture,
    pub adam: AdamConfig,
    pub loss: LossParams,
    pub weak: AugmentPolicy,
    pub strong: AugmentPolicy,
    pub confidence_view: ConfidenceView,
    /// Sharpen the peer prediction inside the collaborative labels.
    pub sharpen_collaborative: bool,
    /// Skip the GMM and use this confidence for every sample.
    pub forced_omega: Option<f64>,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    pub eval_every: usize,
    pub seeds: SeedPlan,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs > 0 && self.warmup_epochs > self.epochs {
            errs.push(format!(
                "train.warmup_epochs ({}) must not exceed train.epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".into());
        }
        if !(self.loss.c > 0.0 && self.loss.c < 1.0) {
            errs.push(format!("train.c must lie in (0, 1), got {}", self.loss.c));
        }
        if !(self.loss.sharpen_t > 0.0) {
            errs.push(format!("train.T must be > 0, got {}", self.loss.sharpen_t));
        }
        if !(self.loss.tau > 0.0) {
            errs.push(format!("train.tau must be > 0, got {}", self.loss.tau));
        }
        if !(self.adam.lr > 0.0) {
            errs.push(format!("train.lr must be > 0, got {}", self.adam.lr));
        }
        if let Some(w) = self.forced_omega {
            if !(0.0..=1.0).contains(&w) {
                errs.push(format!("train.forced_omega must lie in [0, 1], got {w}"));
            }
        }
        if self.eval_every == 0 {
            errs.push("train.eval_every must be >= 1".into());
        }
        for (name, p) in [("augment.weak", &self.weak), ("augment.strong", &self.strong)] {
            if let Err(e) = p.validate() {
                errs.push(format!("{name}: {e}"));
            }
        }
        if let Err(e) = self.arch.validate() {
            errs.push(format!("model: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Ccl,
    Rolr,
    Ce,
}

/// Seeds that fully determine an epoch's randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSeeds {
    pub shuffle: u64,
    pub augment: u64,
}

impl EpochSeeds {
    fn for_epoch(plan: &SeedPlan, epoch: usize) -> Self {
        Self {
            shuffle: seeds::derive(plan.shuffle, &[epoch as u64]),
            augment: seeds::derive(plan.augment, &[epoch as u64]),
        }
    }
}

/// What one training epoch produced, before evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochOutput {
    pub epoch: usize,
    pub phase: Phase,
    pub losses: [LossBreakdown; 2],
    /// Per-model confidences over the train set (refurbishing phases only).
    pub omega: Option<[Vec<f64>; 2]>,
    /// Per-model refurbished hard labels over the train set.
    pub refurbished: Option<[Vec<usize>; 2]>,
    /// Whether the GMM fit fell back to `w = 0.5`.
    pub gmm_fallback: [bool; 2],
    pub seeds: EpochSeeds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub model0: f64,
    pub model1: f64,
    pub ensemble: f64,
}

/// Diagnostics that need clean labels, filled in by the evaluator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub m_embed: f64,
    pub m_logit: f64,
    pub class_variance_entropy: f64,
    pub lca: Option<f64>,
    /// Refurbished-label recovery on corrupted train samples, per model.
    pub recovery: [Option<f64>; 2],
    /// Mean confidence on clean and on corrupted train samples, per model.
    pub omega_clean: Option<[f64; 2]>,
    pub omega_corrupted: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub losses: [LossBreakdown; 2],
    pub accuracy: Option<Accuracy>,
    pub metrics: Option<EpochMetrics>,
    pub omega_mean: Option<[f64; 2]>,
    pub gmm_fallback: [bool; 2],
    pub rng: EpochSeeds,
    pub wall_time_s: f64,
}

fn batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn view_seeds(base: u64, idx: &[usize], kind: u64) -> Vec<u64> {
    idx.iter().map(|&i| seeds::derive(base, &[i as u64, kind])).collect()
}

fn apply_gradients(model: &mut Model, opt: &mut crate::model::AdamState, tape: &Tape, params: &[crate::tensor::Var]) -> Result<()> {
    let grads: Vec<Option<&[f64]>> = params.iter().map(|&p| tape.grad(p)).collect();
    let mut targets = model.params_mut();
    opt.step(&mut targets, &grads)
}

/// Stable per-(epoch, model) seeds.
fn model_seeds(epoch: EpochSeeds, m: usize) -> (u64, u64) {
    (
        seeds::derive(epoch.shuffle, &[m as u64]),
        seeds::derive(epoch.augment, &[m as u64]),
    )
}

/// One epoch of cross-entropy on weak views of the noisy labels for a
/// single model.
fn ce_epoch_model(pair: &mut ModelPair, m: usize, train: &TrainSet, cfg: &TrainConfig, seeds: EpochSeeds) -> Result<LossBreakdown> {
    let (shuffle, augment) = model_seeds(seeds, m);
    let mut parts = Vec::new();
    for idx in batches(train.len(), cfg.batch_size, shuffle) {
        let x = train.features.select_rows(&idx)?;
        let xw = view_batch(&x, &view_seeds(augment, &idx, 0), &cfg.weak)?;
        let y: Vec<usize> = idx.iter().map(|&i| train.noisy_labels[i]).collect();

        let mut tape = Tape::new();
        let bound = pair.models[m].bind(&mut tape, true);
        let xv = tape.constant(xw);
        let e = bound.encode(&mut tape, xv)?;
        let p = bound.classify(&mut tape, e)?;
        let loss = losses::cross_entropy(&mut tape, p, Target::Hard(&y))?;
        tape.backward(loss)?;
        let value = tape.value(loss).item()?;
        let (model, opt) = (&mut pair.models[m], &mut pair.optimizers[m]);
        apply_gradients(model, opt, &tape, &bound.params())?;
        parts.push(LossBreakdown {
            total: value,
            guided: value,
            ce: value,
            ..Default::default()
        });
    }
    Ok(LossBreakdown::mean_of(&parts))
}

/// Cross-entropy training of both models for `epochs` epochs starting at
/// `first_epoch`.
pub fn warmup(pair: &mut ModelPair, train: &TrainSet, cfg: &TrainConfig, first_epoch: usize, epochs: usize) -> Result<Vec<EpochOutput>> {
    (first_epoch..first_epoch + epochs)
        .map(|e| {
            let mut out = train_epoch_ce(pair, train, cfg, e)?;
            out.phase = Phase::Warmup;
            Ok(out)
        })
        .collect()
}

/// Plain cross-entropy epoch on noisy labels for both models.
pub fn train_epoch_ce(pair: &mut ModelPair, train: &TrainSet, cfg: &TrainConfig, epoch: usize) -> Result<EpochOutput> {
    let seeds = EpochSeeds::for_epoch(&cfg.seeds, epoch);
    let l0 = ce_epoch_model(pair, 0, train, cfg, seeds)?;
    let l1 = ce_epoch_model(pair, 1, train, cfg, seeds)?;
    Ok(EpochOutput {
        epoch,
        phase: Phase::Ce,
        losses: [l0, l1],
        omega: None,
        refurbished: None,
        gmm_fallback: [false; 2],
        seeds,
    })
}

fn confidence_for(peer: &Model, train: &TrainSet, cfg: &TrainConfig, seeds: EpochSeeds, m: usize) -> Result<(Vec<f64>, bool)> {
    if let Some(w) = cfg.forced_omega {
        return Ok((vec![w; train.len()], false));
    }
    let view = match cfg.confidence_view {
        ConfidenceView::Plain => LossView::Plain,
        ConfidenceView::Weak => LossView::Weak {
            policy: cfg.weak.clone(),
            seed: seeds::derive(seeds.augment, &[m as u64, 2]),
        },
    };
    let est = refurbish::estimate_confidence(peer, train, &view)?;
    let fallback = est.params.is_none();
    Ok((est.omega, fallback))
}

/// Weak and strong views of one batch for model `m`.
struct BatchViews {
    idx: Vec<usize>,
    weak: Tensor,
    strong: Tensor,
    labels: Vec<usize>,
}

fn batch_views(train: &TrainSet, cfg: &TrainConfig, idx: Vec<usize>, augment: u64) -> Result<BatchViews> {
    let x = train.features.select_rows(&idx)?;
    Ok(BatchViews {
        weak: view_batch(&x, &view_seeds(augment, &idx, 0), &cfg.weak)?,
        strong: view_batch(&x, &view_seeds(augment, &idx, 1), &cfg.strong)?,
        labels: idx.iter().map(|&i| train.noisy_labels[i]).collect(),
        idx,
    })
}

/// Trains model `m` for one epoch against the frozen `peer`, with the
/// collaborative objective. Returns the mean breakdown and the refurbished
/// hard label of every train sample.
fn ccl_model_epoch(
    pair: &mut ModelPair,
    m: usize,
    peer: &Model,
    omega: &[f64],
    train: &TrainSet,
    cfg: &TrainConfig,
    seeds: EpochSeeds,
) -> Result<(LossBreakdown, Vec<usize>)> {
    let (shuffle, augment) = model_seeds(seeds, m);
    let mut parts = Vec::new();
    let mut refurbished = vec![0usize; train.len()];
    let temperature = cfg.sharpen_collaborative.then_some(cfg.loss.sharpen_t);
    for idx in batches(train.len(), cfg.batch_size, shuffle) {
        let v = batch_views(train, cfg, idx, augment)?;
        let w_batch: Vec<f64> = v.idx.iter().map(|&i| omega[i]).collect();
        let peer_fwd = peer.forward(&v.weak)?;
        let collab = collaborative_labels(&w_batch, &v.labels, &peer_fwd.probs, temperature)?;
        for (k, &i) in v.idx.iter().enumerate() {
            refurbished[i] = collab.y_hard[k];
        }

        let mut tape = Tape::new();
        let bound = pair.models[m].bind(&mut tape, true);
        let xw = tape.constant(v.weak);
        let xs = tape.constant(v.strong);
        let emb_w = bound.encode(&mut tape, xw)?;
        let p_w = bound.classify(&mut tape, emb_w)?;
        let p_w_own = tape.value(p_w).clone();
        let emb_s = bound.encode(&mut tape, xs)?;
        let p_s = bound.classify(&mut tape, emb_s)?;
        let emb_w_peer = tape.constant(peer_fwd.embeddings);
        let batch = CclBatch {
            p_s,
            emb_s,
            emb_w,
            p_w_own: &p_w_own,
            p_w_peer: &peer_fwd.probs,
            emb_w_peer,
            noisy_labels: &v.labels,
            omega: &w_batch,
            collab_hard: &collab.y_hard,
            params: cfg.loss,
        };
        let (loss, breakdown) = losses::total_loss(&mut tape, &batch)?;
        tape.backward(loss)?;
        let (model, opt) = (&mut pair.models[m], &mut pair.optimizers[m]);
        apply_gradients(model, opt, &tape, &bound.params())?;
        parts.push(breakdown);
    }
    Ok((LossBreakdown::mean_of(&parts), refurbished))
}

/// Collaborative epoch: for `m = 0, 1`, estimate confidence through the
/// peer's pre-epoch snapshot, then train `m` against that snapshot.
pub fn train_epoch_ccl(pair: &mut ModelPair, train: &TrainSet, cfg: &TrainConfig, epoch: usize) -> Result<EpochOutput> {
    train_epoch_ccl_ordered(pair, train, cfg, epoch, [0, 1])
}

pub(crate) fn train_epoch_ccl_ordered(
    pair: &mut ModelPair,
    train: &TrainSet,
    cfg: &TrainConfig,
    epoch: usize,
    order: [usize; 2],
) -> Result<EpochOutput> {
    let seeds = EpochSeeds::for_epoch(&cfg.seeds, epoch);
    let snapshot = pair.models.clone();
    let mut losses = [LossBreakdown::default(); 2];
    let mut omegas: [Vec<f64>; 2] = Default::default();
    let mut refurbished: [Vec<usize>; 2] = Default::default();
    let mut fallback = [false; 2];
    for m in order {
        let peer = &snapshot[1 - m];
        let (omega, fb) = confidence_for(peer, train, cfg, seeds, m)?;
        let (l, r) = ccl_model_epoch(pair, m, peer, &omega, train, cfg, seeds)?;
        losses[m] = l;
        omegas[m] = omega;
        refurbished[m] = r;
        fallback[m] = fb;
    }
    Ok(EpochOutput {
        epoch,
        phase: Phase::Ccl,
        losses,
        omega: Some(omegas),
        refurbished: Some(refurbished),
        gmm_fallback: fallback,
        seeds,
    })
}

fn rolr_model_epoch(
    pair: &mut ModelPair,
    m: usize,
    peer: &Model,
    omega: &[f64],
    train: &TrainSet,
    cfg: &TrainConfig,
    seeds: EpochSeeds,
) -> Result<(LossBreakdown, Vec<usize>)> {
    let (shuffle, augment) = model_seeds(seeds, m);
    let mut parts = Vec::new();
    let mut refurbished = vec![0usize; train.len()];
    for idx in batches(train.len(), cfg.batch_size, shuffle) {
        let v = batch_views(train, cfg, idx, augment)?;
        let w_batch: Vec<f64> = v.idx.iter().map(|&i| omega[i]).collect();
        let p_w_peer = peer.forward(&v.weak)?.probs;
        let p_w_own = pair.models[m].forward(&v.weak)?.probs;
        let pseudo = rolr_pseudo_labels(&p_w_own, &p_w_peer, cfg.loss.sharpen_t)?;
        let refurb = collaborative_labels(&w_batch, &v.labels, &pseudo, None)?;
        for (k, &i) in v.idx.iter().enumerate() {
            refurbished[i] = refurb.y_hard[k];
        }

        let mut tape = Tape::new();
        let bound = pair.models[m].bind(&mut tape, true);
        let xs = tape.constant(v.strong);
        let emb_s = bound.encode(&mut tape, xs)?;
        let p_s = bound.classify(&mut tape, emb_s)?;
        let loss = losses::rolr_loss(&mut tape, p_s, &v.labels, &w_batch, &pseudo)?;
        tape.backward(loss)?;

        let ce = losses::cross_entropy_per_sample(&mut tape, p_s, Target::Hard(&v.labels))?;
        let pce = losses::cross_entropy_per_sample(&mut tape, p_s, Target::Soft(&pseudo))?;
        let n = w_batch.len() as f64;
        let (ce, pce) = (tape.value(ce).data(), tape.value(pce).data());
        parts.push(LossBreakdown {
            total: tape.value(loss).item()?,
            guided: w_batch.iter().zip(ce).map(|(w, l)| w * l).sum::<f64>() / n,
            refurb: w_batch.iter().zip(pce).map(|(w, l)| (1.0 - w) * l).sum::<f64>() / n,
            ce: ce.iter().sum::<f64>() / n,
            pseudo_ce: pce.iter().sum::<f64>() / n,
            ..Default::default()
        });
        let (model, opt) = (&mut pair.models[m], &mut pair.optimizers[m]);
        apply_gradients(model, opt, &tape, &bound.params())?;
    }
    Ok((LossBreakdown::mean_of(&parts), refurbished))
}

/// Pseudo-label baseline epoch: confidence-weighted mix of the noisy label
/// and the sharpened average of both models' weak predictions.
pub fn train_epoch_rolr(pair: &mut ModelPair, train: &TrainSet, cfg: &TrainConfig, epoch: usize) -> Result<EpochOutput> {
    let seeds = EpochSeeds::for_epoch(&cfg.seeds, epoch);
    let snapshot = pair.models.clone();
    let mut losses = [LossBreakdown::default(); 2];
    let mut omegas: [Vec<f64>; 2] = Default::default();
    let mut refurbished: [Vec<usize>; 2] = Default::default();
    let mut fallback = [false; 2];
    for m in 0..2 {
        let peer = &snapshot[1 - m];
        let (omega, fb) = confidence_for(peer, train, cfg, seeds, m)?;
        let (l, r) = rolr_model_epoch(pair, m, peer, &omega, train, cfg, seeds)?;
        losses[m] = l;
        omegas[m] = omega;
        refurbished[m] = r;
        fallback[m] = fb;
    }
    Ok(EpochOutput {
        epoch,
        phase: Phase::Rolr,
        losses,
        omega: Some(omegas),
        refurbished: Some(refurbished),
        gmm_fallback: fallback,
        seeds,
    })
}

/// Evaluation hook called after each epoch: returns accuracy and
/// clean-label diagnostics, or `None` to skip evaluation.
pub trait Evaluate {
    fn evaluate(&mut self, pair: &ModelPair, out: &EpochOutput) -> Result<(Accuracy, Option<EpochMetrics>)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Mean ensemble accuracy over the last `min(10, E - W)` epochs (the
    /// final warm-up epoch when `E == W`); `None` when nothing was evaluated.
    pub mean_accuracy: Option<f64>,
    pub window: usize,
    pub final_accuracy: Option<Accuracy>,
    pub final_metrics: Option<EpochMetrics>,
}

/// Mean ensemble accuracy over the reporting window.
pub fn summarize(cfg: &TrainConfig, records: &[EpochRecord]) -> Summary {
    let main = cfg.epochs.saturating_sub(cfg.warmup_epochs);
    let window = if main > 0 { main.min(10) } else { usize::from(cfg.epochs > 0) };
    let tail = &records[records.len().saturating_sub(window)..];
    let accs: Vec<f64> = tail.iter().filter_map(|r| r.accuracy.map(|a| a.ensemble)).collect();
    let last = records.last();
    Summary {
        method: cfg.method,
        epochs: cfg.epochs,
        warmup_epochs: cfg.warmup_epochs,
        mean_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
        window,
        final_accuracy: last.and_then(|r| r.accuracy),
        final_metrics: last.and_then(|r| r.metrics.clone()),
    }
}

/// Initializes a pair and trains it per `cfg`, handing each finished
/// epoch record to `emit`.
pub fn run_training(
    train: &TrainSet,
    cfg: &TrainConfig,
    eval: &mut dyn Evaluate,
    emit: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<(ModelPair, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train.dim() != cfg.arch.dims[0] || train.classes != cfg.arch.classes {
        return Err(Error::Config(format!(
            "model expects {} inputs and {} classes, data has {} and {}",
            cfg.arch.dims[0],
            cfg.arch.classes,
            train.dim(),
            train.classes
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut pair = init_pair(cfg.seeds.init0, cfg.seeds.init1, &cfg.arch, cfg.adam)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let out = if epoch < cfg.warmup_epochs {
            warmup(&mut pair, train, cfg, epoch, 1)?.remove(0)
        } else {
            match cfg.method {
                Method::Ccl => train_epoch_ccl(&mut pair, train, cfg, epoch)?,
                Method::Rolr => train_epoch_rolr(&mut pair, train, cfg, epoch)?,
                Method::Ce => train_epoch_ce(&mut pair, train, cfg, epoch)?,
            }
        };
        let due = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let (accuracy, metrics) = if due {
            let (a, m) = eval.evaluate(&pair, &out)?;
            (Some(a), m)
        } else {
            (None, None)
        };
        let omega_mean = out.omega.as_ref().map(|w| {
            [0, 1].map(|m| w[m].iter().sum::<f64>() / w[m].len().max(1) as f64)
        });
        let record = EpochRecord {
            epoch,
            phase: out.phase,
            losses: out.losses,
            accuracy,
            metrics,
            omega_mean,
            gmm_fallback: out.gmm_fallback,
            rng: out.seeds,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        emit(&record)?;
        records.push(record);
    }
    Ok((pair, records))
}

/// Evaluator that only reports test accuracy.
pub struct AccuracyOnly<'a>(pub &'a crate::data::EvalSet);

impl Evaluate for AccuracyOnly<'_> {
    fn evaluate(&mut self, pair: &ModelPair, _out: &EpochOutput) -> Result<(Accuracy, Option<EpochMetrics>)> {
        Ok((accuracy(pair, self.0)?, None))
    }
}

pub fn accuracy(pair: &ModelPair, test: &crate::data::EvalSet) -> Result<Accuracy> {
    use crate::metrics::{test_accuracy, test_accuracy_pair};
    Ok(Accuracy {
        model0: test_accuracy(&pair.models[0], test)?,
        model1: test_accuracy(&pair.models[1], test)?,
        ensemble: test_accuracy_pair(pair, test)?,
    })
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Ccl,
            epochs: 60,
            warmup_epochs: 10,
            batch_size: 128,
            arch: Architecture::new(vec![20, 64, 32], 4),
            adam: AdamConfig::default(),
            loss: LossParams::default(),
            weak: AugmentPolicy::weak(0.1),
            strong: AugmentPolicy::strong(0.3, 2, 0.1, 0.2),
            confidence_view: ConfidenceView::Plain,
            sharpen_collaborative: true,
            forced_omega: None,
            eval_every: 1,
            seeds: SeedPlan::from_master(0),
        }
    }
}
