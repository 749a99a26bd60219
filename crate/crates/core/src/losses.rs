//! Loss terms of the co-training objective and the pseudo-label baseline.
//!
//! Per-sample variants return an `[N, 1]` column so the trainer can weight
//! samples by their label confidence before averaging. Contrastive terms
//! L2-normalize embeddings and divide similarities by a temperature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Tolerance for "this row is a probability distribution".
const SIMPLEX_TOL: f64 = 1e-6;

/// `p_i^(1/T) / sum_j p_j^(1/T)` for a single distribution.
pub fn sharpen_row(p: &[f64], temperature: f64) -> Vec<f64> {
    // Work in log space so tiny probabilities with small T do not underflow
    // into an all-zero row.
    let logs: Vec<f64> = p
        .iter()
        .map(|&x| if x > 0.0 { x.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Row-wise sharpening of a batch of distributions.
pub fn sharpen(p: &Tensor, temperature: f64) -> Result<Tensor> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config(format!("sharpening temperature must be > 0, got {temperature}")));
    }
    check_simplex(p, "sharpen input")?;
    let data = p.row_iter().flat_map(|r| sharpen_row(r, temperature)).collect();
    Tensor::new(p.shape().to_vec(), data)
}

fn check_simplex(t: &Tensor, what: &str) -> Result<()> {
    for (i, row) in t.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&x| x < -SIMPLEX_TOL || !x.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Contract(format!("{what}: row {i} is not a distribution")));
        }
    }
    Ok(())
}

/// Class labels as one-hot rows.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} out of range for {classes} classes")));
        }
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Hard(&'a [usize]),
    Soft(&'a Tensor),
}

fn neg_row_dot_log(tape: &mut Tape, p: Var, target: Tensor) -> Result<Var> {
    let lp = tape.safe_log(p)?;
    let y = tape.constant(target);
    let prod = tape.mul(lp, y)?;
    let rs = tape.row_sums(prod)?;
    tape.scalar_mul(rs, -1.0)
}

/// `-sum_i target_i log p_i` for each row, as `[N, 1]`.
pub fn cross_entropy_per_sample(tape: &mut Tape, p: Var, target: Target<'_>) -> Result<Var> {
    let shape = tape.value(p).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("predictions must be [N, C], got {shape:?}")));
    }
    let target = match target {
        Target::Hard(labels) => {
            if labels.len() != shape[0] {
                return Err(Error::Dimension(format!(
                    "{} labels for {} predictions",
                    labels.len(),
                    shape[0]
                )));
            }
            one_hot(labels, shape[1])?
        }
        Target::Soft(t) => {
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "target shape {:?} vs predictions {shape:?}",
                    t.shape()
                )));
            }
            check_simplex(t, "soft target")?;
            t.clone()
        }
    };
    neg_row_dot_log(tape, p, target)
}

/// Batch mean of the cross-entropy.
pub fn cross_entropy(tape: &mut Tape, p: Var, target: Target<'_>) -> Result<Var> {
    let per = cross_entropy_per_sample(tape, p, target)?;
    tape.mean(per)
}

fn column(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::matrix(n, 1, values).expect("column shape")
}

fn check_weights(omega: &[f64], n: usize) -> Result<()> {
    if omega.len() != n {
        return Err(Error::Dimension(format!("{} confidences for {n} samples", omega.len())));
    }
    if let Some(w) = omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Contract(format!("confidence {w} outside [0, 1]")));
    }
    Ok(())
}

/// Refurbished-label loss of the pseudo-label baseline:
/// `mean_j [w_j CE(p_s, y_noisy) + (1 - w_j) CE(p_s, pseudo)]`.
pub fn rolr_loss(
    tape: &mut Tape,
    p_s: Var,
    y_noisy: &[usize],
    omega: &[f64],
    pseudo: &Tensor,
) -> Result<Var> {
    let n = tape.value(p_s).rows();
    check_weights(omega, n)?;
    let ce_label = cross_entropy_per_sample(tape, p_s, Target::Hard(y_noisy))?;
    let ce_pseudo = cross_entropy_per_sample(tape, p_s, Target::Soft(pseudo))?;
    let w = tape.constant(column(omega.to_vec()));
    let wc = tape.constant(column(omega.iter().map(|w| 1.0 - w).collect()));
    let a = tape.mul(ce_label, w)?;
    let b = tape.mul(ce_pseudo, wc)?;
    let s = tape.add(a, b)?;
    tape.mean(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    StrongToWeak,
    WeakToStrong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    WithinModel,
    CrossModel,
}

/// Row-stochastic softmax over temperature-scaled cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveDistribution {
    pub q: Tensor,
    pub direction: Direction,
    pub scope: Scope,
    pub temperature: f64,
}

/// `cos(a_j, c_k) / tau` as an `[N, N]` matrix on the tape.
pub fn similarity(tape: &mut Tape, anchors: Var, candidates: Var, tau: f64) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let (sa, sc) = (tape.value(anchors).shape(), tape.value(candidates).shape());
    if sa.len() != 2 || sa != sc {
        return Err(Error::Dimension(format!(
            "anchor shape {sa:?} vs candidate shape {sc:?}"
        )));
    }
    if sa[0] == 0 {
        return Err(Error::Contract("contrastive terms need N >= 1".into()));
    }
    let a = tape.l2_normalize_rows(anchors)?;
    let c = tape.l2_normalize_rows(candidates)?;
    let ct = tape.transpose(c)?;
    let s = tape.matmul(a, ct)?;
    tape.scalar_mul(s, 1.0 / tau)
}

pub fn contrastive_distribution(
    anchors: &Tensor,
    candidates: &Tensor,
    tau: f64,
    direction: Direction,
    scope: Scope,
) -> Result<ContrastiveDistribution> {
    let mut tape = Tape::new();
    let a = tape.constant(anchors.clone());
    let c = tape.constant(candidates.clone());
    let s = similarity(&mut tape, a, c, tau)?;
    let q = tape.softmax_rows(s)?;
    Ok(ContrastiveDistribution {
        q: tape.take(q),
        direction,
        scope,
        temperature: tau,
    })
}

/// `-log q_jj` from a similarity matrix.
fn diagonal_nll(tape: &mut Tape, sim: Var) -> Result<Var> {
    let n = tape.value(sim).rows();
    let lq = tape.log_softmax_rows(sim)?;
    let eye = tape.constant(Tensor::identity(n));
    let diag = tape.mul(lq, eye)?;
    let rs = tape.row_sums(diag)?;
    tape.scalar_mul(rs, -1.0)
}

/// `KL(softmax(S)_j || softmax(S^T)_j)` per row.
fn mimicry_kl(tape: &mut Tape, sim: Var) -> Result<Var> {
    let st = tape.transpose(sim)?;
    let lp = tape.log_softmax_rows(sim)?;
    let lq = tape.log_softmax_rows(st)?;
    let p = tape.exp(lp)?;
    let diff = tape.sub(lp, lq)?;
    let prod = tape.mul(p, diff)?;
    tape.row_sums(prod)
}

/// `-log sum_{k: y_k = y_j} q_jk` per anchor.
fn class_positive_nll(tape: &mut Tape, sim: Var, labels: &[usize]) -> Result<Var> {
    let n = tape.value(sim).rows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} anchors", labels.len())));
    }
    let mut mask = Tensor::zeros(&[n, n]);
    for j in 0..n {
        for k in 0..n {
            if labels[j] == labels[k] {
                mask.data_mut()[j * n + k] = 1.0;
            }
        }
    }
    let q = tape.softmax_rows(sim)?;
    let m = tape.constant(mask);
    let pos = tape.mul(q, m)?;
    let mass = tape.row_sums(pos)?;
    let lm = tape.safe_log(mass)?;
    tape.scalar_mul(lm, -1.0)
}

/// Augmentation-wise contrastive loss, strong anchors against weak candidates.
pub fn acl_per_sample(tape: &mut Tape, emb_s: Var, emb_w: Var, tau: f64) -> Result<Var> {
    let s = similarity(tape, emb_s, emb_w, tau)?;
    diagonal_nll(tape, s)
}

pub fn acl_loss(tape: &mut Tape, emb_s: Var, emb_w: Var, tau: f64) -> Result<Var> {
    let per = acl_per_sample(tape, emb_s, emb_w, tau)?;
    tape.mean(per)
}

/// View-wise mimicry: `KL(q^{s->w} || q^{w->s})` per row, both sides live.
pub fn vm_per_sample(tape: &mut Tape, emb_s: Var, emb_w: Var, tau: f64) -> Result<Var> {
    let s = similarity(tape, emb_s, emb_w, tau)?;
    mimicry_kl(tape, s)
}

pub fn vm_loss(tape: &mut Tape, emb_s: Var, emb_w: Var, tau: f64) -> Result<Var> {
    let per = vm_per_sample(tape, emb_s, emb_w, tau)?;
    tape.mean(per)
}

/// How the predicted-guidance term turns the weak prediction into a target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgTarget {
    /// The weak-view distribution itself.
    #[default]
    Soft,
    /// One-hot of its argmax.
    Hard,
}

fn pg_targets(p_w: &Tensor, c: f64, mode: PgTarget) -> Result<Tensor> {
    check_simplex(p_w, "weak prediction")?;
    let cols = p_w.cols();
    let mut t = Tensor::zeros(p_w.shape());
    for (i, row) in p_w.row_iter().enumerate() {
        let top = crate::tensor::argmax(row);
        if row[top] < c {
            continue;
        }
        let dst = &mut t.data_mut()[i * cols..(i + 1) * cols];
        match mode {
            PgTarget::Soft => dst.copy_from_slice(row),
            PgTarget::Hard => dst[top] = 1.0,
        }
    }
    Ok(t)
}

/// Predicted guidance: cross-entropy of the strong prediction against the
/// (detached) weak prediction, only where the weak prediction is confident.
pub fn pg_per_sample(tape: &mut Tape, p_w: &Tensor, p_s: Var, c: f64, mode: PgTarget) -> Result<Var> {
    if tape.value(p_s).shape() != p_w.shape() {
        return Err(Error::Dimension(format!(
            "weak prediction {:?} vs strong prediction {:?}",
            p_w.shape(),
            tape.value(p_s).shape()
        )));
    }
    let target = pg_targets(p_w, c, mode)?;
    neg_row_dot_log(tape, p_s, target)
}

pub fn pg_loss(tape: &mut Tape, p_w: &Tensor, p_s: Var, c: f64, mode: PgTarget) -> Result<Var> {
    let per = pg_per_sample(tape, p_w, p_s, c, mode)?;
    tape.mean(per)
}

/// Collaborative contrastive loss on refurbished labels: strong anchors of
/// the current model against weak candidates of the peer, positives are
/// candidates sharing the anchor's refurbished class.
pub fn cclrl_per_sample(
    tape: &mut Tape,
    emb_s_m: Var,
    emb_w_peer: Var,
    labels_hard: &[usize],
    tau: f64,
) -> Result<Var> {
    let s = similarity(tape, emb_s_m, emb_w_peer, tau)?;
    class_positive_nll(tape, s, labels_hard)
}

pub fn cclrl_loss(
    tape: &mut Tape,
    emb_s_m: Var,
    emb_w_peer: Var,
    labels_hard: &[usize],
    tau: f64,
) -> Result<Var> {
    let per = cclrl_per_sample(tape, emb_s_m, emb_w_peer, labels_hard, tau)?;
    tape.mean(per)
}

/// Model-wise mimicry: `KL(q_{m->peer}^{s->w} || q_{peer->m}^{w->s})` per row.
pub fn mm_per_sample(tape: &mut Tape, emb_s_m: Var, emb_w_peer: Var, tau: f64) -> Result<Var> {
    vm_per_sample(tape, emb_s_m, emb_w_peer, tau)
}

pub fn mm_loss(tape: &mut Tape, emb_s_m: Var, emb_w_peer: Var, tau: f64) -> Result<Var> {
    let per = mm_per_sample(tape, emb_s_m, emb_w_peer, tau)?;
    tape.mean(per)
}

/// `KL(uniform || batch-mean prediction)`.
pub fn div_loss(tape: &mut Tape, p_s: Var) -> Result<Var> {
    let shape = tape.value(p_s).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("diversity term needs N >= 1, got {shape:?}")));
    }
    let classes = shape[1] as f64;
    let mean = tape.col_means(p_s)?;
    let lm = tape.safe_log(mean)?;
    let s = tape.sum(lm)?;
    let scaled = tape.scalar_mul(s, -1.0 / classes)?;
    let offset = tape.constant(Tensor::scalar(-classes.ln()));
    tape.add(scaled, offset)
}

/// Means of every loss component over one batch.
///
/// `guided` is the confidence-weighted label term and `refurb` the
/// `(1 - w) / 2`-weighted sum of the cross-view and cross-model terms, so
/// `total = guided + refurb + div` always. The plain component fields are
/// unweighted batch means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub guided: f64,
    pub refurb: f64,
    pub ce: f64,
    pub pg: f64,
    pub acl: f64,
    pub vm: f64,
    pub cclrl: f64,
    pub mm: f64,
    pub div: f64,
    pub cvl: f64,
    pub cml: f64,
    pub cml_ce: f64,
    /// Cross-entropy against pseudo-labels (baseline only).
    pub pseudo_ce: f64,
}

impl LossBreakdown {
    /// Largest deviation between `total` and its composition.
    pub fn reconciliation_error(&self) -> f64 {
        (self.total - (self.guided + self.refurb + self.div)).abs()
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean_of(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.total += b.total / n;
            acc.guided += b.guided / n;
            acc.refurb += b.refurb / n;
            acc.ce += b.ce / n;
            acc.pg += b.pg / n;
            acc.acl += b.acl / n;
            acc.vm += b.vm / n;
            acc.cclrl += b.cclrl / n;
            acc.mm += b.mm / n;
            acc.div += b.div / n;
            acc.cvl += b.cvl / n;
            acc.cml += b.cml / n;
            acc.cml_ce += b.cml_ce / n;
            acc.pseudo_ce += b.pseudo_ce / n;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Confidence threshold of the predicted-guidance term.
    pub c: f64,
    /// Sharpening temperature for the peer's prediction.
    pub sharpen_t: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub pg_target: PgTarget,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            c: 0.95,
            sharpen_t: 0.5,
            tau: 0.1,
            pg_target: PgTarget::Soft,
        }
    }
}

/// Everything the objective of model `m` needs for one batch.
///
/// `p_s`, `emb_s`, `emb_w` belong to the model being trained. `p_w_own` is
/// its weak prediction, used only as a detached target. The peer's tensors
/// come from a frozen snapshot.
pub struct CclBatch<'a> {
    pub p_s: Var,
    pub emb_s: Var,
    pub emb_w: Var,
    pub p_w_own: &'a Tensor,
    pub p_w_peer: &'a Tensor,
    pub emb_w_peer: Var,
    pub noisy_labels: &'a [usize],
    pub omega: &'a [f64],
    pub collab_hard: &'a [usize],
    pub params: LossParams,
}

fn mean_value(tape: &Tape, v: Var) -> f64 {
    let d = tape.value(v).data();
    d.iter().sum::<f64>() / d.len().max(1) as f64
}

/// Overall objective: `mean[w CE(p_s, y)] + mean[(1 - w)/2 (L_CVL + L_CML)] + L_div`
/// with `L_CVL = PG + ACL + VM` and `L_CML = CE(p_s, sharpen(p_w_peer)) + CCLRL + MM`.
pub fn total_loss(tape: &mut Tape, b: &CclBatch<'_>) -> Result<(Var, LossBreakdown)> {
    let n = tape.value(b.p_s).rows();
    check_weights(b.omega, n)?;
    let LossParams { c, sharpen_t, tau, pg_target } = b.params;

    let ce = cross_entropy_per_sample(tape, b.p_s, Target::Hard(b.noisy_labels))?;
    let pg = pg_per_sample(tape, b.p_w_own, b.p_s, c, pg_target)?;
    let sim_own = similarity(tape, b.emb_s, b.emb_w, tau)?;
    let acl = diagonal_nll(tape, sim_own)?;
    let vm = mimicry_kl(tape, sim_own)?;
    let peer_target = sharpen(b.p_w_peer, sharpen_t)?;
    let cml_ce = cross_entropy_per_sample(tape, b.p_s, Target::Soft(&peer_target))?;
    let sim_cross = similarity(tape, b.emb_s, b.emb_w_peer, tau)?;
    let cclrl = class_positive_nll(tape, sim_cross, b.collab_hard)?;
    let mm = mimicry_kl(tape, sim_cross)?;
    let div = div_loss(tape, b.p_s)?;

    let cvl_a = tape.add(pg, acl)?;
    let cvl = tape.add(cvl_a, vm)?;
    let cml_a = tape.add(cml_ce, cclrl)?;
    let cml = tape.add(cml_a, mm)?;

    let w = tape.constant(column(b.omega.to_vec()));
    let half = tape.constant(column(b.omega.iter().map(|w| 0.5 * (1.0 - w)).collect()));
    let weighted_ce = tape.mul(ce, w)?;
    let guided = tape.mean(weighted_ce)?;
    let views = tape.add(cvl, cml)?;
    let weighted_views = tape.mul(views, half)?;
    let refurb = tape.mean(weighted_views)?;
    let partial = tape.add(guided, refurb)?;
    let total = tape.add(partial, div)?;

    let breakdown = LossBreakdown {
        total: tape.value(total).item()?,
        guided: tape.value(guided).item()?,
        refurb: tape.value(refurb).item()?,
        ce: mean_value(tape, ce),
        pg: mean_value(tape, pg),
        acl: mean_value(tape, acl),
        vm: mean_value(tape, vm),
        cclrl: mean_value(tape, cclrl),
        mm: mean_value(tape, mm),
        div: tape.value(div).item()?,
        cvl: mean_value(tape, cvl),
        cml: mean_value(tape, cml),
        cml_ce: mean_value(tape, cml_ce),
        pseudo_ce: 0.0,
    };
    Ok((total, breakdown))
}
