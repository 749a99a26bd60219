//! Label confidence from a two-component GMM over per-sample losses, and the
//! refurbished labels built from it.

use serde::{Deserialize, Serialize};

use crate::augment::{view_batch, AugmentPolicy};
use crate::data::TrainSet;
use crate::error::{Error, Result};
use crate::losses::sharpen;
use crate::model::Model;
use crate::seeds;
use crate::tensor::Tensor;

/// Variance floor for both mixture components.
pub const VAR_FLOOR: f64 = 1e-6;

/// Which input the peer scores when computing per-sample losses.
#[derive(Clone, Debug, PartialEq)]
pub enum LossView {
    Plain,
    /// Weak augmentation, one derived seed per sample.
    Weak { policy: AugmentPolicy, seed: u64 },
}

/// `-log p_{y_i}` of the peer model on every training sample.
pub fn per_sample_losses(peer: &Model, train: &TrainSet, view: &LossView) -> Result<Vec<f64>> {
    let x = match view {
        LossView::Plain => train.features.clone(),
        LossView::Weak { policy, seed } => {
            let s: Vec<u64> = (0..train.len() as u64).map(|i| seeds::derive(*seed, &[i])).collect();
            view_batch(&train.features, &s, policy)?
        }
    };
    let fwd = peer.forward(&x)?;
    Ok(train
        .noisy_labels
        .iter()
        .zip(fwd.probs.row_iter())
        .map(|(&y, p)| -p[y].max(crate::tensor::LOG_EPS).ln())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Mean log-likelihood after initialization and after every EM step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6 }
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Component log densities `log(pi_k N(x; mu_k, var_k))`.
fn weighted_logs(p: &GmmParams, x: f64) -> [f64; 2] {
    [0, 1].map(|k| p.weights[k].ln() + log_normal(x, p.means[k], p.variances[k]))
}

fn mean_log_likelihood(p: &GmmParams, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let [a, b] = weighted_logs(p, x);
            log_sum_exp(a, b)
        })
        .sum::<f64>()
        / xs.len() as f64
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// EM fit of a two-component 1D Gaussian mixture, started from the 10th and
/// 90th percentiles. Component 0 has the smaller mean on return.
pub fn gmm_fit_1d(xs: &[f64], opts: GmmOptions) -> Result<GmmParams> {
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 values, got {}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("GMM input contains non-finite values".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::DegenerateFit(format!("all {} values equal {min}", xs.len())));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);
    let (mut m0, mut m1) = (quantile(&sorted, 0.1), quantile(&sorted, 0.9));
    if m0 == m1 {
        (m0, m1) = (min, max);
    }
    let mut p = GmmParams {
        means: [m0, m1],
        variances: [var, var],
        weights: [0.5, 0.5],
        log_likelihood: Vec::new(),
    };
    let mut ll = mean_log_likelihood(&p, xs);
    p.log_likelihood.push(ll);

    let mut resp = vec![0.0; xs.len()];
    for _ in 0..opts.max_iters {
        // E-step: responsibility of component 0
        for (r, &x) in resp.iter_mut().zip(xs) {
            let [a, b] = weighted_logs(&p, x);
            *r = (a - log_sum_exp(a, b)).exp();
        }
        // M-step
        let mut next = p.clone();
        for k in 0..2 {
            let w: Vec<f64> = resp.iter().map(|r| if k == 0 { *r } else { 1.0 - r }).collect();
            let nk: f64 = w.iter().sum();
            next.weights[k] = nk / n;
            if nk <= 0.0 {
                continue;
            }
            let mu = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / nk;
            let v = w.iter().zip(xs).map(|(w, x)| w * (x - mu).powi(2)).sum::<f64>() / nk;
            next.means[k] = mu;
            next.variances[k] = v.max(VAR_FLOOR);
        }
        let next_ll = mean_log_likelihood(&next, xs);
        next.log_likelihood.push(next_ll);
        let gain = next_ll - ll;
        p = next;
        ll = next_ll;
        if gain < opts.tol {
            break;
        }
    }

    if p.means[0] > p.means[1] {
        p.means.swap(0, 1);
        p.variances.swap(0, 1);
        p.weights.swap(0, 1);
    }
    Ok(p)
}

/// Posterior of the low-mean component.
pub fn posterior_low(params: &GmmParams, x: f64) -> f64 {
    let [a, b] = weighted_logs(params, x);
    (a - log_sum_exp(a, b)).exp()
}

/// Per-sample confidence `w_i`: posterior probability that loss `l_i`
/// belongs to the low-mean component.
///
/// Outside `[mu0, mu1]` the posterior is not allowed to fall below (above)
/// its value at the nearest mean. Without this, a wider high-loss
/// component would claim the very smallest losses.
pub fn confidence(params: &GmmParams, losses: &[f64]) -> Vec<f64> {
    let [m0, m1] = params.means;
    let at_m0 = posterior_low(params, m0);
    let at_m1 = posterior_low(params, m1);
    losses
        .iter()
        .map(|&l| {
            let w = posterior_low(params, l);
            if l < m0 {
                w.max(at_m0)
            } else if l > m1 {
                w.min(at_m1)
            } else {
                w
            }
        })
        .collect()
}

/// Result of one confidence estimation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceEstimate {
    pub omega: Vec<f64>,
    pub losses: Vec<f64>,
    /// `None` when the fit was degenerate and `omega` fell back to 0.5.
    pub params: Option<GmmParams>,
}

/// Per-sample losses under `peer`, GMM fit, posterior. A degenerate fit
/// falls back to `w = 0.5` everywhere.
pub fn estimate_confidence(peer: &Model, train: &TrainSet, view: &LossView) -> Result<ConfidenceEstimate> {
    let losses = per_sample_losses(peer, train, view)?;
    match gmm_fit_1d(&losses, GmmOptions::default()) {
        Ok(params) => Ok(ConfidenceEstimate {
            omega: confidence(&params, &losses),
            losses,
            params: Some(params),
        }),
        Err(Error::DegenerateFit(_)) => Ok(ConfidenceEstimate {
            omega: vec![0.5; losses.len()],
            losses,
            params: None,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefurbishedLabels {
    pub y_soft: Tensor,
    pub y_hard: Vec<usize>,
}

/// `y' = w * onehot(y) + (1 - w) * sharpen(p_w_peer, T)` row by row.
/// `temperature = None` skips sharpening.
pub fn collaborative_labels(
    omega: &[f64],
    y_noisy: &[usize],
    p_w_peer: &Tensor,
    temperature: Option<f64>,
) -> Result<RefurbishedLabels> {
    let (n, c) = (p_w_peer.rows(), p_w_peer.cols());
    if omega.len() != n || y_noisy.len() != n {
        return Err(Error::Dimension(format!(
            "{} confidences and {} labels for {n} predictions",
            omega.len(),
            y_noisy.len()
        )));
    }
    let peer = match temperature {
        Some(t) => sharpen(p_w_peer, t)?,
        None => p_w_peer.clone(),
    };
    let mut soft = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let w = omega[i];
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Contract(format!("confidence {w} outside [0, 1]")));
        }
        if y_noisy[i] >= c {
            return Err(Error::Contract(format!("label {} out of range", y_noisy[i])));
        }
        let row = &mut soft.data_mut()[i * c..(i + 1) * c];
        for (dst, p) in row.iter_mut().zip(peer.row(i)) {
            *dst = (1.0 - w) * p;
        }
        row[y_noisy[i]] += w;
    }
    let y_hard = soft.argmax_rows();
    Ok(RefurbishedLabels { y_soft: soft, y_hard })
}

/// `sharpen((p0 + p1) / 2, T)`: pseudo-labels of the averaged pair.
pub fn rolr_pseudo_labels(p_w_0: &Tensor, p_w_1: &Tensor, temperature: f64) -> Result<Tensor> {
    if p_w_0.shape() != p_w_1.shape() {
        return Err(Error::Dimension(format!(
            "prediction shapes {:?} and {:?}",
            p_w_0.shape(),
            p_w_1.shape()
        )));
    }
    let avg: Vec<f64> = p_w_0.data().iter().zip(p_w_1.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    sharpen(&Tensor::new(p_w_0.shape().to_vec(), avg)?, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Architecture, Layer};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// A 1-layer model whose logits equal `scale * onehot(x)` for inputs
    /// that are one-hot vectors.
    fn lookup_model(c: usize, scale: f64) -> Model {
        let mut w = Tensor::zeros(&[c, c]);
        for i in 0..c {
            w.data_mut()[i * c + i] = scale;
        }
        let eye = Layer {
            weight: Tensor::identity(c),
            bias: Tensor::zeros(&[c]),
            activation: Activation::Identity,
        };
        Model {
            encoder: vec![eye],
            classifier: Layer {
                weight: w,
                bias: Tensor::zeros(&[c]),
                activation: Activation::Identity,
            },
        }
    }

    fn train_set(x: Tensor, labels: Vec<usize>, c: usize) -> TrainSet {
        TrainSet {
            features: x,
            noisy_labels: labels,
            classes: c,
            feature_sd: 1.0,
        }
    }

    #[test]
    fn per_sample_loss_examples() {
        let x = Tensor::identity(3);
        let uniform = lookup_model(3, 0.0);
        let ts = train_set(x.clone(), vec![0, 1, 2], 3);
        for l in per_sample_losses(&uniform, &ts, &LossView::Plain).unwrap() {
            assert!((l - 3f64.ln()).abs() < 1e-12);
        }
        let sharp = lookup_model(3, 200.0);
        for l in per_sample_losses(&sharp, &ts, &LossView::Plain).unwrap() {
            assert!(l.abs() < 1e-12);
        }
        // hand case: logits 1 on the sample's own index
        let m = lookup_model(3, 1.0);
        let ts = train_set(x, vec![0, 2, 1], 3);
        let got = per_sample_losses(&m, &ts, &LossView::Plain).unwrap();
        let e = std::f64::consts::E;
        let hit = -(e / (e + 2.0)).ln();
        let miss = -(1.0 / (e + 2.0)).ln();
        assert!((got[0] - hit).abs() < 1e-12);
        assert!((got[1] - miss).abs() < 1e-12);
        assert!((got[2] - miss).abs() < 1e-12);
    }

    #[test]
    fn weak_view_losses_are_deterministic() {
        let arch = Architecture::new(vec![4, 8, 3], 3);
        let m = Model::init(&arch, 1).unwrap();
        let x = Tensor::matrix(5, 4, (0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        let ts = train_set(x, vec![0, 1, 2, 0, 1], 3);
        let view = LossView::Weak {
            policy: AugmentPolicy::weak(0.1),
            seed: 5,
        };
        let a = per_sample_losses(&m, &ts, &view).unwrap();
        assert_eq!(a, per_sample_losses(&m, &ts, &view).unwrap());
        assert_ne!(a, per_sample_losses(&m, &ts, &LossView::Plain).unwrap());
    }

    #[test]
    fn gmm_separated_clusters() {
        let p = gmm_fit_1d(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], GmmOptions::default()).unwrap();
        assert!(p.means[0].abs() < 1e-6);
        assert!((p.means[1] - 10.0).abs() < 1e-6);
        assert!((p.weights[0] - 0.5).abs() < 1e-6);
        assert_eq!(p.variances, [VAR_FLOOR, VAR_FLOOR]);
    }

    #[test]
    fn gmm_symmetric_midpoint_is_half() {
        let xs = [3.0, 3.5, 4.0, 6.0, 6.5, 7.0];
        let p = gmm_fit_1d(&xs, GmmOptions::default()).unwrap();
        assert!((posterior_low(&p, 5.0) - 0.5).abs() < 1e-9);
        assert!((confidence(&p, &[5.0])[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gmm_degenerate_inputs() {
        assert!(matches!(gmm_fit_1d(&[2.0; 5], GmmOptions::default()), Err(Error::DegenerateFit(_))));
        assert!(matches!(gmm_fit_1d(&[2.0], GmmOptions::default()), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn gmm_log_likelihood_is_monotone() {
        let mut rng = seeds::rng(17);
        for _ in 0..50 {
            let n = rng.random_range(5..300);
            let a = Normal::new(rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0)).unwrap();
            let b = Normal::new(rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0)).unwrap();
            let xs: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.4) { a.sample(&mut rng) } else { b.sample(&mut rng) })
                .collect();
            let p = gmm_fit_1d(&xs, GmmOptions::default()).unwrap();
            for w in p.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{:?}", p.log_likelihood);
            }
            assert!(p.means[0] <= p.means[1]);
        }
    }

    #[test]
    fn confidence_tails() {
        let p = GmmParams {
            means: [1.0, 4.0],
            variances: [0.5, 0.5],
            weights: [0.6, 0.4],
            log_likelihood: vec![],
        };
        let w = confidence(&p, &[-20.0, 30.0]);
        assert!(w[0] > 1.0 - 1e-12);
        assert!(w[1] < 1e-12);

        // a wide high-loss component must not capture the smallest losses
        let wide = GmmParams {
            means: [0.1, 2.0],
            variances: [0.01, 1.0],
            weights: [0.5, 0.5],
            log_likelihood: vec![],
        };
        let w = confidence(&wide, &[-1.0, 0.1]);
        assert!(w[0] >= w[1]);
        assert!(posterior_low(&wide, -1.0) < 0.5);
    }

    #[test]
    fn collaborative_label_examples() {
        let peer = Tensor::from_rows(&[[0.6, 0.4]]).unwrap();
        let r = collaborative_labels(&[1.0], &[0], &peer, Some(0.5)).unwrap();
        assert_eq!(r.y_soft.data(), &[1.0, 0.0]);
        let r = collaborative_labels(&[0.0], &[0], &peer, Some(1.0)).unwrap();
        assert!((r.y_soft.data()[0] - 0.6).abs() < 1e-15);
        let r = collaborative_labels(&[0.5], &[0], &peer, Some(1.0)).unwrap();
        assert!((r.y_soft.data()[0] - 0.8).abs() < 1e-15);
        assert!((r.y_soft.data()[1] - 0.2).abs() < 1e-15);
        assert_eq!(r.y_hard, vec![0]);
        let r = collaborative_labels(&[0.1], &[0], &peer, None).unwrap();
        assert_eq!(r.y_hard, vec![0]);
        let r = collaborative_labels(&[0.1], &[1], &Tensor::from_rows(&[[0.9, 0.1]]).unwrap(), None).unwrap();
        assert_eq!(r.y_hard, vec![0]);
    }

    #[test]
    fn rolr_pseudo_label_examples() {
        let u = Tensor::from_rows(&[[0.25; 4]]).unwrap();
        let r = rolr_pseudo_labels(&u, &u, 0.3).unwrap();
        assert!(r.data().iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p0 = Tensor::from_rows(&[[0.9, 0.1]]).unwrap();
        let p1 = Tensor::from_rows(&[[0.7, 0.3]]).unwrap();
        let r = rolr_pseudo_labels(&p0, &p1, 1.0).unwrap();
        assert!((r.data()[0] - 0.8).abs() < 1e-12);
        let r = rolr_pseudo_labels(&p0, &p1, 0.5).unwrap();
        assert!((r.data()[0] - 0.941176).abs() < 1e-6);
        assert!((r.data()[1] - 0.058824).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn refurbished_rows_on_simplex(
                w in proptest::collection::vec(0.0f64..=1.0, 6),
                raw in proptest::collection::vec(0.001f64..1.0, 18),
                t in 0.05f64..3.0,
                y in proptest::collection::vec(0usize..3, 6),
            ) {
                let mut raw = raw;
                for r in raw.chunks_mut(3) {
                    let s: f64 = r.iter().sum();
                    r.iter_mut().for_each(|x| *x /= s);
                }
                let p = Tensor::matrix(6, 3, raw).unwrap();
                let r = collaborative_labels(&w, &y, &p, Some(t)).unwrap();
                for (i, row) in r.y_soft.row_iter().enumerate() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert_eq!(r.y_hard[i], crate::tensor::argmax(row));
                }
            }
        }
    }
}
