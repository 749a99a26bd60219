//! Weak and strong views of feature vectors.
//!
//! The weak view jitters coordinates (plus a one-cell shift and a horizontal
//! flip when the features are an image grid). The strong view applies a few
//! random coordinate ops, heavier jitter, and zeroes one contiguous block of
//! coordinates. Both are pure functions of `(x, seed, policy)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub kind: ViewKind,
    pub jitter_sd: f64,
    pub mask_fraction: f64,
    pub n_strong_ops: usize,
    pub op_magnitude: f64,
    /// `(height, width)` when features are a row-major image, channel-major
    /// if `dim` is a multiple of `height * width`.
    pub image_shape: Option<(usize, usize)>,
}

impl AugmentPolicy {
    pub fn weak(jitter_sd: f64) -> Self {
        Self {
            kind: ViewKind::Weak,
            jitter_sd,
            mask_fraction: 0.0,
            n_strong_ops: 0,
            op_magnitude: 0.0,
            image_shape: None,
        }
    }

    pub fn strong(jitter_sd: f64, n_strong_ops: usize, mask_fraction: f64, op_magnitude: f64) -> Self {
        Self {
            kind: ViewKind::Strong,
            jitter_sd,
            mask_fraction,
            n_strong_ops,
            op_magnitude,
            image_shape: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jitter_sd.is_nan() || self.jitter_sd < 0.0 {
            return Err(Error::Config(format!("jitter_sd must be >= 0, got {}", self.jitter_sd)));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config(format!(
                "mask_fraction must lie in [0, 1), got {}",
                self.mask_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.op_magnitude) {
            return Err(Error::Config(format!(
                "op_magnitude must lie in [0, 1), got {}",
                self.op_magnitude
            )));
        }
        if self.kind == ViewKind::Weak && (self.mask_fraction != 0.0 || self.n_strong_ops != 0) {
            return Err(Error::Config(
                "a weak policy cannot mask coordinates or apply strong ops".into(),
            ));
        }
        if let Some((h, w)) = self.image_shape {
            if h == 0 || w == 0 {
                return Err(Error::Config("image_shape dimensions must be > 0".into()));
            }
        }
        Ok(())
    }
}

fn jitter(x: &mut [f64], sd: f64, rng: &mut impl Rng) {
    if sd > 0.0 {
        let n = Normal::new(0.0, sd).expect("sd > 0");
        x.iter_mut().for_each(|v| *v += n.sample(rng));
    }
}

/// Random shift by at most one cell (zero fill) and a horizontal flip with
/// probability one half, applied per channel.
fn shift_and_flip(x: &mut [f64], h: usize, w: usize, rng: &mut impl Rng) {
    let plane = h * w;
    if plane == 0 || !x.len().is_multiple_of(plane) {
        return;
    }
    let dy = rng.random_range(-1i64..=1);
    let dx = rng.random_range(-1i64..=1);
    let flip = rng.random_bool(0.5);
    for ch in x.chunks_mut(plane) {
        let src = ch.to_vec();
        for r in 0..h {
            for c in 0..w {
                let sr = r as i64 - dy;
                let mut sc = c as i64 - dx;
                if flip {
                    sc = w as i64 - 1 - sc;
                }
                ch[r * w + c] = if (0..h as i64).contains(&sr) && (0..w as i64).contains(&sc) {
                    src[sr as usize * w + sc as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

pub fn weak_view(x: &[f64], seed: u64, policy: &AugmentPolicy) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    let mut out = x.to_vec();
    if let Some((h, w)) = policy.image_shape {
        shift_and_flip(&mut out, h, w, &mut rng);
    }
    jitter(&mut out, policy.jitter_sd, &mut rng);
    out
}

pub fn strong_view(x: &[f64], seed: u64, policy: &AugmentPolicy) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    let mut out = x.to_vec();
    let m = policy.op_magnitude;
    for _ in 0..policy.n_strong_ops {
        match rng.random_range(0..3) {
            0 => {
                // per-coordinate scaling in [1 - m, 1 + m]
                for v in out.iter_mut() {
                    *v *= 1.0 + rng.random_range(-1.0..=1.0) * m;
                }
            }
            1 => {
                // constant shift proportional to the vector's RMS
                let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64).sqrt();
                let s = rng.random_range(-1.0..=1.0) * m * rms;
                out.iter_mut().for_each(|v| *v += s);
            }
            _ => {
                // sign-preserving gamma on |x| / max|x|
                let gamma = (1.0 + rng.random_range(-1.0..=1.0) * m).max(0.05);
                let scale = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if scale > 0.0 {
                    for v in out.iter_mut() {
                        *v = v.signum() * scale * (v.abs() / scale).powf(gamma);
                    }
                }
            }
        }
    }
    jitter(&mut out, policy.jitter_sd, &mut rng);
    let d = out.len();
    let block = (policy.mask_fraction * d as f64).ceil() as usize;
    if block > 0 && d > 0 {
        let block = block.min(d);
        let start = rng.random_range(0..=d - block);
        out[start..start + block].fill(0.0);
    }
    out
}

pub fn view(x: &[f64], seed: u64, policy: &AugmentPolicy) -> Vec<f64> {
    match policy.kind {
        ViewKind::Weak => weak_view(x, seed, policy),
        ViewKind::Strong => strong_view(x, seed, policy),
    }
}

/// Applies `policy` to each row of `batch` with its own seed.
pub fn view_batch(batch: &Tensor, seeds: &[u64], policy: &AugmentPolicy) -> Result<Tensor> {
    if batch.rank() != 2 || seeds.len() != batch.rows() {
        return Err(Error::Dimension(format!(
            "{} seeds for a batch of shape {:?}",
            seeds.len(),
            batch.shape()
        )));
    }
    let mut data = Vec::with_capacity(batch.numel());
    for (row, &s) in batch.row_iter().zip(seeds) {
        data.extend(view(row, s, policy));
    }
    Tensor::new(batch.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(d: usize) -> Vec<f64> {
        (0..d).map(|i| 1.0 + i as f64).collect()
    }

    #[test]
    fn zero_jitter_weak_is_identity() {
        let x = ramp(6);
        assert_eq!(weak_view(&x, 4, &AugmentPolicy::weak(0.0)), x);
    }

    #[test]
    fn views_are_deterministic() {
        let x = ramp(16);
        let w = AugmentPolicy::weak(0.3);
        let s = AugmentPolicy::strong(0.5, 2, 0.25, 0.3);
        assert_eq!(weak_view(&x, 9, &w), weak_view(&x, 9, &w));
        assert_eq!(strong_view(&x, 9, &s), strong_view(&x, 9, &s));
        assert_ne!(weak_view(&x, 9, &w), weak_view(&x, 10, &w));
    }

    #[test]
    fn weak_jitter_magnitude() {
        // E|N(0, 0.1)| = 0.1 * sqrt(2 / pi) = 0.0798
        let x = vec![0.0; 100];
        let p = AugmentPolicy::weak(0.1);
        for seed in 0..20 {
            let v = weak_view(&x, seed, &p);
            let mad = v.iter().map(|a| a.abs()).sum::<f64>() / 100.0;
            assert!((0.06..=0.10).contains(&mad), "seed {seed}: {mad}");
        }
    }

    #[test]
    fn empty_strong_policy_is_identity() {
        let x = ramp(8);
        let p = AugmentPolicy::strong(0.0, 0, 0.0, 0.3);
        assert_eq!(strong_view(&x, 1, &p), x);
    }

    #[test]
    fn cutout_zeros_one_contiguous_block() {
        let x = ramp(8);
        let p = AugmentPolicy::strong(0.0, 0, 0.25, 0.0);
        for seed in 0..50 {
            let v = strong_view(&x, seed, &p);
            let zeros: Vec<usize> = (0..8).filter(|&i| v[i] == 0.0).collect();
            assert_eq!(zeros.len(), 2, "seed {seed}: {v:?}");
            assert_eq!(zeros[1], zeros[0] + 1);
        }
    }

    #[test]
    fn strong_perturbs_more_than_weak() {
        let weak = AugmentPolicy::weak(0.05);
        let strong = AugmentPolicy::strong(0.15, 2, 0.1, 0.2);
        let mut rng = seeds::rng(3);
        let (mut ew, mut es) = (0.0, 0.0);
        let mut differ = 0;
        for i in 0..1000u64 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = weak_view(&x, i, &weak);
            let s = strong_view(&x, i, &strong);
            ew += x.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            es += x.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            differ += usize::from(w != s);
        }
        assert!(es > ew, "strong {es} vs weak {ew}");
        assert_eq!(differ, 1000);
    }

    #[test]
    fn image_flip_and_shift_keep_values_or_zero() {
        let mut p = AugmentPolicy::weak(0.0);
        p.image_shape = Some((3, 3));
        let x = ramp(9);
        let mut saw_change = false;
        for seed in 0..30 {
            let v = weak_view(&x, seed, &p);
            assert!(v.iter().all(|a| *a == 0.0 || x.contains(a)));
            saw_change |= v != x;
        }
        assert!(saw_change);
    }

    #[test]
    fn policy_validation() {
        let mut p = AugmentPolicy::weak(0.1);
        assert!(p.validate().is_ok());
        p.mask_fraction = 0.2;
        assert!(p.validate().is_err());
        let s = AugmentPolicy::strong(0.1, 2, 1.0, 0.2);
        assert!(s.validate().is_err());
    }
}
