//! Label-noise injection: class-conditional transition matrices (symmetric,
//! pair) and instance-dependent flips.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    /// Each class `i` flips only to `map[i]`; `map` must have no fixed point.
    Pair { map: Vec<usize> },
}

impl NoiseKind {
    /// Pair noise with the cyclic map `i -> (i + 1) mod C`.
    pub fn cyclic_pair(classes: usize) -> Self {
        NoiseKind::Pair {
            map: (0..classes).map(|i| (i + 1) % classes).collect(),
        }
    }
}

/// Row-stochastic `C x C` matrix; `t[i * C + j] = P(noisy = j | clean = i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub kind: NoiseKind,
    pub tau0: f64,
    pub classes: usize,
    t: Vec<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.classes..(i + 1) * self.classes]
    }
}

pub fn build_transition_matrix(kind: NoiseKind, tau0: f64, classes: usize) -> Result<TransitionMatrix> {
    if !(0.0..1.0).contains(&tau0) {
        return Err(Error::Config(format!("tau0 must lie in [0, 1), got {tau0}")));
    }
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let mut t = vec![0.0; classes * classes];
    match &kind {
        NoiseKind::Symmetric => {
            let off = tau0 / (classes - 1) as f64;
            for i in 0..classes {
                for j in 0..classes {
                    t[i * classes + j] = if i == j { 1.0 - tau0 } else { off };
                }
            }
        }
        NoiseKind::Pair { map } => {
            if map.len() != classes {
                return Err(Error::Config(format!(
                    "pair map has {} entries for {classes} classes",
                    map.len()
                )));
            }
            let mut seen = vec![false; classes];
            for (i, &j) in map.iter().enumerate() {
                if j >= classes || seen[j] {
                    return Err(Error::Config("pair map is not a permutation".into()));
                }
                if j == i {
                    return Err(Error::Config(format!("pair map has fixed point {i}")));
                }
                seen[j] = true;
                t[i * classes + i] = 1.0 - tau0;
                t[i * classes + j] = tau0;
            }
        }
    }
    Ok(TransitionMatrix {
        kind,
        tau0,
        classes,
        t,
    })
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

fn ensure_clean(ds: &LabeledDataset) -> Result<()> {
    match ds.noise() {
        Some(tag) => Err(Error::Config(format!(
            "dataset already carries label noise ({tag}); noise is applied once"
        ))),
        None => Ok(()),
    }
}

/// Draws each train sample's noisy label from the row of `t` for its clean label.
pub fn inject_label_noise(ds: &LabeledDataset, t: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    ensure_clean(ds)?;
    if t.classes != ds.classes() {
        return Err(Error::Config(format!(
            "transition matrix is {0}x{0} but dataset has {1} classes",
            t.classes,
            ds.classes()
        )));
    }
    let mut rng = seeds::rng(seed);
    let noisy = (0..ds.len())
        .map(|i| {
            let clean = ds.clean_labels()[i];
            match ds.split()[i] {
                Split::Test => clean,
                Split::Train => sample_row(t.row(clean), rng.random::<f64>()),
            }
        })
        .collect();
    let kind = match t.kind {
        NoiseKind::Symmetric => "symmetric",
        NoiseKind::Pair { .. } => "pair",
    };
    Ok(ds.with_noisy_labels(noisy, format!("{kind}:{}", t.tau0)))
}

/// Instance-dependent noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceNoise {
    /// Mean per-sample flip rate.
    pub tau0: f64,
    /// Standard deviation of the per-sample flip rate before truncation to [0, 1].
    pub rate_sd: f64,
}

impl InstanceNoise {
    pub fn new(tau0: f64) -> Self {
        Self { tau0, rate_sd: 0.1 }
    }
}

/// Flips labels with per-sample rates and feature-dependent targets.
///
/// Each train sample gets a flip rate `q ~ N(tau0, rate_sd)` truncated to
/// [0, 1]. Each class `c` gets a projection `w_c ~ N(0, I)`. With probability
/// `q` the label moves to a class drawn from `softmax(x . w_c)` over the
/// classes other than the clean one.
pub fn inject_instance_noise(ds: &LabeledDataset, params: InstanceNoise, seed: u64) -> Result<LabeledDataset> {
    ensure_clean(ds)?;
    let InstanceNoise { tau0, rate_sd } = params;
    if !(tau0 > 0.0 && tau0 < 1.0) {
        return Err(Error::Config(format!("instance noise tau0 must lie in (0, 1), got {tau0}")));
    }
    if rate_sd.is_nan() || rate_sd < 0.0 {
        return Err(Error::Config(format!("rate_sd must be >= 0, got {rate_sd}")));
    }
    let (c, d) = (ds.classes(), ds.dim());
    let mut rng = seeds::rng(seed);
    let w: Vec<f64> = (0..c * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let rate = Normal::new(tau0, rate_sd).map_err(|e| Error::Config(e.to_string()))?;

    let mut noisy = ds.noisy_labels().to_vec();
    for i in 0..ds.len() {
        if ds.split()[i] == Split::Test {
            continue;
        }
        let q = if rate_sd == 0.0 {
            tau0
        } else {
            loop {
                let q = rate.sample(&mut rng);
                if (0.0..=1.0).contains(&q) {
                    break q;
                }
            }
        };
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if u >= q {
            continue;
        }
        let y = ds.clean_labels()[i];
        let x = ds.feature_row(i);
        let scores: Vec<f64> = (0..c)
            .map(|k| {
                if k == y {
                    f64::NEG_INFINITY
                } else {
                    x.iter()
                        .zip(&w[k * d..(k + 1) * d])
                        .map(|(a, b)| f64::from(*a) * b)
                        .sum()
                }
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        noisy[i] = sample_row(&probs, v);
    }
    Ok(ds.with_noisy_labels(noisy, format!("instance:{tau0}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobSpec};

    fn blobs(classes: usize, per_class: usize) -> LabeledDataset {
        gen_blobs(&BlobSpec {
            classes,
            per_class,
            test_per_class: 10,
            dim: 4,
            separation: 3.0,
            spread: 1.0,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn symmetric_matrix_entries() {
        let t = build_transition_matrix(NoiseKind::Symmetric, 0.2, 10).unwrap();
        assert!((t.get(3, 3) - 0.8).abs() < 1e-15);
        assert!((t.get(3, 4) - 0.2 / 9.0).abs() < 1e-15);
        assert!((t.get(3, 4) - 0.022222).abs() < 1e-6);
        for i in 0..10 {
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pair_matrix_entries() {
        let t = build_transition_matrix(NoiseKind::cyclic_pair(10), 0.4, 10).unwrap();
        for i in 0..10 {
            assert_eq!(t.get(i, i), 0.6);
            assert_eq!(t.get(i, (i + 1) % 10), 0.4);
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(t.get(0, 5), 0.0);
    }

    #[test]
    fn zero_tau_is_identity() {
        for kind in [NoiseKind::Symmetric, NoiseKind::cyclic_pair(4)] {
            let t = build_transition_matrix(kind, 0.0, 4).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(t.get(i, j), if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn bad_matrix_params() {
        let fixed = NoiseKind::Pair { map: vec![1, 0, 2] };
        assert!(matches!(build_transition_matrix(fixed, 0.3, 3), Err(Error::Config(_))));
        assert!(matches!(
            build_transition_matrix(NoiseKind::Symmetric, 1.0, 3),
            Err(Error::Config(_))
        ));
        let dup = NoiseKind::Pair { map: vec![1, 1, 0] };
        assert!(build_transition_matrix(dup, 0.3, 3).is_err());
    }

    #[test]
    fn identity_noise_keeps_labels_and_test_split() {
        let ds = blobs(4, 100);
        let t = build_transition_matrix(NoiseKind::Symmetric, 0.0, 4).unwrap();
        let noisy = inject_label_noise(&ds, &t, 1).unwrap();
        assert_eq!(noisy.noisy_labels(), noisy.clean_labels());
        assert_eq!(noisy.features(), ds.features());
    }

    #[test]
    fn symmetric_flip_rate_concentrates() {
        let ds = blobs(10, 1000);
        let t = build_transition_matrix(NoiseKind::Symmetric, 0.5, 10).unwrap();
        let noisy = inject_label_noise(&ds, &t, 5).unwrap();
        let train = noisy.indices(Split::Train);
        let flips = train
            .iter()
            .filter(|&&i| noisy.noisy_labels()[i] != noisy.clean_labels()[i])
            .count();
        let rate = flips as f64 / train.len() as f64;
        let tol = 4.0 * (0.25f64 / train.len() as f64).sqrt();
        assert!((rate - 0.5).abs() <= tol, "{rate}");
        for i in noisy.indices(Split::Test) {
            assert_eq!(noisy.noisy_labels()[i], noisy.clean_labels()[i]);
        }
    }

    #[test]
    fn injection_is_deterministic_and_applied_once() {
        let ds = blobs(4, 50);
        let t = build_transition_matrix(NoiseKind::Symmetric, 0.4, 4).unwrap();
        let a = inject_label_noise(&ds, &t, 3).unwrap();
        let b = inject_label_noise(&ds, &t, 3).unwrap();
        assert_eq!(a, b);
        assert!(matches!(inject_label_noise(&a, &t, 3), Err(Error::Config(_))));
        assert!(matches!(
            inject_instance_noise(&a, InstanceNoise::new(0.2), 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn instance_noise_zero_mass_limit() {
        let ds = blobs(4, 200);
        let params = InstanceNoise {
            tau0: 1e-12,
            rate_sd: 0.0,
        };
        let noisy = inject_instance_noise(&ds, params, 2).unwrap();
        assert_eq!(noisy.noisy_labels(), noisy.clean_labels());
    }

    #[test]
    fn instance_noise_rate_and_determinism() {
        let ds = blobs(4, 2500);
        let a = inject_instance_noise(&ds, InstanceNoise::new(0.4), 8).unwrap();
        let b = inject_instance_noise(&ds, InstanceNoise::new(0.4), 8).unwrap();
        assert_eq!(a, b);
        let train = a.indices(Split::Train);
        let flips = train
            .iter()
            .filter(|&&i| a.noisy_labels()[i] != a.clean_labels()[i])
            .count() as f64
            / train.len() as f64;
        assert!((0.3..=0.5).contains(&flips), "{flips}");
        assert!(inject_instance_noise(&ds, InstanceNoise::new(1.0), 8).is_err());
        assert!(inject_instance_noise(&ds, InstanceNoise::new(0.0), 8).is_err());
    }

    fn plugin_mi(pairs: &[(usize, usize)], nx: usize, ny: usize) -> f64 {
        let n = pairs.len() as f64;
        let mut joint = vec![0.0; nx * ny];
        let mut px = vec![0.0; nx];
        let mut py = vec![0.0; ny];
        for &(x, y) in pairs {
            joint[x * ny + y] += 1.0 / n;
            px[x] += 1.0 / n;
            py[y] += 1.0 / n;
        }
        let mut mi = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                let p = joint[x * ny + y];
                if p > 0.0 {
                    mi += p * (p / (px[x] * py[y])).ln();
                }
            }
        }
        mi
    }

    /// Instance-noise flip targets carry more information about the sample
    /// (discretized as clean class x sign pattern of two coordinates) than
    /// symmetric flips do.
    #[test]
    fn instance_targets_depend_on_features() {
        let ds = blobs(4, 2500);
        let inst = inject_instance_noise(&ds, InstanceNoise::new(0.4), 21).unwrap();
        let t = build_transition_matrix(NoiseKind::Symmetric, 0.4, 4).unwrap();
        let sym = inject_label_noise(&ds, &t, 21).unwrap();
        let cell = |d: &LabeledDataset, i: usize| {
            let x = d.feature_row(i);
            d.clean_labels()[i] * 4 + usize::from(x[0] > 0.0) * 2 + usize::from(x[1] > 0.0)
        };
        let pairs = |d: &LabeledDataset| -> Vec<(usize, usize)> {
            d.indices(Split::Train)
                .into_iter()
                .filter(|&i| d.noisy_labels()[i] != d.clean_labels()[i])
                .map(|i| (cell(d, i), d.noisy_labels()[i]))
                .collect()
        };
        let mi_inst = plugin_mi(&pairs(&inst), 16, 4);
        let mi_sym = plugin_mi(&pairs(&sym), 16, 4);
        assert!(mi_inst > mi_sym, "instance {mi_inst} vs symmetric {mi_sym}");
    }
}
