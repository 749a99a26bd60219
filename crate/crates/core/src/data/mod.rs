//! Labeled datasets: synthetic generation, container I/O and label noise.

pub mod container;
pub mod noise;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;
use container::{ArrayData, Container, NamedArray};

pub use noise::{
    build_transition_matrix, inject_instance_noise, inject_label_noise, InstanceNoise, NoiseKind,
    TransitionMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Features with clean and noisy labels and a train/test tag per sample.
///
/// Features are stored as `f32`, the container's on-disk precision, so a
/// save/load round trip is exact. Test samples always keep their clean label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    classes: usize,
    features: Vec<f32>,
    clean_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    split: Vec<Split>,
    noise: Option<String>,
}

/// The part of a dataset the trainer may see: train-split features and
/// noisy labels only.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub features: Tensor,
    pub noisy_labels: Vec<usize>,
    pub classes: usize,
    /// Pooled standard deviation of all feature coordinates.
    pub feature_sd: f64,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Held-out features with clean labels, for evaluation only.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(
        dim: usize,
        classes: usize,
        features: Vec<f32>,
        clean_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = clean_labels.len();
        if features.len() != n * dim || noisy_labels.len() != n || split.len() != n {
            return Err(Error::Dimension(format!(
                "dataset arrays disagree: {} features for dim {dim}, {n} clean, {} noisy, {} split",
                features.len(),
                noisy_labels.len(),
                split.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(bad) = clean_labels.iter().chain(&noisy_labels).find(|&&l| l >= classes) {
            return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        for i in 0..n {
            if split[i] == Split::Test && clean_labels[i] != noisy_labels[i] {
                return Err(Error::Contract(format!("test sample {i} carries a noisy label")));
            }
        }
        Ok(Self {
            dim,
            classes,
            features,
            clean_labels,
            noisy_labels,
            split,
            noise: None,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Description of the noise already applied, if any.
    pub fn noise(&self) -> Option<&str> {
        self.noise.as_deref()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    fn rows_f64(&self, idx: &[usize]) -> Tensor {
        let data = idx
            .iter()
            .flat_map(|&i| self.feature_row(i).iter().map(|&x| f64::from(x)))
            .collect();
        Tensor::matrix(idx.len(), self.dim, data).expect("consistent dims")
    }

    pub fn train_set(&self) -> TrainSet {
        let idx = self.indices(Split::Train);
        let features = self.rows_f64(&idx);
        let n = features.numel().max(1) as f64;
        let mean = features.data().iter().sum::<f64>() / n;
        let var = features.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        TrainSet {
            features,
            noisy_labels: idx.iter().map(|&i| self.noisy_labels[i]).collect(),
            classes: self.classes,
            feature_sd: var.sqrt(),
        }
    }

    /// Clean labels of the train split, in [`TrainSet`] order. Metrics only.
    pub fn train_clean_labels(&self) -> Vec<usize> {
        self.indices(Split::Train)
            .iter()
            .map(|&i| self.clean_labels[i])
            .collect()
    }

    pub fn test_set(&self) -> EvalSet {
        let idx = self.indices(Split::Test);
        EvalSet {
            features: self.rows_f64(&idx),
            labels: idx.iter().map(|&i| self.clean_labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub(crate) fn with_noisy_labels(&self, noisy: Vec<usize>, tag: String) -> Self {
        Self {
            noisy_labels: noisy,
            noise: Some(tag),
            ..self.clone()
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.len();
        let labels = |v: &[usize]| ArrayData::I32(v.iter().map(|&l| l as i32).collect());
        let mut c = Container::new()
            .with_meta("kind", "dataset")
            .with_meta("n", n as u64)
            .with_meta("d", self.dim as u64)
            .with_meta("C", self.classes as u64)
            .with_meta("dtype", "f32")
            .with_meta(
                "noise",
                self.noise.clone().map_or(serde_json::Value::Null, Into::into),
            );
        c.push(NamedArray::new("features", vec![n, self.dim], ArrayData::F32(self.features.clone()))?);
        c.push(NamedArray::new("clean_labels", vec![n], labels(&self.clean_labels))?);
        c.push(NamedArray::new("noisy_labels", vec![n], labels(&self.noisy_labels))?);
        let split = self
            .split
            .iter()
            .map(|s| match s {
                Split::Train => 0u8,
                Split::Test => 1u8,
            })
            .collect();
        c.push(NamedArray::new("split", vec![n], ArrayData::U8(split))?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta_str("kind").unwrap_or("dataset") != "dataset" {
            return Err(Error::Format("container does not hold a dataset".into()));
        }
        let n = c.meta_u64("n")? as usize;
        let dim = c.meta_u64("d")? as usize;
        let classes = c.meta_u64("C")? as usize;
        let fmt = |e: Error| Error::Format(e.to_string());

        let features = match &c.array("features")?.data {
            ArrayData::F32(v) if v.len() == n.saturating_mul(dim) => v.clone(),
            _ => return Err(Error::Format("features must be f32 of shape [n, d]".into())),
        };
        let labels = |name: &str| -> Result<Vec<usize>> {
            match &c.array(name)?.data {
                ArrayData::I32(v) if v.len() == n => v
                    .iter()
                    .map(|&l| {
                        usize::try_from(l)
                            .ok()
                            .filter(|&l| l < classes)
                            .ok_or_else(|| Error::Format(format!("{name}: label {l} out of range")))
                    })
                    .collect(),
                _ => Err(Error::Format(format!("{name} must be i32 of length n"))),
            }
        };
        let clean = labels("clean_labels")?;
        let noisy = labels("noisy_labels")?;
        let split = match &c.array("split")?.data {
            ArrayData::U8(v) if v.len() == n => v
                .iter()
                .map(|s| match s {
                    0 => Ok(Split::Train),
                    1 => Ok(Split::Test),
                    other => Err(Error::Format(format!("split tag {other}"))),
                })
                .collect::<Result<Vec<_>>>()?,
            _ => return Err(Error::Format("split must be u8 of length n".into())),
        };
        let mut ds = Self::new(dim, classes, features, clean, noisy, split).map_err(fmt)?;
        ds.noise = match c.meta.get("noise") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::Format("noise must be a string or null".into())),
        };
        Ok(ds)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Parameters for isotropic Gaussian blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    /// Train samples per class.
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Minimum pairwise distance between class means.
    pub separation: f64,
    /// Standard deviation of each coordinate around its class mean.
    pub spread: f64,
    pub seed: u64,
}

fn class_means(spec: &BlobSpec, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let (c, d) = (spec.classes, spec.dim);
    let gaussian = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    };
    if c <= d {
        // Random orthonormal frame; scaled basis vectors sit at exactly
        // `separation` from each other.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
        while basis.len() < c {
            let mut v = gaussian(rng);
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let scale = spec.separation / std::f64::consts::SQRT_2;
        return basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * scale).collect())
            .collect();
    }
    // More classes than dimensions: best-spread of several random direction
    // draws, scaled so the closest pair is exactly `separation` apart.
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..64 {
        let dirs: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let v = gaussian(rng);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..c {
            for j in i + 1..c {
                let d2: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min_dist = min_dist.min(d2.sqrt());
            }
        }
        if best.as_ref().is_none_or(|(m, _)| min_dist > *m) {
            best = Some((min_dist, dirs));
        }
    }
    let (min_dist, dirs) = best.expect("at least one draw");
    let scale = spec.separation / min_dist.max(1e-9);
    dirs.into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// Gaussian blobs, train samples first then test, class-major within each split.
pub fn gen_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.dim < 2 || spec.separation.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!(
            "blobs need classes >= 2, dim >= 2 and separation > 0 (got {}, {}, {})",
            spec.classes, spec.dim, spec.separation
        )));
    }
    if spec.spread.is_nan() || spec.spread < 0.0 {
        return Err(Error::Config(format!("spread must be >= 0, got {}", spec.spread)));
    }
    if spec.per_class == 0 {
        return Err(Error::EmptyClass("per_class must be at least 1".into()));
    }
    let mut rng = seeds::rng(spec.seed);
    let means = class_means(spec, &mut rng);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (which, count) in [(Split::Train, spec.per_class), (Split::Test, spec.test_per_class)] {
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..count {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push((m + spec.spread * z) as f32);
                }
                labels.push(class);
                split.push(which);
            }
        }
    }
    LabeledDataset::new(spec.dim, spec.classes, features, labels.clone(), labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn spec(classes: usize, dim: usize, separation: f64, spread: f64) -> BlobSpec {
        BlobSpec {
            classes,
            per_class: 50,
            test_per_class: 20,
            dim,
            separation,
            spread,
            seed: 3,
        }
    }

    #[test]
    fn zero_spread_gives_point_clusters() {
        let ds = gen_blobs(&spec(2, 3, 4.0, 0.0)).unwrap();
        let a = ds.feature_row(0).to_vec();
        for i in 0..ds.len() {
            if ds.clean_labels()[i] == 0 {
                assert_eq!(ds.feature_row(i), a.as_slice());
            } else {
                let d: f64 = ds
                    .feature_row(i)
                    .iter()
                    .zip(&a)
                    .map(|(x, y)| f64::from(x - y).powi(2))
                    .sum();
                assert!((d.sqrt() - 4.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s = spec(4, 5, 3.0, 1.0);
        assert_eq!(gen_blobs(&s).unwrap(), gen_blobs(&s).unwrap());
        let mut other = s.clone();
        other.seed = 4;
        assert_ne!(gen_blobs(&s).unwrap(), gen_blobs(&other).unwrap());
    }

    #[test]
    fn means_respect_separation_when_classes_exceed_dim() {
        let s = spec(6, 2, 5.0, 0.0);
        let ds = gen_blobs(&s).unwrap();
        let mut means = vec![None; 6];
        for i in 0..ds.len() {
            means[ds.clean_labels()[i]].get_or_insert(ds.feature_row(i).to_vec());
        }
        let means: Vec<Vec<f32>> = means.into_iter().map(Option::unwrap).collect();
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f32 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d.sqrt() >= 5.0 - 1e-4);
            }
        }
    }

    #[test]
    fn empty_class_and_bad_params() {
        let mut s = spec(2, 2, 1.0, 1.0);
        s.per_class = 0;
        assert!(matches!(gen_blobs(&s), Err(Error::EmptyClass(_))));
        assert!(matches!(gen_blobs(&spec(1, 2, 1.0, 1.0)), Err(Error::Config(_))));
        assert!(matches!(gen_blobs(&spec(2, 2, 0.0, 1.0)), Err(Error::Config(_))));
    }

    /// A softmax-regression probe trained on clean labels separates
    /// well-spaced blobs almost perfectly.
    #[test]
    fn linear_probe_on_clean_blobs() {
        let ds = gen_blobs(&BlobSpec {
            classes: 4,
            per_class: 250,
            test_per_class: 250,
            dim: 2,
            separation: 8.0,
            spread: 1.0,
            seed: 17,
        })
        .unwrap();
        let train = ds.train_set();
        let test = ds.test_set();
        let mut w = Tensor::zeros(&[2, 4]);
        let mut b = Tensor::zeros(&[4]);
        let targets = {
            let mut t = Tensor::zeros(&[train.len(), 4]);
            for (i, &l) in train.noisy_labels.iter().enumerate() {
                t.data_mut()[i * 4 + l] = 1.0;
            }
            t
        };
        for _ in 0..300 {
            let mut tape = Tape::new();
            let x = tape.constant(train.features.clone());
            let wv = tape.param(w.clone());
            let bv = tape.param(b.clone());
            let h = tape.matmul(x, wv).unwrap();
            let z = tape.add(h, bv).unwrap();
            let lp = tape.log_softmax_rows(z).unwrap();
            let y = tape.constant(targets.clone());
            let prod = tape.mul(lp, y).unwrap();
            let s = tape.mean(prod).unwrap();
            let loss = tape.scalar_mul(s, -4.0).unwrap();
            tape.backward(loss).unwrap();
            for (p, v) in [(&mut w, wv), (&mut b, bv)] {
                let g = tape.grad(v).unwrap().to_vec();
                p.data_mut().iter_mut().zip(g).for_each(|(p, g)| *p -= 0.1 * g);
            }
        }
        let mut correct = 0;
        for (i, row) in test.features.row_iter().enumerate() {
            let logits: Vec<f64> = (0..4)
                .map(|c| row[0] * w.data()[c] + row[1] * w.data()[4 + c] + b.data()[c])
                .collect();
            if crate::tensor::argmax(&logits) == test.labels[i] {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.labels.len() as f64;
        assert!(acc > 0.99, "probe accuracy {acc}");
    }

    #[test]
    fn container_round_trip_is_exact() {
        let ds = gen_blobs(&spec(3, 4, 2.0, 1.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ccl");
        ds.save(&path).unwrap();
        assert_eq!(LabeledDataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = LabeledDataset::new(3, 2, vec![], vec![], vec![], vec![]).unwrap();
        let bytes = ds.to_container().unwrap().to_bytes().unwrap();
        let back = LabeledDataset::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let ds = gen_blobs(&spec(2, 2, 2.0, 1.0)).unwrap();
        let bytes = ds.to_container().unwrap().to_bytes().unwrap();
        let r = LabeledDataset::from_bytes(&bytes[..bytes.len() - 5]);
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn train_view_has_only_train_rows() {
        let ds = gen_blobs(&spec(2, 2, 2.0, 1.0)).unwrap();
        let t = ds.train_set();
        assert_eq!(t.len(), 100);
        assert_eq!(ds.test_set().labels.len(), 40);
        assert!(t.feature_sd > 0.0);
    }
}
