//! MLP encoder plus linear classifier, the co-trained model pair and Adam.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::container::{ArrayData, Container, NamedArray};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine layer `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        // He-uniform weights, PyTorch-style bias range.
        let w_bound = (6.0 / fan_in as f64).sqrt();
        let b_bound = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-w_bound..w_bound))
            .collect();
        let bias = (0..fan_out).map(|_| rng.random_range(-b_bound..b_bound)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, weight).expect("dims match"),
            bias: Tensor::vector(bias),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Layer widths from input to embedding, plus the class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[input, hidden..., embedding]`; at least two entries.
    pub dims: Vec<usize>,
    pub classes: usize,
    /// Activation of the embedding layer; hidden layers always use ReLU.
    pub embed_activation: Activation,
}

impl Architecture {
    pub fn new(dims: Vec<usize>, classes: usize) -> Self {
        Self {
            dims,
            classes,
            embed_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims must list input and embedding widths, all > 0: {:?}",
                self.dims
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }
}

/// `theta = g(f(x))`: encoder `f`, classifier `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Vec<Layer>,
    pub classifier: Layer,
}

/// Model parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: Vec<(Var, Var, Activation)>,
    classifier: (Var, Var),
}

/// Output of a full forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl Model {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeds::rng(seed);
        let last = arch.dims.len() - 2;
        let encoder = arch
            .dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { arch.embed_activation } else { Activation::Relu };
                Layer::init(w[0], w[1], act, &mut rng)
            })
            .collect();
        let embed = *arch.dims.last().expect("validated");
        let classifier = Layer::init(embed, arch.classes, Activation::Identity, &mut rng);
        Ok(Self { encoder, classifier })
    }

    pub fn architecture(&self) -> Architecture {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.encoder.iter().map(Layer::out_dim));
        Architecture {
            dims,
            classes: self.classes(),
            embed_activation: self.encoder.last().map_or(Activation::Identity, |l| l.activation),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(0, Layer::in_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Pushes the parameters onto `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut push = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let encoder = self
            .encoder
            .iter()
            .map(|l| (push(&l.weight), push(&l.bias), l.activation))
            .collect();
        let classifier = (push(&self.classifier.weight), push(&self.classifier.bias));
        BoundModel { encoder, classifier }
    }

    /// Embeddings `f(x)` before any normalization.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let e = b.encode(&mut tape, x)?;
        Ok(tape.take(e))
    }

    pub fn logits(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let e = tape.constant(embeddings.clone());
        let z = b.logits(&mut tape, e)?;
        Ok(tape.take(z))
    }

    /// Softmax class probabilities `g(embeddings)`.
    pub fn classify(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let e = tape.constant(embeddings.clone());
        let p = b.classify(&mut tape, e)?;
        Ok(tape.take(p))
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Forward> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let e = b.encode(&mut tape, x)?;
        let z = b.logits(&mut tape, e)?;
        let p = tape.softmax_rows(z)?;
        Ok(Forward {
            probs: tape.take(p),
            logits: tape.take(z),
            embeddings: tape.take(e),
        })
    }
}

impl BoundModel {
    pub fn params(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .flat_map(|(w, b, _)| [*w, *b])
            .chain([self.classifier.0, self.classifier.1])
            .collect()
    }

    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (w, b, act)) in self.encoder.iter().enumerate() {
            let width = tape.value(*w).rows();
            if tape.value(h).rank() != 2 || tape.value(h).cols() != width {
                return Err(Error::Dimension(format!(
                    "layer {i} expects width {width}, got shape {:?}",
                    tape.value(h).shape()
                )));
            }
            let lin = tape.matmul(h, *w)?;
            h = tape.add(lin, *b)?;
            if *act == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn logits(&self, tape: &mut Tape, embeddings: Var) -> Result<Var> {
        let (w, b) = self.classifier;
        let width = tape.value(w).rows();
        if tape.value(embeddings).rank() != 2 || tape.value(embeddings).cols() != width {
            return Err(Error::Dimension(format!(
                "classifier expects width {width}, got shape {:?}",
                tape.value(embeddings).shape()
            )));
        }
        let lin = tape.matmul(embeddings, w)?;
        tape.add(lin, b)
    }

    pub fn classify(&self, tape: &mut Tape, embeddings: Var) -> Result<Var> {
        let z = self.logits(tape, embeddings)?;
        tape.softmax_rows(z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
            if g.len() != p.numel() || self.m[i].len() != p.numel() {
                return Err(Error::Dimension(format!("gradient {i} has the wrong length")));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Two models of identical architecture with independent optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair {
    pub models: [Model; 2],
    pub optimizers: [AdamState; 2],
}

pub fn init_pair(seed0: u64, seed1: u64, arch: &Architecture, adam: AdamConfig) -> Result<ModelPair> {
    if seed0 == seed1 {
        return Err(Error::Config(format!(
            "the two models need distinct seeds, both are {seed0}"
        )));
    }
    let m0 = Model::init(arch, seed0)?;
    let m1 = Model::init(arch, seed1)?;
    let o0 = AdamState::new(adam, &m0.params());
    let o1 = AdamState::new(adam, &m1.params());
    Ok(ModelPair {
        models: [m0, m1],
        optimizers: [o0, o1],
    })
}

impl ModelPair {
    /// Averaged class probabilities of both models.
    pub fn ensemble_probs(&self, batch: &Tensor) -> Result<Tensor> {
        let a = self.models[0].forward(batch)?.probs;
        let b = self.models[1].forward(batch)?.probs;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn to_container(&self, step: u64) -> Result<Container> {
        let arch = self.models[0].architecture();
        let mut c = Container::new()
            .with_meta("kind", "checkpoint")
            .with_meta("dims", serde_json::to_value(&arch.dims).expect("dims"))
            .with_meta("C", arch.classes as u64)
            .with_meta("step", step)
            .with_meta(
                "embed_activation",
                serde_json::to_value(arch.embed_activation).expect("activation"),
            )
            .with_meta("dtype", "f64");
        for (m, model) in self.models.iter().enumerate() {
            for (k, p) in model.params().into_iter().enumerate() {
                c.push(NamedArray::new(
                    format!("model{m}.param{k}"),
                    p.shape().to_vec(),
                    ArrayData::F64(p.data().to_vec()),
                )?);
            }
        }
        Ok(c)
    }

    /// Restores the pair and the step count; optimizer moments start fresh.
    pub fn from_container(c: &Container, adam: AdamConfig) -> Result<(Self, u64)> {
        if c.meta_str("kind")? != "checkpoint" {
            return Err(Error::Format("container does not hold a checkpoint".into()));
        }
        let dims: Vec<usize> = c
            .meta
            .get("dims")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Format(format!("bad dims: {e}")))?
            .ok_or_else(|| Error::Format("checkpoint has no dims".into()))?;
        let classes = c.meta_u64("C")? as usize;
        let step = c.meta_u64("step")?;
        let embed_activation = c
            .meta
            .get("embed_activation")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Format(format!("bad activation: {e}")))?
            .unwrap_or(Activation::Identity);
        let arch = Architecture {
            dims,
            classes,
            embed_activation,
        };
        arch.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut models = [Model::init(&arch, 0)?, Model::init(&arch, 1)?];
        for (m, model) in models.iter_mut().enumerate() {
            for (k, p) in model.params_mut().into_iter().enumerate() {
                let a = c.array(&format!("model{m}.param{k}"))?;
                match &a.data {
                    ArrayData::F64(v) if a.shape == p.shape() => p.data_mut().copy_from_slice(v),
                    _ => {
                        return Err(Error::Format(format!(
                            "parameter {} has shape {:?}, expected f64 {:?}",
                            a.name,
                            a.shape,
                            p.shape()
                        )))
                    }
                }
            }
        }
        let optimizers = [
            AdamState::new(adam, &models[0].params()),
            AdamState::new(adam, &models[1].params()),
        ];
        Ok((Self { models, optimizers }, step))
    }

    pub fn save(&self, step: u64, path: impl AsRef<Path>) -> Result<()> {
        self.to_container(step)?.write(path)
    }

    pub fn load(path: impl AsRef<Path>, adam: AdamConfig) -> Result<(Self, u64)> {
        Self::from_container(&Container::read(path)?, adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(dims: &[usize], classes: usize) -> Architecture {
        Architecture::new(dims.to_vec(), classes)
    }

    #[test]
    fn pair_models_differ_and_init_is_deterministic() {
        let a = init_pair(1, 2, &arch(&[2, 16, 8], 4), AdamConfig::default()).unwrap();
        let p0 = a.models[0].params();
        let p1 = a.models[1].params();
        for (x, y) in p0.iter().zip(&p1) {
            assert!(x.data().iter().zip(y.data()).all(|(u, v)| u != v));
        }
        let b = init_pair(1, 2, &arch(&[2, 16, 8], 4), AdamConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.optimizers[0].steps(), 0);
        assert_eq!(a.models[0].classes(), 4);
        assert_eq!(a.models[0].embed_dim(), 8);
    }

    #[test]
    fn equal_seeds_rejected() {
        let r = init_pair(7, 7, &arch(&[2, 4], 2), AdamConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let mut m = Model::init(&arch(&[3, 5, 4], 2), 1).unwrap();
        m.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
        let e = m.encode(&Tensor::from_rows(&[[1.0, -2.0, 3.0]]).unwrap()).unwrap();
        assert!(e.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_relu_layer() {
        let mut a = arch(&[2, 2], 2);
        a.embed_activation = Activation::Relu;
        let mut m = Model::init(&a, 1).unwrap();
        m.encoder[0].weight = Tensor::identity(2);
        m.encoder[0].bias = Tensor::zeros(&[2]);
        let e = m.encode(&Tensor::from_rows(&[[-1.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(e.data(), &[0.0, 3.0]);
    }

    #[test]
    fn encode_is_batch_independent() {
        let m = Model::init(&arch(&[3, 16, 8], 3), 4).unwrap();
        let mut rng = seeds::rng(1);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch = m.encode(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let single = m.encode(&Tensor::from_rows(&rows[5..6]).unwrap()).unwrap();
        assert_eq!(batch.row(5), single.row(0));
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let m = Model::init(&arch(&[3, 4], 2), 4).unwrap();
        assert!(matches!(m.encode(&Tensor::zeros(&[2, 5])), Err(Error::Dimension(_))));
        assert!(matches!(m.classify(&Tensor::zeros(&[2, 3])), Err(Error::Dimension(_))));
    }

    #[test]
    fn classify_rows() {
        let mut m = Model::init(&arch(&[2, 3], 4), 4).unwrap();
        m.classifier.weight.data_mut().fill(0.0);
        m.classifier.bias.data_mut().fill(0.0);
        let p = m.classify(&Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        m.classifier.bias.data_mut()[2] = 50.0;
        let p = m.classify(&Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap()).unwrap();
        assert!(p.data()[2] > 0.999999);
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let empty = m.classify(&Tensor::zeros(&[0, 3])).unwrap();
        assert_eq!(empty.shape(), &[0, 4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![0.5]);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        st.step(&mut [&mut p], &[Some(&[1.0][..])]).unwrap();
        // mhat = 1, vhat = 1 => delta = -lr / (1 + eps)
        assert!((p.data()[0] - (0.5 - 0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.5, -1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        st.step(&mut [&mut p], &[Some(&[0.0, 0.0][..])]).unwrap();
        assert_eq!(p.data(), &[0.5, -1.0]);
        assert_eq!(st.first_moment(0), &[0.0, 0.0]);
        assert_eq!(st.second_moment(0), &[0.0, 0.0]);
    }

    #[test]
    fn adam_missing_gradient_and_determinism() {
        let mut p = Tensor::vector(vec![0.5]);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        assert!(matches!(st.step(&mut [&mut p], &[None]), Err(Error::Contract(_))));

        let mut a = Tensor::vector(vec![0.3, 0.1]);
        let mut b = a.clone();
        let mut sa = AdamState::new(AdamConfig::default(), &[&a]);
        let mut sb = sa.clone();
        let g = [0.7, -0.2];
        sa.step(&mut [&mut a], &[Some(&g[..])]).unwrap();
        sb.step(&mut [&mut b], &[Some(&g[..])]).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn checkpoint_round_trip() {
        let pair = init_pair(3, 4, &arch(&[5, 7, 3], 3), AdamConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ccl");
        pair.save(42, &path).unwrap();
        let (back, step) = ModelPair::load(&path, AdamConfig::default()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back.models, pair.models);
    }
}
