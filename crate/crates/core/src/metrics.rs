//! Diagnostics: accuracy, cross-model semantic agreement, class-variance
//! entropy, taxonomy LCA distance, label recovery and the contrastive
//! mutual-information bound check.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::container::{ArrayData, Container, NamedArray};
use crate::data::EvalSet;
use crate::error::{Error, Result};
use crate::model::{Model, ModelPair};
use crate::seeds;
use crate::tensor::Tensor;

fn accuracy_of(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy on an empty test split".into()));
    }
    let hits = probs.argmax_rows().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn test_accuracy(model: &Model, test: &EvalSet) -> Result<f64> {
    if test.labels.is_empty() {
        return Err(Error::Contract("accuracy on an empty test split".into()));
    }
    accuracy_of(&model.forward(&test.features)?.probs, &test.labels)
}

/// Accuracy of the averaged probabilities of both models.
pub fn test_accuracy_pair(pair: &ModelPair, test: &EvalSet) -> Result<f64> {
    if test.labels.is_empty() {
        return Err(Error::Contract("accuracy on an empty test split".into()));
    }
    accuracy_of(&pair.ensemble_probs(&test.features)?, &test.labels)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cross-model embedding agreement from precomputed embeddings of the same
/// samples: mean over random pairs `(i, j)`, `i != j`, of
/// `cos(e0_i - e0_j, e1_i - e1_j)`. Pairs with a zero difference vector are
/// skipped.
pub fn m_embed_from_embeddings(e0: &Tensor, e1: &Tensor, n_pairs: usize, seed: u64) -> Result<f64> {
    if e0.rows() != e1.rows() {
        return Err(Error::Contract(format!("{} vs {} embedded samples", e0.rows(), e1.rows())));
    }
    if n_pairs == 0 || e0.rows() < 2 {
        return Err(Error::Contract("M_embed needs n_pairs >= 1 and at least 2 samples".into()));
    }
    let mut rng = seeds::rng(seed);
    let (mut total, mut used) = (0.0, 0usize);
    let diff = |t: &Tensor, i: usize, j: usize| -> Vec<f64> { t.row(i).iter().zip(t.row(j)).map(|(a, b)| a - b).collect() };
    for _ in 0..n_pairs {
        let pick = sample(&mut rng, e0.rows(), 2);
        let (i, j) = (pick.index(0), pick.index(1));
        if let Some(c) = cosine(&diff(e0, i, j), &diff(e1, i, j)) {
            total += c;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Contract("every sampled pair had a zero difference vector".into()));
    }
    Ok(total / used as f64)
}

pub fn m_embed(features: &Tensor, model0: &Model, model1: &Model, n_pairs: usize, seed: u64) -> Result<f64> {
    let e0 = model0.encode(features)?;
    let e1 = model1.encode(features)?;
    m_embed_from_embeddings(&e0, &e1, n_pairs, seed)
}

/// Mean over classes of the 1D Wasserstein-1 distance between the two
/// models' logit columns.
pub fn m_logit(logits0: &Tensor, logits1: &Tensor) -> Result<f64> {
    if logits0.shape() != logits1.shape() || logits0.rank() != 2 {
        return Err(Error::Contract(format!(
            "logit shapes {:?} and {:?} differ",
            logits0.shape(),
            logits1.shape()
        )));
    }
    let (n, c) = (logits0.rows(), logits0.cols());
    if n == 0 || c == 0 {
        return Err(Error::Contract("M_logit on empty logits".into()));
    }
    let column = |t: &Tensor, k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = t.row_iter().map(|r| r[k]).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let mut total = 0.0;
    for k in 0..c {
        let (a, b) = (column(logits0, k), column(logits1, k));
        total += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    Ok(total / c as f64)
}

/// Shannon entropy of the normalized per-class variances of `values`
/// (one column per class). All-zero variances count as uniform.
pub fn class_variance_entropy(values: &Tensor) -> Result<f64> {
    let (n, c) = (values.rows(), values.cols());
    if values.rank() != 2 || n < 2 {
        return Err(Error::Contract("class variance entropy needs at least 2 samples".into()));
    }
    let var: Vec<f64> = (0..c)
        .map(|k| {
            let mean = values.row_iter().map(|r| r[k]).sum::<f64>() / n as f64;
            values.row_iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let total: f64 = var.iter().sum();
    if total <= 0.0 {
        return Ok((c as f64).ln());
    }
    Ok(-var
        .iter()
        .map(|v| v / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Class hierarchy with a single root. Classes are its leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    root: String,
    parent: HashMap<String, String>,
    leaves: BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    root: String,
    children: BTreeMap<String, Vec<String>>,
}

impl Taxonomy {
    /// Parses `{"root": name, "children": {parent: [child, ...]}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("taxonomy: {e}")))?;
        let mut parent = HashMap::new();
        for (p, kids) in &file.children {
            for k in kids {
                if k == &file.root {
                    return Err(Error::Config(format!("taxonomy: root {k:?} listed as a child")));
                }
                if let Some(prev) = parent.insert(k.clone(), p.clone()) {
                    return Err(Error::Config(format!(
                        "taxonomy: {k:?} has two parents ({prev:?} and {p:?})"
                    )));
                }
            }
        }
        for p in file.children.keys() {
            if p != &file.root && !parent.contains_key(p) {
                return Err(Error::Config(format!("taxonomy: {p:?} is not reachable from the root")));
            }
        }
        let tax = Self {
            leaves: parent
                .keys()
                .filter(|k| file.children.get(*k).is_none_or(Vec::is_empty))
                .cloned()
                .collect(),
            root: file.root,
            parent,
        };
        // every node must reach the root without revisiting anything
        for node in tax.parent.keys() {
            tax.path_to_root(node)?;
        }
        Ok(tax)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn leaves(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(String::as_str)
    }

    /// `[node, parent, ..., root]`.
    fn path_to_root<'a>(&'a self, node: &'a str) -> Result<Vec<&'a str>> {
        let mut path = vec![node];
        let mut cur = node;
        while cur != self.root {
            cur = self
                .parent
                .get(cur)
                .ok_or_else(|| Error::Config(format!("taxonomy: {cur:?} is not in the tree")))?;
            if path.len() > self.parent.len() {
                return Err(Error::Config("taxonomy contains a cycle".into()));
            }
            path.push(cur);
        }
        Ok(path)
    }

    /// Edges from the deeper of the two leaves up to their lowest common
    /// ancestor.
    pub fn lca_edges(&self, a: &str, b: &str) -> Result<usize> {
        for x in [a, b] {
            if !self.leaves.contains(x) {
                return Err(Error::Config(format!("class {x:?} is not a taxonomy leaf")));
            }
        }
        let pa = self.path_to_root(a)?;
        let pb = self.path_to_root(b)?;
        let ancestors: HashMap<&str, usize> = pa.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let (ub, lca) = pb
            .iter()
            .enumerate()
            .find(|(_, n)| ancestors.contains_key(*n))
            .expect("both paths end at the root");
        let ua = ancestors[lca];
        Ok(ua.max(ub))
    }
}

/// Mean LCA edge distance between each sample's top-1 and top-2 classes.
/// `class_names[i]` names class `i` in the taxonomy.
pub fn lca_distance(tax: &Taxonomy, class_names: &[String], top1: &[usize], top2: &[usize]) -> Result<f64> {
    if top1.len() != top2.len() || top1.is_empty() {
        return Err(Error::Contract("top-1 and top-2 lists must be nonempty and equal length".into()));
    }
    let name = |c: usize| {
        class_names
            .get(c)
            .ok_or_else(|| Error::Config(format!("class {c} has no taxonomy name")))
    };
    let mut total = 0usize;
    for (&a, &b) in top1.iter().zip(top2) {
        total += tax.lca_edges(name(a)?, name(b)?)?;
    }
    Ok(total as f64 / top1.len() as f64)
}

/// Indices of the largest and second-largest entry of each row.
pub fn top_two(probs: &Tensor) -> (Vec<usize>, Vec<usize>) {
    probs
        .row_iter()
        .map(|r| {
            let mut idx: Vec<usize> = (0..r.len()).collect();
            idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
            (idx[0], idx.get(1).copied().unwrap_or(idx[0]))
        })
        .unzip()
}

/// Fraction of corrupted training samples (noisy != clean) whose
/// refurbished hard label equals the clean label. `None` when nothing is
/// corrupted.
pub fn label_recovery_rate(y_hard: &[usize], noisy: &[usize], clean: &[usize]) -> Result<Option<f64>> {
    if y_hard.len() != noisy.len() || noisy.len() != clean.len() {
        return Err(Error::Contract("label vectors differ in length".into()));
    }
    let corrupted: Vec<usize> = (0..clean.len()).filter(|&i| noisy[i] != clean[i]).collect();
    if corrupted.is_empty() {
        return Ok(None);
    }
    let hits = corrupted.iter().filter(|&&i| y_hard[i] == clean[i]).count();
    Ok(Some(hits as f64 / corrupted.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiBoundReport {
    pub k: usize,
    pub n: usize,
    pub tau: f64,
    /// Plug-in mutual information of the paired latents.
    pub mutual_information: f64,
    pub mean_loss: f64,
    /// `log N - mean_loss`.
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Monte Carlo check of `I >= log N - L` for the class-positive contrastive
/// loss on a discrete toy: latent `z` uniform over `K` symbols, both models
/// embed as `onehot(z)`, batches hold `N` distinct latents.
pub fn mi_bound_check(k: usize, n: usize, tau: f64, n_batches: usize, seed: u64) -> Result<MiBoundReport> {
    if n < 2 || k < n {
        return Err(Error::Config(format!("MI check needs K >= N >= 2, got K={k}, N={n}")));
    }
    if tau.is_nan() || tau <= 0.0 || n_batches == 0 {
        return Err(Error::Config("MI check needs tau > 0 and at least one batch".into()));
    }
    let mut rng = seeds::rng(seed);
    let mut counts = vec![0u64; k];
    let mut loss_sum = 0.0;
    let mut sim = vec![0.0; n * n];
    for _ in 0..n_batches {
        let z = sample(&mut rng, k, n).into_vec();
        // cosine of one-hot codes is 1 on equal latents and 0 otherwise
        for j in 0..n {
            for m in 0..n {
                sim[j * n + m] = if z[j] == z[m] { 1.0 / tau } else { 0.0 };
            }
        }
        for j in 0..n {
            let row = &sim[j * n..(j + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            let pos = (0..n).filter(|&m| z[m] == z[j]).map(|m| row[m]).fold(f64::NEG_INFINITY, f64::max);
            let pos_lse = {
                let terms: Vec<f64> = (0..n).filter(|&m| z[m] == z[j]).map(|m| row[m]).collect();
                pos + terms.iter().map(|s| (s - pos).exp()).sum::<f64>().ln()
            };
            loss_sum += lse - pos_lse;
            counts[z[j]] += 1;
        }
    }
    // the paired latents are identical, so the plug-in MI is the entropy
    // of the empirical marginal
    let total = counts.iter().sum::<u64>() as f64;
    let mi = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>();
    let mean_loss = loss_sum / total;
    let bound = (n as f64).ln() - mean_loss;
    let slack = mi - bound;
    Ok(MiBoundReport {
        k,
        n,
        tau,
        mutual_information: mi,
        mean_loss,
        bound,
        slack,
        holds: slack >= -0.02,
    })
}

/// Embeddings, logits and probabilities of both models on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub embeddings: [Tensor; 2],
    pub logits: [Tensor; 2],
    pub probs: [Tensor; 2],
    pub labels: Vec<usize>,
}

impl Dump {
    pub fn compute(pair: &ModelPair, test: &EvalSet) -> Result<Self> {
        let f0 = pair.models[0].forward(&test.features)?;
        let f1 = pair.models[1].forward(&test.features)?;
        Ok(Self {
            embeddings: [f0.embeddings, f1.embeddings],
            logits: [f0.logits, f1.logits],
            probs: [f0.probs, f1.probs],
            labels: test.labels.clone(),
        })
    }

    pub fn ensemble_probs(&self) -> Tensor {
        let data = self.probs[0].data().iter().zip(self.probs[1].data()).map(|(a, b)| 0.5 * (a + b)).collect();
        Tensor::new(self.probs[0].shape().to_vec(), data).expect("same shape")
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new().with_meta("kind", "dump");
        for m in 0..2 {
            for (name, t) in [("embeddings", &self.embeddings[m]), ("logits", &self.logits[m]), ("probs", &self.probs[m])] {
                c.push(NamedArray::new(
                    format!("model{m}.{name}"),
                    t.shape().to_vec(),
                    ArrayData::F64(t.data().to_vec()),
                )?);
            }
        }
        let labels = self.labels.iter().map(|&l| l as i32).collect();
        c.push(NamedArray::new("labels", vec![self.labels.len()], ArrayData::I32(labels))?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta_str("kind").ok() != Some("dump") {
            return Err(Error::Format("container is not an embedding dump".into()));
        }
        let tensor = |name: String| -> Result<Tensor> {
            let a = c.array(&name)?;
            match &a.data {
                ArrayData::F64(v) if a.shape.len() == 2 => Tensor::new(a.shape.clone(), v.clone()),
                _ => Err(Error::Format(format!("array {name:?} must be a 2D f64 matrix"))),
            }
        };
        let get = |name: &str| -> Result<[Tensor; 2]> {
            Ok([tensor(format!("model0.{name}"))?, tensor(format!("model1.{name}"))?])
        };
        let labels = match c.array("labels").map(|a| &a.data) {
            Ok(ArrayData::I32(v)) => v
                .iter()
                .map(|&l| usize::try_from(l).map_err(|_| Error::Format(format!("negative label {l}"))))
                .collect::<Result<Vec<_>>>()?,
            _ => return Err(Error::Format("dump lacks i32 array \"labels\"".into())),
        };
        let dump = Self {
            embeddings: get("embeddings")?,
            logits: get("logits")?,
            probs: get("probs")?,
            labels,
        };
        let n = dump.labels.len();
        let all = dump.embeddings.iter().chain(&dump.logits).chain(&dump.probs);
        if all.clone().any(|t| t.rows() != n)
            || dump.logits[0].shape() != dump.logits[1].shape()
            || dump.probs[0].shape() != dump.logits[0].shape()
            || dump.probs[1].shape() != dump.logits[0].shape()
            || dump.embeddings[0].shape() != dump.embeddings[1].shape()
        {
            return Err(Error::Format("dump arrays disagree in shape".into()));
        }
        let classes = dump.probs[0].cols();
        if dump.labels.iter().any(|&l| l >= classes) {
            return Err(Error::Format("dump label out of range".into()));
        }
        Ok(dump)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Which per-class quantity the variance entropy is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceOver {
    #[default]
    Probs,
    Logits,
}

/// Semantic-consistency diagnostics of a model pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMetrics {
    pub m_embed: f64,
    pub m_logit: f64,
    /// Mean over the two models.
    pub class_variance_entropy: f64,
    pub lca: Option<f64>,
}

impl SemanticMetrics {
    pub fn from_dump(
        dump: &Dump,
        n_pairs: usize,
        seed: u64,
        over: VarianceOver,
        taxonomy: Option<(&Taxonomy, &[String])>,
    ) -> Result<Self> {
        let src = match over {
            VarianceOver::Probs => &dump.probs,
            VarianceOver::Logits => &dump.logits,
        };
        let cve = 0.5 * (class_variance_entropy(&src[0])? + class_variance_entropy(&src[1])?);
        let lca = match taxonomy {
            Some((tax, names)) => {
                let (t1, t2) = top_two(&dump.ensemble_probs());
                Some(lca_distance(tax, names, &t1, &t2)?)
            }
            None => None,
        };
        Ok(Self {
            m_embed: m_embed_from_embeddings(&dump.embeddings[0], &dump.embeddings[1], n_pairs, seed)?,
            m_logit: m_logit(&dump.logits[0], &dump.logits[1])?,
            class_variance_entropy: cve,
            lca,
        })
    }
}
