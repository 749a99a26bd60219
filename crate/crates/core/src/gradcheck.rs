//! Finite-difference gradient suite over every loss term.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{self, CclBatch, LossParams, PgTarget, Target};
use crate::seeds;
use crate::tensor::{finite_difference_check, Tape, Tensor, Var};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn distributions(rng: &mut ChaCha8Rng, rows: usize, cols: usize, peak: f64) -> Tensor {
    let mut t = uniform(rng, rows, cols, 1.0);
    for r in 0..rows {
        let row = &mut t.data_mut()[r * cols..(r + 1) * cols];
        let hot = rng.random_range(0..cols);
        row[hot] += peak;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        row.iter_mut().for_each(|x| *x = (*x - max).exp() / z);
    }
    t
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn rows(tape: &mut Tape, x: Var, from: usize, to: usize) -> Result<Var> {
    tape.select_rows(x, (from..to).collect())
}

/// One random instance of a loss: the point to differentiate at and a
/// closure evaluating the loss there.
type Instance = (Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>);

fn instance(name: &str, rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    let d = rng.random_range(2..5);
    let tau = rng.random_range(0.2..1.0);
    match name {
        "ce_sharpen" => {
            let peer = distributions(rng, n, c, 1.0);
            let t = rng.random_range(0.3..1.0);
            let target = losses::sharpen(&peer, t).expect("valid peer");
            (
                uniform(rng, n, c, 2.0),
                Box::new(move |tape, z| {
                    let p = tape.softmax_rows(z)?;
                    losses::cross_entropy(tape, p, Target::Soft(&target))
                }),
            )
        }
        "pg" => {
            // a low threshold so some rows pass the gate and some do not
            let p_w = distributions(rng, n, c, 2.0);
            let thr = rng.random_range(0.3..0.7);
            (
                uniform(rng, n, c, 2.0),
                Box::new(move |tape, z| {
                    let p = tape.softmax_rows(z)?;
                    losses::pg_loss(tape, &p_w, p, thr, PgTarget::Soft)
                }),
            )
        }
        "acl" | "vm" | "mm" => {
            let f = match name {
                "acl" => losses::acl_loss,
                "vm" => losses::vm_loss,
                _ => losses::mm_loss,
            };
            (
                uniform(rng, 2 * n, d, 1.0),
                Box::new(move |tape, x| {
                    let s = rows(tape, x, 0, n)?;
                    let w = rows(tape, x, n, 2 * n)?;
                    f(tape, s, w, tau)
                }),
            )
        }
        "cclrl" => {
            let y = labels(rng, n, 2);
            (
                uniform(rng, 2 * n, d, 1.0),
                Box::new(move |tape, x| {
                    let s = rows(tape, x, 0, n)?;
                    let w = rows(tape, x, n, 2 * n)?;
                    losses::cclrl_loss(tape, s, w, &y, tau)
                }),
            )
        }
        "div" => (
            uniform(rng, n, c, 2.0),
            Box::new(|tape, z| {
                let p = tape.softmax_rows(z)?;
                losses::div_loss(tape, p)
            }),
        ),
        "total" => {
            // rows: strong embeddings, weak embeddings, peer weak embeddings;
            // class probabilities come from a fixed linear head
            let head = uniform(rng, d, c, 1.5);
            let p_w_own = distributions(rng, n, c, 3.0);
            let p_w_peer = distributions(rng, n, c, 1.0);
            let noisy = labels(rng, n, c);
            let hard = labels(rng, n, c);
            let omega: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let params = LossParams {
                c: rng.random_range(0.3..0.8),
                sharpen_t: 0.5,
                tau,
                pg_target: PgTarget::Soft,
            };
            (
                uniform(rng, 3 * n, d, 1.0),
                Box::new(move |tape, x| {
                    let emb_s = rows(tape, x, 0, n)?;
                    let emb_w = rows(tape, x, n, 2 * n)?;
                    let emb_w_peer = rows(tape, x, 2 * n, 3 * n)?;
                    let h = tape.constant(head.clone());
                    let z = tape.matmul(emb_s, h)?;
                    let p_s = tape.softmax_rows(z)?;
                    let batch = CclBatch {
                        p_s,
                        emb_s,
                        emb_w,
                        p_w_own: &p_w_own,
                        p_w_peer: &p_w_peer,
                        emb_w_peer,
                        noisy_labels: &noisy,
                        omega: &omega,
                        collab_hard: &hard,
                        params,
                    };
                    Ok(losses::total_loss(tape, &batch)?.0)
                }),
            )
        }
        other => unreachable!("no gradient instance for {other}"),
    }
}

pub const LOSSES: [&str; 8] = ["ce_sharpen", "pg", "acl", "vm", "cclrl", "mm", "div", "total"];

/// Checks every loss at `points` random points each.
pub fn run_suite(points: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    LOSSES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut worst = 0.0f64;
            for p in 0..points {
                let mut rng = seeds::rng(seeds::derive(seed, &[k as u64, p as u64]));
                let (point, f) = instance(name, &mut rng);
                worst = worst.max(finite_difference_check(|t, x| f(t, x), &point, STEP)?);
            }
            Ok(GradcheckReport {
                loss: name.to_string(),
                points,
                max_rel_error: worst,
                passed: worst <= TOLERANCE,
            })
        })
        .collect()
}
