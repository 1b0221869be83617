//! Exact (quadratic) t-SNE.
//!
//! Per-point bandwidths come from a binary search matching the target
//! perplexity's entropy within 1e-4; the embedding descends the KL
//! divergence with momentum 0.5 -> 0.8 (switching at iteration 250) and
//! 12x early exaggeration over the first 250 iterations.
//!
//! Every reduction iterates points in a canonical order keyed on the point
//! contents, and the 2-D init is seeded per point, so permuting the input
//! rows permutes the output rows bit-for-bit.

use crate::error::{DimError, Result};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: 30.0, iters: 1000, learning_rate: 200.0, seed: 0 }
    }
}

/// 2-D embedding of one internal model's latents.
#[derive(Debug, Clone)]
pub struct LatentEmbedding {
    pub points: Vec<[f32; 2]>,
    pub labels: Vec<u8>,
    pub model_index: usize,
    pub initial_kl: f64,
    pub final_kl: f64,
}

const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_SWITCH: usize = 250;
const ENTROPY_TOL: f64 = 1e-4;
const P_FLOOR: f64 = 1e-12;

fn point_key(row: &[f32]) -> u64 {
    let mut bytes = Vec::with_capacity(row.len() * 4);
    for v in row {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    rng::content_hash(&bytes)
}

/// Conditional distribution row via binary search on the precision beta.
fn p_conditional_row(d2_row: &[f64], target_entropy: f64, order: &[usize], me: usize) -> Vec<f64> {
    let mut beta = 1.0f64;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    let mut probs = vec![0.0f64; d2_row.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for &j in order {
            if j == me {
                probs[j] = 0.0;
                continue;
            }
            let p = (-beta * d2_row[j]).exp();
            probs[j] = p;
            sum += p;
        }
        if sum <= 0.0 {
            // All mass collapsed; soften and retry.
            beta_max = beta;
            beta = if beta_min.is_finite() { 0.5 * (beta + beta_min) } else { beta * 0.5 };
            continue;
        }
        let mut entropy = 0.0;
        for &j in order {
            if j == me {
                continue;
            }
            let p = probs[j] / sum;
            probs[j] = p;
            if p > P_FLOOR {
                entropy -= p * p.ln();
            }
        }
        let diff = entropy - target_entropy;
        if diff.abs() < ENTROPY_TOL {
            return probs;
        }
        if diff > 0.0 {
            beta_min = beta;
            beta = if beta_max.is_finite() { 0.5 * (beta + beta_max) } else { beta * 2.0 };
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() { 0.5 * (beta + beta_min) } else { beta * 0.5 };
        }
    }
    probs
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]], order: &[usize]) -> f64 {
    let n = y.len();
    let mut z = 0.0f64;
    for &i in order {
        for &j in order {
            if j == i {
                continue;
            }
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            z += 1.0 / (1.0 + dx * dx + dy * dy);
        }
    }
    let mut kl = 0.0;
    for &i in order {
        for &j in order {
            if j == i {
                continue;
            }
            let pij = p[i * n + j];
            if pij <= P_FLOOR {
                continue;
            }
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let qij = (1.0 / (1.0 + dx * dx + dy * dy)) / z;
            kl += pij * (pij / qij.max(P_FLOOR)).ln();
        }
    }
    kl
}

/// Embed `latents` (N rows) into 2-D.
pub fn tsne_embed(
    latents: &[Vec<f32>],
    labels: &[u8],
    model_index: usize,
    cfg: &TsneConfig,
) -> Result<LatentEmbedding> {
    let n = latents.len();
    if n != labels.len() {
        return Err(DimError::Invalid("latent/label count mismatch".into()));
    }
    if (n as f64) < 3.0 * cfg.perplexity {
        return Err(DimError::Invalid(format!(
            "{n} samples cannot support perplexity {} (need at least 3x)",
            cfg.perplexity
        )));
    }
    let dim = latents[0].len();
    if latents.iter().any(|r| r.len() != dim) {
        return Err(DimError::Invalid("ragged latent rows".into()));
    }
    if latents.iter().all(|r| r == &latents[0]) {
        return Err(DimError::Invalid(
            "degenerate latents: every row is identical".into(),
        ));
    }

    // Canonical processing order: by content hash, ties by index (identical
    // points interact symmetrically, so index ties cannot break equivariance).
    let keys: Vec<u64> = latents.iter().map(|r| point_key(r)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| keys[i]);

    // Pairwise squared distances in f64.
    let mut d2 = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0f64;
            for k in 0..dim {
                let d = f64::from(latents[i][k]) - f64::from(latents[j][k]);
                acc += d * d;
            }
            d2[i * n + j] = acc;
            d2[j * n + i] = acc;
        }
    }

    // Symmetrized joint distribution.
    let target_entropy = cfg.perplexity.ln();
    let mut p = vec![0.0f64; n * n];
    for &i in &order {
        let row = p_conditional_row(&d2[i * n..(i + 1) * n], target_entropy, &order, i);
        for &j in &order {
            p[i * n + j] = row[j];
        }
    }
    let mut p_sym = vec![0.0f64; n * n];
    for &i in &order {
        for &j in &order {
            p_sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
        }
    }

    // Per-point seeded init keeps the embedding equivariant to row order.
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, "tsne-init", keys[i]);
            let g = |r: &mut rand_chacha::ChaCha8Rng| {
                let u: f64 = r.gen_range(1e-12..1.0);
                let v: f64 = r.gen_range(0.0..std::f64::consts::TAU);
                (-2.0 * u.ln()).sqrt() * v.cos() * 1e-2
            };
            [g(&mut r), g(&mut r)]
        })
        .collect();

    let initial_kl = kl_divergence(&p_sym, &y, &order);

    let mut vel = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for iter in 0..cfg.iters {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        // Student-t normalizer.
        let mut z = 0.0f64;
        for &i in &order {
            for &j in &order {
                if j == i {
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                z += 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
        let mut grad = vec![[0.0f64; 2]; n];
        for &i in &order {
            let mut gx = 0.0f64;
            let mut gy = 0.0f64;
            for &j in &order {
                if j == i {
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                let qij = w / z;
                let mult = (exaggeration * p_sym[i * n + j] - qij) * w;
                gx += 4.0 * mult * dx;
                gy += 4.0 * mult * dy;
            }
            grad[i] = [gx, gy];
        }
        for i in 0..n {
            for c in 0..2 {
                let same_sign = grad[i][c].signum() == vel[i][c].signum();
                gains[i][c] = if same_sign {
                    (gains[i][c] * 0.8).max(0.01)
                } else {
                    gains[i][c] + 0.2
                };
                vel[i][c] = momentum * vel[i][c] - cfg.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += vel[i][c];
            }
        }
        // Re-center (canonical order keeps the mean permutation-stable).
        let mut mean = [0.0f64; 2];
        for &i in &order {
            mean[0] += y[i][0];
            mean[1] += y[i][1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for i in 0..n {
            y[i][0] -= mean[0];
            y[i][1] -= mean[1];
        }
    }

    let final_kl = kl_divergence(&p_sym, &y, &order);
    Ok(LatentEmbedding {
        points: y.iter().map(|p| [p[0] as f32, p[1] as f32]).collect(),
        labels: labels.to_vec(),
        model_index,
        initial_kl,
        final_kl,
    })
}
