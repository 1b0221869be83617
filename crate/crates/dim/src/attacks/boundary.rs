//! Decision boundary attack: random walk along the adversarial region's
//! boundary, alternating spherical (orthogonal) steps with contractions
//! toward the original image. Both step sizes self-tune on their acceptance
//! rates; a periodic ray bisection records the closest boundary crossing
//! without moving the walk.

use super::{clean_miss_result, predict_rows, tensor_from_rows, validated_result, AttackConfig, AttackResult};
use crate::data::ImageBatch;
use crate::error::Result;
use crate::models::TargetModel;
use crate::rng;
use crate::tensor::l2_norm;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn misclassified(model: &dyn TargetModel, x: &[f32], label: u8, queries: &mut u64) -> Result<bool> {
    *queries += 1;
    let pred = model.predict(&tensor_from_rows(std::slice::from_ref(&x.to_vec())))?[0];
    Ok(pred != label as usize)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u: f64 = rng.gen_range(1e-12..1.0);
            let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u.ln()).sqrt() * v.cos()
        })
        .collect()
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    l2_norm(&a.iter().zip(b).map(|(&x, &y)| x - y).collect::<Vec<f32>>())
}

/// Blend point x + t (s - x), clamped to the pixel box.
fn ray_point(x: &[f32], s: &[f32], t: f64) -> Vec<f32> {
    x.iter()
        .zip(s)
        .map(|(&o, &v)| ((f64::from(o) + t * (f64::from(v) - f64::from(o))) as f32).clamp(0.0, 1.0))
        .collect()
}

/// Bisect the ray from `x` through `s` to the decision boundary; returns the
/// closest adversarial point found (t resolution 2^-steps).
fn ray_bisect(
    model: &dyn TargetModel,
    x: &[f32],
    s: &[f32],
    label: u8,
    steps: usize,
    queries: &mut u64,
) -> Result<Vec<f32>> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if misclassified(model, &ray_point(x, s, mid), label, queries)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ray_point(x, s, hi))
}

/// Uniform-noise starting point pulled toward the original by bisection.
fn starting_point(
    model: &dyn TargetModel,
    x: &[f32],
    label: u8,
    seed: u64,
    queries: &mut u64,
) -> Result<Option<Vec<f32>>> {
    for draw in 0..200u64 {
        let mut rng = rng::stream(seed, "boundary-init", draw);
        let cand: Vec<f32> = (0..x.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
        if misclassified(model, &cand, label, queries)? {
            return Ok(Some(ray_bisect(model, x, &cand, label, 14, queries)?));
        }
    }
    Ok(None)
}

pub fn boundary_attack(model: &dyn TargetModel, batch: &ImageBatch, cfg: &AttackConfig) -> Result<Vec<AttackResult>> {
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results = Vec::with_capacity(n);
    let max_queries = cfg.steps.max(100) as u64;
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results.push(clean_miss_result(&rows[i]));
            continue;
        }
        let x = &rows[i];
        let label = batch.labels[i];
        let mut queries = 1u64;
        let seed = rng::derive(cfg.seed, &format!("boundary-{i}"));
        let Some(mut adv) = starting_point(model, x, label, seed, &mut queries)? else {
            results.push(AttackResult::failure(queries));
            continue;
        };
        let mut walk_rng = rng::stream(seed, "boundary-walk", 0);
        let mut spherical_step = 1e-2f64;
        let mut source_step = 1e-2f64;
        let mut orth_hits = 0u32;
        let mut orth_tries = 0u32;
        let mut src_hits = 0u32;
        let mut src_tries = 0u32;
        let mut best = adv.clone();
        let mut best_d = distance(&adv, x);
        let mut since_bisect = 0u32;

        while queries + 12 <= max_queries {
            let delta: Vec<f64> = adv.iter().zip(x).map(|(&a, &o)| f64::from(a) - f64::from(o)).collect();
            let d = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if d < 1e-7 {
                break;
            }
            // Spherical candidate: orthogonal perturbation re-projected onto
            // the sphere of radius d around the original.
            let eta = gaussian(&mut walk_rng, x.len());
            let dot: f64 = eta.iter().zip(&delta).map(|(e, dl)| e * dl).sum();
            let mut orth: Vec<f64> = eta
                .iter()
                .zip(&delta)
                .map(|(e, dl)| e - dot / (d * d) * dl)
                .collect();
            let onorm = orth.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for o in orth.iter_mut() {
                *o *= spherical_step * d / onorm;
            }
            let mut cand: Vec<f64> = delta.iter().zip(&orth).map(|(dl, o)| dl + o).collect();
            let cnorm = cand.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for c in cand.iter_mut() {
                *c *= d / cnorm;
            }
            let spherical: Vec<f32> = x
                .iter()
                .zip(&cand)
                .map(|(&o, &dl)| (f64::from(o) + dl).clamp(0.0, 1.0) as f32)
                .collect();
            orth_tries += 1;
            if misclassified(model, &spherical, label, &mut queries)? {
                orth_hits += 1;
                // Contraction toward the original.
                let contracted = ray_point(x, &spherical, 1.0 - source_step);
                src_tries += 1;
                if misclassified(model, &contracted, label, &mut queries)? {
                    src_hits += 1;
                    adv = contracted;
                } else {
                    adv = spherical;
                }
                let nd = distance(&adv, x);
                if nd < best_d {
                    best_d = nd;
                    best = adv.clone();
                }
            }
            since_bisect += 1;
            if since_bisect >= 30 {
                // Record the boundary crossing along the current ray; the
                // walk keeps its slack.
                since_bisect = 0;
                let crossing = ray_bisect(model, x, &adv, label, 8, &mut queries)?;
                let nd = distance(&crossing, x);
                if nd < best_d {
                    best_d = nd;
                    best = crossing;
                }
            }
            // Acceptance targets ~50% (spherical) and ~25% (source).
            if orth_tries >= 20 {
                let rate = f64::from(orth_hits) / f64::from(orth_tries);
                spherical_step *= if rate > 0.5 { 1.3 } else { 0.7 };
                spherical_step = spherical_step.clamp(1e-5, 0.5);
                orth_hits = 0;
                orth_tries = 0;
            }
            if src_tries >= 20 {
                let rate = f64::from(src_hits) / f64::from(src_tries);
                source_step *= if rate > 0.25 { 1.3 } else { 0.7 };
                source_step = source_step.clamp(1e-6, 0.5);
                src_hits = 0;
                src_tries = 0;
            }
        }
        results.push(validated_result(model, x, label, best, queries)?);
    }
    Ok(results)
}
