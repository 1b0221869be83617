//! Single-step and iterative gradient attacks (FGM/FGSM, PGD, BIM).
//!
//! Samples are processed as one batch per gradient step; finished samples
//! drop out of the active set. Random starts come from per-sample streams.

use super::{
    clean_miss_result, enforce_budget, predict_rows, tensor_from_rows, validated_result,
    AttackConfig, AttackResult, Norm,
};
use crate::error::{DimError, Result};
use crate::models::TargetModel;
use crate::rng;
use crate::tensor::l2_norm;
use crate::data::ImageBatch;
use rand::Rng;

fn normalized_direction(grad: &[f32], norm: Norm) -> Option<Vec<f32>> {
    match norm {
        Norm::L2 => {
            let n = l2_norm(grad);
            if n <= 0.0 {
                return None;
            }
            Some(grad.iter().map(|&g| (f64::from(g) / n) as f32).collect())
        }
        Norm::Linf => {
            if grad.iter().all(|&g| g == 0.0) {
                return None;
            }
            Some(grad.iter().map(|&g| g.signum()).collect())
        }
        _ => None,
    }
}

/// Project `adv` onto the epsilon ball (in `norm`) around `orig`, in place.
fn project_ball(adv: &mut [f32], orig: &[f32], norm: Norm, eps: f32) {
    match norm {
        Norm::L2 => {
            let d: f64 = adv
                .iter()
                .zip(orig)
                .map(|(&a, &o)| (f64::from(a) - f64::from(o)).powi(2))
                .sum::<f64>()
                .sqrt();
            if d > f64::from(eps) {
                let scale = (f64::from(eps) / d) as f32;
                for (a, &o) in adv.iter_mut().zip(orig) {
                    *a = o + (*a - o) * scale;
                }
            }
        }
        Norm::Linf => {
            for (a, &o) in adv.iter_mut().zip(orig) {
                *a = a.clamp(o - eps, o + eps);
            }
        }
        _ => {}
    }
}

fn check_norm(cfg: &AttackConfig, op: &str) -> Result<()> {
    if !matches!(cfg.norm, Norm::L2 | Norm::Linf) {
        return Err(DimError::Config(format!(
            "{op} supports L2 and Linf only, got {}",
            cfg.norm.as_str()
        )));
    }
    Ok(())
}

/// Fast gradient method: one step of size epsilon along the normalized loss
/// gradient (L2: g/|g|; Linf: sign(g)), clamped to the pixel box.
pub fn fgm(model: &dyn TargetModel, batch: &ImageBatch, cfg: &AttackConfig) -> Result<Vec<AttackResult>> {
    check_norm(cfg, "fgm")?;
    let eps = cfg.require_epsilon()?;
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results: Vec<Option<AttackResult>> = vec![None; n];
    let mut active = Vec::new();
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results[i] = Some(clean_miss_result(&rows[i]));
        } else {
            active.push(i);
        }
    }
    for chunk in active.chunks(128) {
        let xs: Vec<Vec<f32>> = chunk.iter().map(|&i| rows[i].clone()).collect();
        let ys: Vec<u8> = chunk.iter().map(|&i| batch.labels[i]).collect();
        let (_, grad) = model.attack_loss_grad(&tensor_from_rows(&xs), &ys)?;
        for (pos, &i) in chunk.iter().enumerate() {
            match normalized_direction(grad.item(pos), cfg.norm) {
                Some(dir) => {
                    let mut candidate: Vec<f32> = rows[i]
                        .iter()
                        .zip(&dir)
                        .map(|(&x, &d)| (x + eps * d).clamp(0.0, 1.0))
                        .collect();
                    enforce_budget(&mut candidate, &rows[i], cfg.norm, eps);
                    results[i] = Some(validated_result(model, &rows[i], batch.labels[i], candidate, 2)?);
                }
                // Zero gradient leaves no direction to step in.
                None => results[i] = Some(AttackResult::failure(2)),
            }
        }
    }
    Ok(results.into_iter().map(|r| r.expect("all samples resolved")).collect())
}

/// Iterative gradient attack, projected onto the epsilon ball each step.
/// `random_start` distinguishes PGD from the basic iterative method. Each
/// sample stops at its first in-budget adversarial.
pub fn iterative_gradient(
    model: &dyn TargetModel,
    batch: &ImageBatch,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    check_norm(cfg, "iterative_gradient")?;
    let eps = cfg.require_epsilon()?;
    let step = cfg.resolved_step()?;
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results: Vec<Option<AttackResult>> = vec![None; n];
    let mut active: Vec<usize> = Vec::new();
    let mut current: Vec<Vec<f32>> = Vec::new();
    let mut queries = vec![1u64; n];
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results[i] = Some(clean_miss_result(&rows[i]));
            continue;
        }
        let mut x = rows[i].clone();
        if cfg.random_start {
            let mut rng = rng::stream(cfg.seed, "iterative-start", i as u64);

            match cfg.norm {
                Norm::Linf => {
                    for v in x.iter_mut() {
                        *v = (*v + rng.gen_range(-eps..=eps)).clamp(0.0, 1.0);
                    }
                }
                Norm::L2 => {
                    // Uniform in the ball: gaussian direction, radius by u^(1/d).
                    let dir: Vec<f64> = (0..x.len())
                        .map(|_| {
                            let u: f64 = rng.gen_range(1e-12..1.0);
                            let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                            (-2.0 * u.ln()).sqrt() * v.cos()
                        })
                        .collect();
                    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
                    let u: f64 = rng.gen_range(0.0..1.0f64);
                    let radius = f64::from(eps) * u.powf(1.0 / x.len() as f64);
                    for (v, d) in x.iter_mut().zip(&dir) {
                        *v = (*v + (radius * d / norm) as f32).clamp(0.0, 1.0);
                    }
                }
                _ => {}
            }
            enforce_budget(&mut x, &rows[i], cfg.norm, eps);
        }
        active.push(i);
        current.push(x);
    }

    for _ in 0..cfg.steps {
        if active.is_empty() {
            break;
        }
        let mut next_active = Vec::with_capacity(active.len());
        let mut next_current = Vec::with_capacity(active.len());
        for (chunk_idx, chunk) in active.chunks(128).enumerate() {
            let base = chunk_idx * 128;
            let xs: Vec<Vec<f32>> = (0..chunk.len()).map(|p| current[base + p].clone()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| batch.labels[i]).collect();
            let xt = tensor_from_rows(&xs);
            let (_, grad) = model.attack_loss_grad(&xt, &ys)?;
            let scores = model.scores(&xt)?;
            for (pos, &i) in chunk.iter().enumerate() {
                queries[i] += 2;
                // A sample that is already adversarial mid-run is validated
                // and retired before stepping further.
                let pred = crate::models::argmax(&scores[pos]);
                if pred != batch.labels[i] as usize {
                    results[i] =
                        Some(validated_result(model, &rows[i], batch.labels[i], xs[pos].clone(), queries[i])?);
                    if results[i].as_ref().unwrap().success {
                        continue;
                    }
                }
                let mut x = xs[pos].clone();
                if let Some(dir) = normalized_direction(grad.item(pos), cfg.norm) {
                    for (v, &d) in x.iter_mut().zip(&dir) {
                        *v += step * d;
                    }
                }
                project_ball(&mut x, &rows[i], cfg.norm, eps);
                for v in x.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                enforce_budget(&mut x, &rows[i], cfg.norm, eps);
                next_active.push(i);
                next_current.push(x);
            }
        }
        active = next_active;
        current = next_current;
    }

    // Final check for samples that never early-exited.
    for (pos, &i) in active.iter().enumerate() {
        results[i] = Some(validated_result(
            model,
            &rows[i],
            batch.labels[i],
            current[pos].clone(),
            queries[i],
        )?);
    }
    Ok(results.into_iter().map(|r| r.expect("all samples resolved")).collect())
}
