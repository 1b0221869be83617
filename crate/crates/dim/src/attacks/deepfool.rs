//! DeepFool: iterative linearization stepping toward the nearest class
//! boundary, with a small overshoot. L2 and Linf variants.

use super::{clean_miss_result, predict_rows, tensor_from_rows, validated_result, AttackConfig, AttackResult, Norm};
use crate::data::ImageBatch;
use crate::error::{DimError, Result};
use crate::models::{argmax, TargetModel};
use crate::tensor::Tensor;

const OVERSHOOT: f32 = 0.02;
const ETA: f64 = 1e-4;

/// Per-class input gradients for a batch: `grads[k]` holds d(score_k)/dx.
fn class_grads(model: &dyn TargetModel, xs: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let n = xs.batch();
    let mut out = Vec::with_capacity(k);
    for class in 0..k {
        let mut w = vec![vec![0.0f32; k]; n];
        for row in w.iter_mut() {
            row[class] = 1.0;
        }
        let (_, grad) = model.score_combo_grad(xs, &w)?;
        out.push(grad);
    }
    Ok(out)
}

pub fn deepfool(model: &dyn TargetModel, batch: &ImageBatch, cfg: &AttackConfig) -> Result<Vec<AttackResult>> {
    if !matches!(cfg.norm, Norm::L2 | Norm::Linf) {
        return Err(DimError::Config("deepfool supports L2 and Linf".into()));
    }
    if !model.is_differentiable() {
        return Err(DimError::NotDifferentiable);
    }
    let k = model.num_classes();
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results: Vec<Option<AttackResult>> = vec![None; n];
    let mut active = Vec::new();
    let mut current = Vec::new();
    let mut queries = vec![1u64; n];
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results[i] = Some(clean_miss_result(&rows[i]));
        } else {
            active.push(i);
            current.push(rows[i].clone());
        }
    }

    for _ in 0..cfg.steps {
        if active.is_empty() {
            break;
        }
        let mut next_active = Vec::new();
        let mut next_current = Vec::new();
        for (chunk_idx, chunk) in active.chunks(64).enumerate() {
            let base = chunk_idx * 64;
            let xs_rows: Vec<Vec<f32>> = (0..chunk.len()).map(|p| current[base + p].clone()).collect();
            let xt = tensor_from_rows(&xs_rows);
            let scores = model.scores(&xt)?;
            let grads = class_grads(model, &xt, k)?;
            for (pos, &i) in chunk.iter().enumerate() {
                queries[i] += 1 + k as u64;
                let y = batch.labels[i] as usize;
                if argmax(&scores[pos]) != y {
                    results[i] = Some(validated_result(model, &rows[i], batch.labels[i], xs_rows[pos].clone(), queries[i])?);
                    if results[i].as_ref().unwrap().success {
                        continue;
                    }
                }
                // Pick the boundary with the smallest |f'| / ||w'||.
                let gy = grads[y].item(pos);
                let mut best: Option<(f64, usize, f64)> = None; // (ratio, class, wnorm)
                for c in 0..k {
                    if c == y {
                        continue;
                    }
                    let f = f64::from(scores[pos][c]) - f64::from(scores[pos][y]);
                    let gc = grads[c].item(pos);
                    let wnorm = match cfg.norm {
                        Norm::L2 => gc
                            .iter()
                            .zip(gy)
                            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                            .sum::<f64>()
                            .sqrt(),
                        _ => gc
                            .iter()
                            .zip(gy)
                            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
                            .sum::<f64>(),
                    };
                    if wnorm <= 1e-12 {
                        continue;
                    }
                    let ratio = f.abs() / wnorm;
                    if best.map_or(true, |(r, _, _)| ratio < r) {
                        best = Some((ratio, c, wnorm));
                    }
                }
                let Some((_, l, wnorm)) = best else {
                    results[i] = Some(AttackResult::failure(queries[i]));
                    continue;
                };
                let f = (f64::from(scores[pos][l]) - f64::from(scores[pos][y])).abs() + ETA;
                let gl = grads[l].item(pos);
                let mut x = xs_rows[pos].clone();
                match cfg.norm {
                    Norm::L2 => {
                        let scale = f / (wnorm * wnorm);
                        for (v, (&a, &b)) in x.iter_mut().zip(gl.iter().zip(gy)) {
                            *v += ((1.0 + f64::from(OVERSHOOT)) * scale * (f64::from(a) - f64::from(b))) as f32;
                        }
                    }
                    _ => {
                        let scale = f / wnorm;
                        for (v, (&a, &b)) in x.iter_mut().zip(gl.iter().zip(gy)) {
                            let s = (f64::from(a) - f64::from(b)).signum();
                            *v += ((1.0 + f64::from(OVERSHOOT)) * scale * s) as f32;
                        }
                    }
                }
                for v in x.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                next_active.push(i);
                next_current.push(x);
            }
        }
        active = next_active;
        current = next_current;
    }

    for (pos, &i) in active.iter().enumerate() {
        results[i] = Some(validated_result(model, &rows[i], batch.labels[i], current[pos].clone(), queries[i])?);
    }
    Ok(results.into_iter().map(|r| r.expect("all samples resolved")).collect())
}
