//! Decoupled direction and norm attack: gradient steps with a cosine-decayed
//! step size while the L2 norm budget shrinks on adversarial iterates and
//! grows otherwise. Returns the smallest successful perturbation seen.

use super::{clean_miss_result, tensor_from_rows, predict_rows, validated_result, AttackConfig, AttackResult, Distances, Norm};
use crate::data::ImageBatch;
use crate::error::{DimError, Result};
use crate::models::{argmax, TargetModel};
use crate::tensor::l2_norm;

const GAMMA: f32 = 0.05;
const INIT_EPS: f32 = 1.0;

pub fn ddn(model: &dyn TargetModel, batch: &ImageBatch, cfg: &AttackConfig) -> Result<Vec<AttackResult>> {
    if cfg.norm != Norm::L2 {
        return Err(DimError::Config("ddn is an L2 attack".into()));
    }
    if !model.is_differentiable() {
        return Err(DimError::NotDifferentiable);
    }
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results: Vec<Option<AttackResult>> = vec![None; n];
    let mut active: Vec<usize> = Vec::new();
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results[i] = Some(clean_miss_result(&rows[i]));
        } else {
            active.push(i);
        }
    }

    let mut delta: Vec<Vec<f32>> = active.iter().map(|&i| vec![0.0; rows[i].len()]).collect();
    let mut eps: Vec<f32> = vec![INIT_EPS; active.len()];
    let mut best: Vec<Option<(Vec<f32>, f32)>> = vec![None; active.len()];
    let mut queries = vec![1u64; n];

    let steps = cfg.steps.max(1);
    for step_idx in 0..cfg.steps {
        // Cosine decay from 1.0 to 0.01.
        let alpha = 0.01 + (1.0 - 0.01) * 0.5 * (1.0 + (std::f32::consts::PI * step_idx as f32 / steps as f32).cos());
        for (chunk_idx, chunk) in active.chunks(128).enumerate() {
            let base = chunk_idx * 128;
            let xs_rows: Vec<Vec<f32>> = (0..chunk.len())
                .map(|p| {
                    let i = chunk[p];
                    rows[i]
                        .iter()
                        .zip(&delta[base + p])
                        .map(|(&x, &d)| (x + d).clamp(0.0, 1.0))
                        .collect()
                })
                .collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| batch.labels[i]).collect();
            let xt = tensor_from_rows(&xs_rows);
            let (_, grad) = model.attack_loss_grad(&xt, &ys)?;
            let scores = model.scores(&xt)?;
            for (pos, &i) in chunk.iter().enumerate() {
                queries[i] += 2;
                let slot = base + pos;
                let adversarial = argmax(&scores[pos]) != batch.labels[i] as usize;
                if adversarial {
                    let d = Distances::between(&xs_rows[pos], &rows[i]).l2;
                    if best[slot].as_ref().map_or(true, |(_, bd)| d < *bd) {
                        best[slot] = Some((xs_rows[pos].clone(), d));
                    }
                }
                // Norm schedule: shrink on success, grow on failure.
                eps[slot] *= if adversarial { 1.0 - GAMMA } else { 1.0 + GAMMA };
                // Step along the normalized gradient, then project the
                // accumulated perturbation onto the eps sphere.
                let g = grad.item(pos);
                let gn = l2_norm(g).max(1e-12);
                for (d, &gv) in delta[slot].iter_mut().zip(g) {
                    *d += alpha * (f64::from(gv) / gn) as f32;
                }
                let dn = l2_norm(&delta[slot]).max(1e-12);
                let scale = (f64::from(eps[slot]) / dn) as f32;
                for d in delta[slot].iter_mut() {
                    *d *= scale;
                }
            }
        }
    }

    for (slot, &i) in active.iter().enumerate() {
        results[i] = Some(match best[slot].take() {
            Some((adv, _)) => validated_result(model, &rows[i], batch.labels[i], adv, queries[i])?,
            None => AttackResult::failure(queries[i]),
        });
    }
    Ok(results.into_iter().map(|r| r.expect("all samples resolved")).collect())
}
