//! Carlini & Wagner L2: tanh-space minimization of
//! `|delta|^2 + c * max(s_y - max_{k!=y} s_k, -kappa)` with binary search
//! over `c`. The tanh parameterization keeps candidates inside the pixel box
//! by construction.

use super::{clean_miss_result, predict_rows, tensor_from_rows, validated_result, AttackConfig, AttackResult, Distances, Norm};
use crate::data::ImageBatch;
use crate::error::{DimError, Result};
use crate::models::TargetModel;

const KAPPA: f32 = 0.0;
const BINARY_SEARCH_ROUNDS: usize = 5;
const INITIAL_C: f32 = 1e-2;
const LR: f32 = 1e-2;

fn atanh(x: f32) -> f32 {
    // Inputs are clipped away from the open-interval bounds.
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

pub fn carlini_wagner_l2(
    model: &dyn TargetModel,
    batch: &ImageBatch,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    if cfg.norm != Norm::L2 {
        return Err(DimError::Config("carlini_wagner is an L2 attack".into()));
    }
    if !model.is_differentiable() {
        return Err(DimError::NotDifferentiable);
    }
    let k = model.num_classes();
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

    let dim = if n > 0 { rows[0].len() } else { 0 };
    let w_orig: Vec<Vec<f32>> = active
        .iter()
        .map(|&i| rows[i].iter().map(|&x| atanh((2.0 * x - 1.0).clamp(-1.0 + 1e-6, 1.0 - 1e-6))).collect())
        .collect();

    let mut c_lo = vec![0.0f32; active.len()];
    let mut c_hi = vec![f32::INFINITY; active.len()];
    let mut c_cur = vec![INITIAL_C; active.len()];
    let mut best: Vec<Option<(Vec<f32>, f32)>> = vec![None; active.len()];
    let mut queries = vec![1u64; n];

    for _round in 0..BINARY_SEARCH_ROUNDS {
        // Fresh Adam state per round, starting from the original image.
        let mut w: Vec<Vec<f32>> = w_orig.clone();
        let mut m = vec![vec![0.0f32; dim]; active.len()];
        let mut v = vec![vec![0.0f32; dim]; active.len()];
        let mut round_best: Vec<Option<(Vec<f32>, f32)>> = vec![None; active.len()];
        for t in 1..=cfg.steps {
            for (chunk_idx, chunk) in active.chunks(128).enumerate() {
                let base = chunk_idx * 128;
                let xs_rows: Vec<Vec<f32>> = (0..chunk.len())
                    .map(|p| w[base + p].iter().map(|&wv| 0.5 * (wv.tanh() + 1.0)).collect())
                    .collect();
                let xt = tensor_from_rows(&xs_rows);
                let scores = model.scores(&xt)?;
                // Margin weights: d/ds of max(s_y - max_other, -kappa).
                let mut combo = vec![vec![0.0f32; k]; chunk.len()];
                let mut margins = Vec::with_capacity(chunk.len());
                for (pos, &i) in chunk.iter().enumerate() {
                    let y = batch.labels[i] as usize;
                    let mut rival = usize::from(y == 0);
                    for c in 0..k {
                        if c != y && scores[pos][c] > scores[pos][rival] {
                            rival = c;
                        }
                    }
                    let margin = scores[pos][y] - scores[pos][rival];
                    margins.push(margin);
                    if margin > -KAPPA {
                        combo[pos][y] = 1.0;
                        combo[pos][rival] = -1.0;
                    }
                }
                let (_, grad) = model.score_combo_grad(&xt, &combo)?;
                for (pos, &i) in chunk.iter().enumerate() {
                    queries[i] += 2;
                    let slot = base + pos;
                    let adversarial = margins[pos] < 0.0;
                    if adversarial {
                        let d = Distances::between(&xs_rows[pos], &rows[i]).l2;
                        if round_best[slot].as_ref().map_or(true, |(_, bd)| d < *bd) {
                            round_best[slot] = Some((xs_rows[pos].clone(), d));
                        }
                    }
                    // d(objective)/dw = (2 delta + c * dmargin/dx) * dx/dw.
                    let c = c_cur[slot];
                    let bc1 = 1.0 - 0.9f32.powi(t as i32);
                    let bc2 = 1.0 - 0.999f32.powi(t as i32);
                    for j in 0..dim {
                        let x = xs_rows[pos][j];
                        let dx_dw = 0.5 * (1.0 - (2.0 * x - 1.0) * (2.0 * x - 1.0));
                        let dobj_dx = 2.0 * (x - rows[i][j]) + c * grad.item(pos)[j];
                        let g = dobj_dx * dx_dw;
                        m[slot][j] = 0.9 * m[slot][j] + 0.1 * g;
                        v[slot][j] = 0.999 * v[slot][j] + 0.001 * g * g;
                        w[slot][j] -= LR * (m[slot][j] / bc1) / ((v[slot][j] / bc2).sqrt() + 1e-8);
                    }
                }
            }
        }
        // Binary search update on c, per sample.
        for slot in 0..active.len() {
            match &round_best[slot] {
                Some((adv, d)) => {
                    if best[slot].as_ref().map_or(true, |(_, bd)| d < bd) {
                        best[slot] = Some((adv.clone(), *d));
                    }
                    c_hi[slot] = c_cur[slot];
                }
                None => c_lo[slot] = c_cur[slot],
            }
            c_cur[slot] = if c_hi[slot].is_finite() {
                0.5 * (c_lo[slot] + c_hi[slot])
            } else {
                c_cur[slot] * 10.0
            };
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
