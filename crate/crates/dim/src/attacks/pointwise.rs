//! Pointwise attack: start from a salt & pepper adversarial, then greedily
//! reset perturbed pixels to their original values while the image stays
//! adversarial, minimizing the L0 distance. Best of `repeats` runs.

use super::{clean_miss_result, predict_rows, tensor_from_rows, validated_result, AttackConfig, AttackResult, Distances};
use crate::data::ImageBatch;
use crate::error::Result;
use crate::models::TargetModel;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn is_adversarial(model: &dyn TargetModel, x: &[f32], label: u8, queries: &mut u64) -> Result<bool> {
    *queries += 1;
    let pred = model.predict(&tensor_from_rows(std::slice::from_ref(&x.to_vec())))?[0];
    Ok(pred != label as usize)
}

/// Salt & pepper starting point: increase flip density until misclassified.
fn find_start(
    model: &dyn TargetModel,
    x: &[f32],
    label: u8,
    seed: u64,
    run: usize,
    queries: &mut u64,
) -> Result<Option<Vec<f32>>> {
    let mut rng = rng::stream(seed, "pointwise-start", run as u64);
    let dim = x.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.shuffle(&mut rng);
    let flips: Vec<f32> = (0..dim).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
    for level in 1..=50usize {
        let count = (dim * level).div_ceil(50);
        let mut cand = x.to_vec();
        for &px in order.iter().take(count) {
            cand[px] = flips[px];
        }
        if is_adversarial(model, &cand, label, queries)? {
            return Ok(Some(cand));
        }
    }
    Ok(None)
}

pub fn pointwise(model: &dyn TargetModel, batch: &ImageBatch, cfg: &AttackConfig) -> Result<Vec<AttackResult>> {
    let n = batch.len();
    let rows: Vec<Vec<f32>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let clean_preds = predict_rows(model, &rows)?;
    let mut results = Vec::with_capacity(n);
    for i in 0..n {
        if clean_preds[i] != batch.labels[i] as usize {
            results.push(clean_miss_result(&rows[i]));
            continue;
        }
        let x = &rows[i];
        let label = batch.labels[i];
        let mut queries = 1u64;
        let mut best: Option<(Vec<f32>, f32)> = None;
        for run in 0..cfg.repeats {
            let run_seed = rng::derive(cfg.seed, &format!("pointwise-{i}"));
            let Some(mut adv) = find_start(model, x, label, run_seed, run, &mut queries)? else {
                continue;
            };
            // Greedy passes: reset each still-perturbed pixel if the image
            // stays adversarial; every accepted reset lowers L0 by one.
            let mut rng = rng::stream(run_seed, "pointwise-order", run as u64);
            loop {
                let mut changed: Vec<usize> =
                    (0..adv.len()).filter(|&p| adv[p] != x[p]).collect();
                changed.shuffle(&mut rng);
                let mut improved = false;
                for p in changed {
                    let old = adv[p];
                    adv[p] = x[p];
                    if is_adversarial(model, &adv, label, &mut queries)? {
                        improved = true;
                    } else {
                        adv[p] = old;
                    }
                }
                if !improved {
                    break;
                }
            }
            let d = Distances::between(&adv, x).l0;
            if best.as_ref().map_or(true, |(_, bd)| d < *bd) {
                best = Some((adv, d));
            }
        }
        results.push(match best {
            Some((adv, _)) => validated_result(model, x, label, adv, queries)?,
            None => AttackResult::failure(queries),
        });
    }
    Ok(results)
}
