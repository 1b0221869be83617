//! Blending attacks: move each image toward a target (its inversion, a gray
//! image, a blurred copy, or an adversarial uniform-noise image) and find the
//! smallest blend factor that flips the decision. Strategies: take the full
//! target directly, scan a linear grid, or bisect.

use super::{clean_miss_result, predict_rows, tensor_from_rows, validated_result, AttackConfig, AttackResult};
use crate::data::ImageBatch;
use crate::error::Result;
use crate::models::{argmax, TargetModel};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendTarget {
    /// `1 - x`.
    Inverted,
    /// Mid-gray image (contrast reduction).
    Gray,
    /// Gaussian blur of increasing width (the blend factor scales sigma).
    Blur,
    /// A uniform-noise image that already misclassifies.
    UniformNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendStrategy {
    Direct,
    LinearSearch,
    BinarySearch,
}

/// Binary-search resolution in the blend factor.
const LAMBDA_RESOLUTION: f32 = 1e-3;
/// Sigma at blend factor 1 (pixels); enough to wash out a 28x28 digit.
const MAX_SIGMA: f32 = 12.0;
/// Draws allowed when hunting for an adversarial noise image.
const NOISE_DIRECTIONS: usize = 1000;

/// Separable Gaussian blur with reflective clamping at the borders.
pub fn gaussian_blur(x: &[f32], side: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * f64::from(sigma) * f64::from(sigma);
    for o in -radius..=radius {
        kernel.push((-(o as f64) * (o as f64) / denom).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / ksum).collect();
    let clamp = |v: isize| -> usize { v.clamp(0, side as isize - 1) as usize };
    let mut tmp = vec![0.0f64; x.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (ki, o) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * f64::from(x[r * side + clamp(c as isize + o)]);
            }
            tmp[r * side + c] = acc;
        }
    }
    let mut out = vec![0.0f32; x.len()];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (ki, o) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * tmp[clamp(r as isize + o) * side + c];
            }
            out[r * side + c] = (acc as f32).clamp(0.0, 1.0);
        }
    }
    out
}

fn candidate_at(target: BlendTarget, x: &[f32], lambda: f32, noise_image: Option<&[f32]>) -> Vec<f32> {
    match target {
        BlendTarget::Inverted => x
            .iter()
            .map(|&v| ((1.0 - lambda) * v + lambda * (1.0 - v)).clamp(0.0, 1.0))
            .collect(),
        BlendTarget::Gray => x
            .iter()
            .map(|&v| ((1.0 - lambda) * v + lambda * 0.5).clamp(0.0, 1.0))
            .collect(),
        BlendTarget::Blur => gaussian_blur(x, 28, lambda * MAX_SIGMA),
        BlendTarget::UniformNoise => {
            let u = noise_image.expect("noise target prepared");
            x.iter()
                .zip(u)
                .map(|(&v, &t)| ((1.0 - lambda) * v + lambda * t).clamp(0.0, 1.0))
                .collect()
        }
    }
}

pub fn blend_search_attack(
    model: &dyn TargetModel,
    batch: &ImageBatch,
    target: BlendTarget,
    strategy: BlendStrategy,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
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
    let mut queries = vec![1u64; n];

    // The uniform-noise target needs an adversarial noise image per sample.
    let mut noise_images: Vec<Option<Vec<f32>>> = vec![None; active.len()];
    if target == BlendTarget::UniformNoise {
        let mut undecided: Vec<usize> = (0..active.len()).collect();
        for draw in 0..NOISE_DIRECTIONS {
            if undecided.is_empty() {
                break;
            }
            let cands: Vec<Vec<f32>> = undecided
                .iter()
                .map(|&slot| {
                    let i = active[slot];
                    let mut rng = rng::stream(cfg.seed, "blend-noise", (i as u64) * 10_000 + draw as u64);
                    (0..rows[i].len()).map(|_| rng.gen_range(0.0..=1.0)).collect()
                })
                .collect();
            let mut still = Vec::new();
            for (chunk_idx, chunk) in undecided.chunks(256).enumerate() {
                let base = chunk_idx * 256;
                let xs: Vec<Vec<f32>> = (0..chunk.len()).map(|p| cands[base + p].clone()).collect();
                let scores = model.scores(&tensor_from_rows(&xs))?;
                for (pos, &slot) in chunk.iter().enumerate() {
                    let i = active[slot];
                    queries[i] += 1;
                    if argmax(&scores[pos]) != batch.labels[i] as usize {
                        noise_images[slot] = Some(xs[pos].clone());
                    } else {
                        still.push(slot);
                    }
                }
            }
            undecided = still;
        }
    }

    match strategy {
        BlendStrategy::Direct => {
            for (slot, &i) in active.iter().enumerate() {
                let cand = candidate_at(target, &rows[i], 1.0, noise_images[slot].as_deref());
                results[i] = Some(validated_result(model, &rows[i], batch.labels[i], cand, queries[i])?);
            }
        }
        BlendStrategy::LinearSearch => {
            let steps = cfg.steps.max(1);
            let mut open: Vec<usize> = (0..active.len()).collect();
            for level in 1..=steps {
                if open.is_empty() {
                    break;
                }
                let lambda = level as f32 / steps as f32;
                let mut still = Vec::new();
                for (chunk_idx, chunk) in open.chunks(256).enumerate() {
                    let base = chunk_idx * 256;
                    let _ = base;
                    let xs: Vec<Vec<f32>> = chunk
                        .iter()
                        .map(|&slot| candidate_at(target, &rows[active[slot]], lambda, noise_images[slot].as_deref()))
                        .collect();
                    let scores = model.scores(&tensor_from_rows(&xs))?;
                    for (pos, &slot) in chunk.iter().enumerate() {
                        let i = active[slot];
                        queries[i] += 1;
                        if argmax(&scores[pos]) != batch.labels[i] as usize {
                            results[i] = Some(validated_result(
                                model,
                                &rows[i],
                                batch.labels[i],
                                xs[pos].clone(),
                                queries[i],
                            )?);
                        } else {
                            still.push(slot);
                        }
                    }
                }
                open = still;
            }
            for slot in open {
                let i = active[slot];
                results[i] = Some(AttackResult::failure(queries[i]));
            }
        }
        BlendStrategy::BinarySearch => {
            for (slot, &i) in active.iter().enumerate() {
                // Feasibility at full blend, then bisect down to resolution.
                let full = candidate_at(target, &rows[i], 1.0, noise_images[slot].as_deref());
                queries[i] += 1;
                let pred = model.predict(&tensor_from_rows(std::slice::from_ref(&full)))?[0];
                if pred == batch.labels[i] as usize {
                    results[i] = Some(AttackResult::failure(queries[i]));
                    continue;
                }
                let mut lo = 0.0f32;
                let mut hi = 1.0f32;
                let mut best = full;
                while hi - lo > LAMBDA_RESOLUTION {
                    let mid = 0.5 * (lo + hi);
                    let cand = candidate_at(target, &rows[i], mid, noise_images[slot].as_deref());
                    queries[i] += 1;
                    let pred = model.predict(&tensor_from_rows(std::slice::from_ref(&cand)))?[0];
                    if pred != batch.labels[i] as usize {
                        hi = mid;
                        best = cand;
                    } else {
                        lo = mid;
                    }
                }
                results[i] = Some(validated_result(model, &rows[i], batch.labels[i], best, queries[i])?);
            }
        }
    }
    Ok(results.into_iter().map(|r| r.expect("all samples resolved")).collect())
}
