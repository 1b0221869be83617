//! Training-noise channels, brightness jitter, and binarization.
//!
//! Randomness is drawn from per-image streams so batch augmentation is
//! order- and parallelism-independent.

use crate::error::{DimError, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

pub const BINARIZE_THRESHOLD: f32 = 0.5;

/// The two noise channels of the training pipeline: a uniform offset in
/// `[-linf_halfwidth, linf_halfwidth]` per pixel, plus a sparse channel that
/// adds 1 with probability `l0_flip_prob` and subtracts 1 with the same
/// probability.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub linf_halfwidth: f32,
    pub l0_flip_prob: f32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(linf_halfwidth: f32, l0_flip_prob: f32, seed: u64) -> Result<Self> {
        if !(0.0..=0.5).contains(&l0_flip_prob) {
            return Err(DimError::Invalid(format!(
                "l0_flip_prob {l0_flip_prob} outside [0, 0.5]"
            )));
        }
        if linf_halfwidth < 0.0 {
            return Err(DimError::Invalid(format!(
                "linf_halfwidth {linf_halfwidth} is negative"
            )));
        }
        Ok(NoiseSpec { linf_halfwidth, l0_flip_prob, seed })
    }

    /// Paper defaults: halfwidth 0.5, flip probability 1/12.
    pub fn defaults(seed: u64) -> Self {
        NoiseSpec { linf_halfwidth: 0.5, l0_flip_prob: 1.0 / 12.0, seed }
    }

    /// Same spec on a derived seed (used per epoch).
    pub fn reseeded(&self, seed: u64) -> Self {
        NoiseSpec { seed, ..*self }
    }
}

fn l0_offset(u: f32, p: f32) -> f32 {
    if u < p {
        1.0
    } else if u < 2.0 * p {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel i.i.d. uniform offset in `±halfwidth`, clamped back to `[0,1]`.
pub fn add_linf_noise(x: &Tensor, spec: &NoiseSpec) -> Tensor {
    let mut out = x.clone();
    let hw = spec.linf_halfwidth;
    for i in 0..x.batch() {
        let mut rng = rng::stream(spec.seed, "linf-noise", i as u64);
        for v in out.item_mut(i) {
            let off = if hw > 0.0 { rng.gen_range(-hw..=hw) } else { 0.0 };
            *v = (*v + off).clamp(0.0, 1.0);
        }
    }
    out
}

/// Sparse ±1 noise: each pixel independently gains 1 with probability `p` and
/// loses 1 with probability `p`, then clamps, so affected pixels saturate.
pub fn add_l0_noise(x: &Tensor, spec: &NoiseSpec) -> Tensor {
    let mut out = x.clone();
    let p = spec.l0_flip_prob;
    for i in 0..x.batch() {
        let mut rng = rng::stream(spec.seed, "l0-noise", i as u64);
        for v in out.item_mut(i) {
            let u: f32 = rng.gen();
            *v = (*v + l0_offset(u, p)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Both noise channels sampled jointly, clamped once at the end. This is the
/// corruption the denoiser and internal models train against.
pub fn apply_training_noise(x: &Tensor, spec: &NoiseSpec) -> Tensor {
    let mut out = x.clone();
    let hw = spec.linf_halfwidth;
    let p = spec.l0_flip_prob;
    for i in 0..x.batch() {
        let mut rng = rng::stream(spec.seed, "train-noise", i as u64);
        for v in out.item_mut(i) {
            let off = if hw > 0.0 { rng.gen_range(-hw..=hw) } else { 0.0 };
            let u: f32 = rng.gen();
            *v = (*v + off + l0_offset(u, p)).clamp(0.0, 1.0);
        }
    }
    out
}

/// One brightness factor per image, uniform in `[0,1]`, multiplied into all
/// its pixels. Returns the scaled batch and the factors used.
pub fn brightness_jitter(x: &Tensor, seed: u64) -> (Tensor, Vec<f32>) {
    let mut out = x.clone();
    let mut factors = Vec::with_capacity(x.batch());
    for i in 0..x.batch() {
        let mut rng = rng::stream(seed, "brightness", i as u64);
        let f: f32 = rng.gen_range(0.0..=1.0);
        factors.push(f);
        for v in out.item_mut(i) {
            *v *= f;
        }
    }
    (out, factors)
}

/// Hard threshold: pixel >= threshold maps to 1, else 0. Idempotent.
pub fn binarize(x: &Tensor, threshold: f32) -> Tensor {
    let mut out = x.clone();
    binarize_in_place(out.data_mut(), threshold);
    out
}

pub fn binarize_in_place(xs: &mut [f32], threshold: f32) {
    for v in xs {
        *v = if *v >= threshold { 1.0 } else { 0.0 };
    }
}
