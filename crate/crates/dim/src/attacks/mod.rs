//! Attack suite: gradient attacks (fast gradient, iterative/PGD, DeepFool,
//! DDN, Carlini-Wagner), additive-noise and blending attacks, salt & pepper,
//! pointwise, and the decision boundary walk, plus the proxy-sweep procedure
//! for models with hard input binarization.
//!
//! Every attack re-validates its candidate against the model before marking
//! success, stores the adversarial image in `[0,1]`, and reports
//! perturbation sizes in all four norms (infinite on failure). Randomized
//! attacks draw from per-sample streams, so results are independent of
//! batching and scheduling.

mod archive;
mod blend;
mod boundary;
mod cw;
mod ddn;
mod deepfool;
mod gradient;
mod noise;
mod pointwise;

pub use archive::{read_archive, write_archive, ArchiveRecord, AttackArchive};
pub use blend::{blend_search_attack, gaussian_blur, BlendStrategy, BlendTarget};
pub use boundary::boundary_attack;
pub use cw::carlini_wagner_l2;
pub use ddn::ddn;
pub use deepfool::deepfool;
pub use gradient::{fgm, iterative_gradient};
pub use noise::{noise_attack, NoiseAttackKind};
pub use pointwise::pointwise;

use crate::data::{binarize_in_place, ImageBatch, BINARIZE_THRESHOLD, IMAGE_PIXELS};
use crate::error::{DimError, Result};
use crate::models::TargetModel;
use crate::tensor::Tensor;

/// Perturbation norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L0,
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Norm::L0 => "L0",
            Norm::L1 => "L1",
            Norm::L2 => "L2",
            Norm::Linf => "Linf",
        }
    }

    pub fn parse(s: &str) -> Result<Norm> {
        Ok(match s {
            "L0" | "l0" => Norm::L0,
            "L1" | "l1" => Norm::L1,
            "L2" | "l2" => Norm::L2,
            "Linf" | "linf" | "LINF" => Norm::Linf,
            other => return Err(DimError::Config(format!("unknown norm '{other}'"))),
        })
    }
}

/// Perturbation sizes of `adversarial - original` in all four norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub l0: f32,
    pub l1: f32,
    pub l2: f32,
    pub linf: f32,
}

impl Distances {
    pub fn between(adv: &[f32], orig: &[f32]) -> Distances {
        let mut l0 = 0u32;
        let mut l1 = 0.0f64;
        let mut l2 = 0.0f64;
        let mut linf = 0.0f32;
        for (&a, &o) in adv.iter().zip(orig) {
            let d = a - o;
            if d != 0.0 {
                l0 += 1;
            }
            l1 += f64::from(d).abs();
            l2 += f64::from(d) * f64::from(d);
            linf = linf.max(d.abs());
        }
        Distances {
            l0: l0 as f32,
            l1: l1 as f32,
            l2: l2.sqrt() as f32,
            linf,
        }
    }

    pub fn infinite() -> Distances {
        Distances {
            l0: f32::INFINITY,
            l1: f32::INFINITY,
            l2: f32::INFINITY,
            linf: f32::INFINITY,
        }
    }

    pub fn get(&self, norm: Norm) -> f32 {
        match norm {
            Norm::L0 => self.l0,
            Norm::L1 => self.l1,
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }
}

/// Attack budget and schedule.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub norm: Norm,
    /// `None` runs the attack unbounded (minimizing attacks).
    pub epsilon: Option<f32>,
    pub steps: usize,
    pub step_size: Option<f32>,
    pub random_start: bool,
    pub repeats: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(norm: Norm) -> AttackConfig {
        AttackConfig {
            norm,
            epsilon: None,
            steps: 50,
            step_size: None,
            random_start: false,
            repeats: 1,
            seed: 0,
        }
    }

    pub fn with_epsilon(mut self, eps: f32) -> Self {
        self.epsilon = Some(eps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if eps <= 0.0 {
                return Err(DimError::Config(format!("epsilon must be positive, got {eps}")));
            }
        }
        if self.steps < 1 {
            return Err(DimError::Config("steps must be >= 1".into()));
        }
        if self.repeats < 1 {
            return Err(DimError::Config("repeats must be >= 1".into()));
        }
        Ok(())
    }

    pub fn require_epsilon(&self) -> Result<f32> {
        self.epsilon
            .ok_or_else(|| DimError::Config("this attack needs an epsilon budget".into()))
    }

    /// Step size, defaulting to epsilon / 10 for bounded attacks.
    pub fn resolved_step(&self) -> Result<f32> {
        match self.step_size {
            Some(s) => Ok(s),
            None => Ok(self.require_epsilon()? / 10.0),
        }
    }
}

/// Outcome for one sample.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Option<Vec<f32>>,
    pub success: bool,
    pub distances: Distances,
    pub queries: u64,
}

impl AttackResult {
    pub fn failure(queries: u64) -> AttackResult {
        AttackResult {
            adversarial: None,
            success: false,
            distances: Distances::infinite(),
            queries,
        }
    }

    /// Distance in `norm`, with the failed-attack infinity convention.
    pub fn distance(&self, norm: Norm) -> f32 {
        if self.success {
            self.distances.get(norm)
        } else {
            f32::INFINITY
        }
    }
}

pub(crate) fn tensor_from_rows(rows: &[Vec<f32>]) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * IMAGE_PIXELS);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), 1, 28, 28], data).expect("image rows")
}

pub(crate) fn predict_rows(model: &dyn TargetModel, rows: &[Vec<f32>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        out.extend(model.predict(&tensor_from_rows(chunk))?);
    }
    Ok(out)
}

/// Validate a candidate against the model: success only if the stored image
/// actually misclassifies. Distances always recomputed from the stored image.
pub(crate) fn validated_result(
    model: &dyn TargetModel,
    original: &[f32],
    label: u8,
    candidate: Vec<f32>,
    queries: u64,
) -> Result<AttackResult> {
    debug_assert!(candidate.iter().all(|v| (0.0..=1.0).contains(v)));
    let pred = model.predict(&tensor_from_rows(std::slice::from_ref(&candidate)))?[0];
    if pred != label as usize {
        let distances = Distances::between(&candidate, original);
        Ok(AttackResult {
            adversarial: Some(candidate),
            success: true,
            distances,
            queries: queries + 1,
        })
    } else {
        Ok(AttackResult::failure(queries + 1))
    }
}

/// Pull a candidate back inside the epsilon ball measured in stored f32
/// values: rounding in `x + eps*dir` can land a few ulps outside, which the
/// strict `distance > eps` robustness convention would miscount as robust.
pub(crate) fn enforce_budget(adv: &mut [f32], orig: &[f32], norm: Norm, eps: f32) {
    match norm {
        Norm::Linf => {
            for (a, &o) in adv.iter_mut().zip(orig) {
                let mut guard = 0;
                while (*a - o).abs() > eps && guard < 8 {
                    *a = if *a > o {
                        f32::from_bits(a.to_bits() - 1)
                    } else {
                        f32::from_bits(a.to_bits() + 1)
                    };
                    guard += 1;
                }
            }
        }
        Norm::L2 => {
            let mut guard = 0;
            while Distances::between(adv, orig).l2 > eps && guard < 8 {
                let d = f64::from(Distances::between(adv, orig).l2);
                let scale = (f64::from(eps) / d * (1.0 - 1e-7)) as f32;
                for (a, &o) in adv.iter_mut().zip(orig) {
                    *a = o + (*a - o) * scale;
                }
                guard += 1;
            }
        }
        _ => {}
    }
}

/// Zero-perturbation success for clean-misclassified samples.
pub(crate) fn clean_miss_result(x: &[f32]) -> AttackResult {
    AttackResult {
        adversarial: Some(x.to_vec()),
        success: true,
        distances: Distances::between(x, x),
        queries: 1,
    }
}

/// The registry of implemented attacks. `BrendelBethgeAttack` rows are
/// import-only (external archives); they have no entry here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    FastGradient,
    Pgd,
    BasicIterative,
    DeepFool,
    Ddn,
    CarliniWagner,
    GaussianNoise { clipping_aware: bool, repeated: bool },
    UniformNoise { clipping_aware: bool, repeated: bool },
    SaltAndPepper,
    Inversion,
    ContrastReduction { strategy: BlendStrategy },
    GaussianBlur,
    BlendedUniformNoise,
    Pointwise,
    Boundary,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        use AttackKind::*;
        match self {
            FastGradient => "FastGradientAttack",
            Pgd => "PGD",
            BasicIterative => "BasicIterativeAttack",
            DeepFool => "DeepFoolAttack",
            Ddn => "DDNAttack",
            CarliniWagner => "CarliniWagnerAttack",
            GaussianNoise { clipping_aware: false, repeated: false } => "AdditiveGaussianNoiseAttack",
            GaussianNoise { clipping_aware: true, repeated: false } => "ClippingAwareGN",
            GaussianNoise { clipping_aware: false, repeated: true } => "RepeatedGN",
            GaussianNoise { clipping_aware: true, repeated: true } => "ClippingAwareRepeatedGN",
            UniformNoise { clipping_aware: false, repeated: false } => "AdditiveUniformNoiseAttack",
            UniformNoise { clipping_aware: true, repeated: false } => "ClippingAwareUN",
            UniformNoise { clipping_aware: false, repeated: true } => "RepeatedUN",
            UniformNoise { clipping_aware: true, repeated: true } => "ClippingAwareRepeatedUN",
            SaltAndPepper => "SaltAndPepperAttack",
            Inversion => "InversionAttack",
            ContrastReduction { strategy: BlendStrategy::Direct } => "ContrastReductionAttack",
            ContrastReduction { strategy: BlendStrategy::LinearSearch } => {
                "LinearSearchContrastReductionAttack"
            }
            ContrastReduction { strategy: BlendStrategy::BinarySearch } => {
                "BinarySearchContrastReductionAttack"
            }
            GaussianBlur => "GaussianBlurAttack",
            BlendedUniformNoise => "LinearSearchBlendedUniformNoiseAttack",
            Pointwise => "Pointwise",
            Boundary => "BoundaryAttack",
        }
    }

    pub fn parse(s: &str) -> Result<AttackKind> {
        use AttackKind::*;
        Ok(match s {
            "FastGradientAttack" | "FGM" | "FGSM" => FastGradient,
            "PGD" => Pgd,
            "BasicIterativeAttack" | "BIM" => BasicIterative,
            "DeepFoolAttack" => DeepFool,
            "DDNAttack" => Ddn,
            "CarliniWagnerAttack" => CarliniWagner,
            "AdditiveGaussianNoiseAttack" | "GN" => GaussianNoise { clipping_aware: false, repeated: false },
            "ClippingAwareGN" => GaussianNoise { clipping_aware: true, repeated: false },
            "RepeatedGN" => GaussianNoise { clipping_aware: false, repeated: true },
            "ClippingAwareRepeatedGN" => GaussianNoise { clipping_aware: true, repeated: true },
            "AdditiveUniformNoiseAttack" | "UN" => UniformNoise { clipping_aware: false, repeated: false },
            "ClippingAwareUN" => UniformNoise { clipping_aware: true, repeated: false },
            "RepeatedUN" => UniformNoise { clipping_aware: false, repeated: true },
            "ClippingAwareRepeatedUN" => UniformNoise { clipping_aware: true, repeated: true },
            "SaltAndPepperAttack" => SaltAndPepper,
            "InversionAttack" => Inversion,
            "ContrastReductionAttack" => ContrastReduction { strategy: BlendStrategy::Direct },
            "LinearSearchContrastReductionAttack" => {
                ContrastReduction { strategy: BlendStrategy::LinearSearch }
            }
            "BinarySearchContrastReductionAttack" => {
                ContrastReduction { strategy: BlendStrategy::BinarySearch }
            }
            "GaussianBlurAttack" => GaussianBlur,
            "LinearSearchBlendedUniformNoiseAttack" => BlendedUniformNoise,
            "Pointwise" => Pointwise,
            "BoundaryAttack" => Boundary,
            other => return Err(DimError::Config(format!("unknown attack '{other}'"))),
        })
    }

    /// Gradient attacks run through the sigmoid-proxy sweep on binarized
    /// models; decision attacks run on the hard model directly.
    pub fn is_gradient_based(&self) -> bool {
        matches!(
            self,
            AttackKind::FastGradient
                | AttackKind::Pgd
                | AttackKind::BasicIterative
                | AttackKind::DeepFool
                | AttackKind::Ddn
                | AttackKind::CarliniWagner
        )
    }

    /// The full registry, for report layouts and name resolution.
    pub fn all() -> Vec<AttackKind> {
        use AttackKind::*;
        let mut v = vec![FastGradient, Pgd, BasicIterative, DeepFool, Ddn, CarliniWagner];
        for ca in [false, true] {
            for rep in [false, true] {
                v.push(GaussianNoise { clipping_aware: ca, repeated: rep });
                v.push(UniformNoise { clipping_aware: ca, repeated: rep });
            }
        }
        v.extend([
            SaltAndPepper,
            Inversion,
            ContrastReduction { strategy: BlendStrategy::Direct },
            ContrastReduction { strategy: BlendStrategy::LinearSearch },
            ContrastReduction { strategy: BlendStrategy::BinarySearch },
            GaussianBlur,
            BlendedUniformNoise,
            Pointwise,
            Boundary,
        ]);
        v
    }

    /// Run this attack directly (the model must satisfy the attack's
    /// preconditions; binarized models want [`run_attack`] instead).
    pub fn run_raw(
        &self,
        model: &dyn TargetModel,
        batch: &ImageBatch,
        cfg: &AttackConfig,
    ) -> Result<Vec<AttackResult>> {
        cfg.validate()?;
        use AttackKind::*;
        match self {
            FastGradient => fgm(model, batch, cfg),
            Pgd => {
                let mut c = cfg.clone();
                c.random_start = true;
                iterative_gradient(model, batch, &c)
            }
            BasicIterative => {
                let mut c = cfg.clone();
                c.random_start = false;
                iterative_gradient(model, batch, &c)
            }
            DeepFool => deepfool(model, batch, cfg),
            Ddn => ddn(model, batch, cfg),
            CarliniWagner => carlini_wagner_l2(model, batch, cfg),
            GaussianNoise { clipping_aware, repeated } => noise_attack(
                model,
                batch,
                NoiseAttackKind::Gaussian { clipping_aware: *clipping_aware, repeated: *repeated },
                cfg,
            ),
            UniformNoise { clipping_aware, repeated } => noise_attack(
                model,
                batch,
                NoiseAttackKind::Uniform { clipping_aware: *clipping_aware, repeated: *repeated },
                cfg,
            ),
            SaltAndPepper => noise_attack(model, batch, NoiseAttackKind::SaltAndPepper, cfg),
            Inversion => blend_search_attack(model, batch, BlendTarget::Inverted, BlendStrategy::Direct, cfg),
            ContrastReduction { strategy } => {
                blend_search_attack(model, batch, BlendTarget::Gray, *strategy, cfg)
            }
            GaussianBlur => {
                blend_search_attack(model, batch, BlendTarget::Blur, BlendStrategy::LinearSearch, cfg)
            }
            BlendedUniformNoise => blend_search_attack(
                model,
                batch,
                BlendTarget::UniformNoise,
                BlendStrategy::LinearSearch,
                cfg,
            ),
            Pointwise => pointwise(model, batch, cfg),
            Boundary => boundary_attack(model, batch, cfg),
        }
    }
}

/// Move every changed pixel of `adv` as close to its original value as the
/// hard binarization allows: restore the original outright when both sides
/// binarize alike, otherwise park bright pixels at the threshold and keep
/// dark ones. The binarized image is preserved bit for bit and no norm grows.
pub fn finetune_binarized(original: &[f32], adv: &[f32]) -> Vec<f32> {
    let mut out = adv.to_vec();
    for i in 0..out.len() {
        let (o, a) = (original[i], adv[i]);
        if o == a {
            continue;
        }
        let bin_a = a >= BINARIZE_THRESHOLD;
        if (o >= BINARIZE_THRESHOLD) == bin_a {
            out[i] = o;
        } else if bin_a && (BINARIZE_THRESHOLD - o).abs() < (a - o).abs() {
            out[i] = BINARIZE_THRESHOLD;
        }
        // A pixel that must stay below the threshold keeps its value: 0 is
        // never closer to the original than the candidate itself.
    }
    out
}

/// Attack a model whose input path contains hard binarization: gradient
/// attacks run against sigmoid proxies for alpha in {10, 15, 20, 50, 100},
/// candidates are finetuned and validated against the hard model, and the
/// best success (smallest distance in `cfg.norm`) wins. Decision attacks run
/// on the hard model directly and only get the finetune pass.
pub fn attack_binarized_model(
    model: &dyn TargetModel,
    batch: &ImageBatch,
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    const ALPHAS: [f32; 5] = [10.0, 15.0, 20.0, 50.0, 100.0];
    if !model.has_binarization() {
        return Err(DimError::Invalid(format!(
            "{} has no binarization; run the attack directly",
            model.name()
        )));
    }
    let n = batch.len();
    let polish = |raw: Vec<AttackResult>| -> Result<Vec<AttackResult>> {
        let mut out = Vec::with_capacity(raw.len());
        for (i, r) in raw.into_iter().enumerate() {
            if !r.success {
                out.push(r);
                continue;
            }
            let adv = r.adversarial.as_ref().expect("success carries an image");
            let tuned = finetune_binarized(batch.image(i), adv);
            let mut vr = validated_result(model, batch.image(i), batch.labels[i], tuned, r.queries)?;
            if !vr.success {
                // The finetune preserves the binarized image, so the hard
                // model's decision cannot change; candidates from proxy runs
                // may still fail hard validation.
                vr = AttackResult::failure(vr.queries);
            }
            out.push(vr);
        }
        Ok(out)
    };

    if kind.is_gradient_based() {
        let mut best: Vec<AttackResult> = (0..n).map(|_| AttackResult::failure(0)).collect();
        for alpha in ALPHAS {
            let proxy = model
                .sigmoid_proxy(alpha)?
                .ok_or_else(|| DimError::Invalid("binarized model produced no proxy".into()))?;
            let raw = kind.run_raw(proxy.as_ref(), batch, cfg)?;
            let polished = polish(raw)?;
            for (b, c) in best.iter_mut().zip(polished) {
                b.queries += c.queries;
                let better = c.success
                    && (!b.success || c.distances.get(cfg.norm) < b.distances.get(cfg.norm));
                if better {
                    let queries = b.queries;
                    *b = c;
                    b.queries = queries;
                }
            }
        }
        Ok(best)
    } else {
        polish(kind.run_raw(model, batch, cfg)?)
    }
}

/// Front door: dispatches to the proxy-sweep wrapper for binarized models
/// and runs the attack directly otherwise.
pub fn run_attack(
    model: &dyn TargetModel,
    batch: &ImageBatch,
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    if model.has_binarization() {
        attack_binarized_model(model, batch, kind, cfg)
    } else {
        kind.run_raw(model, batch, cfg)
    }
}

/// Apply the hard binarization used across the workbench.
pub fn binarized_copy(xs: &[f32]) -> Vec<f32> {
    let mut out = xs.to_vec();
    binarize_in_place(&mut out, BINARIZE_THRESHOLD);
    out
}

#[cfg(test)]
mod tests;
