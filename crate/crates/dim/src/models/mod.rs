//! The classifier zoo: denoiser + per-class internal models (with optional
//! input/denoised binarization), the single-head variant, and the
//! logit-based baselines.
//!
//! Inference scores a sample by relative intensity: the L1 norm of each
//! internal model's reconstruction divided by the L1 norm of its input, with
//! the prediction taken as the argmax over classes (ties break to the lowest
//! index). Baselines score by logits.

mod bundle;
mod train;

pub use bundle::{load_model, save_model};
pub use train::{
    clean_accuracy, precompute_denoised, train_baseline, train_denoiser, train_dim,
    train_internal_model, train_logit, train_madry, train_single_head, DimTraces, MadryConfig,
    TrainConfig,
};

use crate::data::{binarize_in_place, BINARIZE_THRESHOLD, NUM_CLASSES};
use crate::error::{DimError, Result};
use crate::nn::{LayerSpec, Network};
use crate::tensor::{l1_norm, Tensor};

/// Denoiser widths: encoder 784-560-280-140-70 (last linear), mirrored
/// decoder ending in tanh.
pub fn denoiser_arch() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Flatten,
        Dense { input: 784, output: 560 },
        Relu,
        Dense { input: 560, output: 280 },
        Relu,
        Dense { input: 280, output: 140 },
        Relu,
        Dense { input: 140, output: 70 },
        Dense { input: 70, output: 140 },
        Relu,
        Dense { input: 140, output: 280 },
        Relu,
        Dense { input: 280, output: 560 },
        Relu,
        Dense { input: 560, output: 784 },
        Tanh,
    ]
}

/// Internal-model widths: encoder 784-256-64-12-10 (last linear), mirrored
/// decoder ending in tanh.
pub fn internal_model_arch() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Flatten,
        Dense { input: 784, output: 256 },
        Relu,
        Dense { input: 256, output: 64 },
        Relu,
        Dense { input: 64, output: 12 },
        Relu,
        Dense { input: 12, output: 10 },
        Dense { input: 10, output: 12 },
        Relu,
        Dense { input: 12, output: 64 },
        Relu,
        Dense { input: 64, output: 256 },
        Relu,
        Dense { input: 256, output: 784 },
        Tanh,
    ]
}

/// Layer count of the internal-model encoder (bottleneck output is the
/// activation after this prefix).
pub const IM_ENCODER_LAYERS: usize = 8;
/// Bottleneck width of the internal models.
pub const LATENT_DIM: usize = 10;

/// Encoder of the single-head variant (same widths as the internal models).
pub fn im_encoder_arch() -> Vec<LayerSpec> {
    internal_model_arch()[..IM_ENCODER_LAYERS].to_vec()
}

/// One decoder head of the single-head variant.
pub fn im_decoder_arch() -> Vec<LayerSpec> {
    internal_model_arch()[IM_ENCODER_LAYERS..].to_vec()
}

/// Four conv layers with kernel sizes [5, 4, 3, 5]; channels 32-64-64-128,
/// strides [1, 2, 1, 2], dense head on the 3x3x128 tail.
pub fn cnn_arch() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2d { in_channels: 1, out_channels: 32, kernel: 5, stride: 1 },
        Relu,
        Conv2d { in_channels: 32, out_channels: 64, kernel: 4, stride: 2 },
        Relu,
        Conv2d { in_channels: 64, out_channels: 64, kernel: 3, stride: 1 },
        Relu,
        Conv2d { in_channels: 64, out_channels: 128, kernel: 5, stride: 2 },
        Relu,
        Flatten,
        Dense { input: 3 * 3 * 128, output: 10 },
    ]
}

/// Two conv layers, two pooling layers, two fully connected layers.
pub fn madry_arch() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2d { in_channels: 1, out_channels: 32, kernel: 5, stride: 1 },
        Relu,
        MaxPool2d { kernel: 2, stride: 2 },
        Conv2d { in_channels: 32, out_channels: 64, kernel: 5, stride: 1 },
        Relu,
        MaxPool2d { kernel: 2, stride: 2 },
        Flatten,
        Dense { input: 4 * 4 * 64, output: 1024 },
        Relu,
        Dense { input: 1024, output: 10 },
    ]
}

/// Trained denoiser.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub net: Network,
}

impl Denoiser {
    pub fn new(net: Network) -> Result<Self> {
        if net.specs() != denoiser_arch().as_slice() {
            return Err(DimError::Invalid("network does not match the denoiser architecture".into()));
        }
        Ok(Denoiser { net })
    }
}

/// The K per-class internal models; index i serves category i.
#[derive(Debug, Clone)]
pub struct InternalModelSet {
    pub models: Vec<Network>,
}

impl InternalModelSet {
    pub fn new(models: Vec<Network>) -> Result<Self> {
        if models.len() != NUM_CLASSES {
            return Err(DimError::Invalid(format!(
                "expected {NUM_CLASSES} internal models, got {}",
                models.len()
            )));
        }
        for (i, m) in models.iter().enumerate() {
            if m.specs() != internal_model_arch().as_slice() {
                return Err(DimError::Invalid(format!(
                    "internal model {i} does not match the internal-model architecture"
                )));
            }
        }
        Ok(InternalModelSet { models })
    }
}

/// Reconstruction bank: either K separate autoencoders, or one shared encoder
/// with K decoder heads.
#[derive(Debug, Clone)]
pub enum ImBank {
    Separate(Vec<Network>),
    SingleHead { encoder: Network, decoders: Vec<Network> },
}

impl ImBank {
    pub fn num_classes(&self) -> usize {
        match self {
            ImBank::Separate(ms) => ms.len(),
            ImBank::SingleHead { decoders, .. } => decoders.len(),
        }
    }
}

/// How a binarization stage behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
enum BinStage {
    Off,
    Hard,
    /// Differentiable stand-in `sigma(alpha (x - threshold))`.
    Soft(f32),
}

impl BinStage {
    fn apply(self, xs: &mut [f32]) {
        match self {
            BinStage::Off => {}
            BinStage::Hard => binarize_in_place(xs, BINARIZE_THRESHOLD),
            BinStage::Soft(alpha) => {
                for v in xs {
                    *v = 1.0 / (1.0 + (-alpha * (*v - BINARIZE_THRESHOLD)).exp());
                }
            }
        }
    }

    /// Chain rule through the stage: `grad *= dy/dx` evaluated from outputs.
    fn backprop(self, grad: &mut [f32], outputs: &[f32]) {
        match self {
            BinStage::Off => {}
            BinStage::Hard => grad.iter_mut().for_each(|g| *g = 0.0),
            BinStage::Soft(alpha) => {
                for (g, &y) in grad.iter_mut().zip(outputs) {
                    *g *= alpha * y * (1.0 - y);
                }
            }
        }
    }
}

/// Loss driving gradient attacks against intensity models. The softmax
/// cross-entropy over the score vector mirrors how attack toolkits consume
/// a model that exposes scores as logits; the margin loss is the sharper
/// adaptive surrogate (top rival intensity minus own-class intensity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DimAttackLoss {
    #[default]
    IntensityCe,
    Margin,
}

/// The denoised internal-model classifier and its ablations.
#[derive(Debug, Clone)]
pub struct DimClassifier {
    pub name: String,
    pub denoiser: Option<Network>,
    pub bank: ImBank,
    pub binarize_input: bool,
    pub binarize_denoised: bool,
    pub attack_loss: DimAttackLoss,
}

impl DimClassifier {
    pub fn dim(denoiser: Denoiser, ims: InternalModelSet) -> Self {
        DimClassifier {
            name: "dim".into(),
            denoiser: Some(denoiser.net),
            bank: ImBank::Separate(ims.models),
            binarize_input: false,
            binarize_denoised: false,
            attack_loss: DimAttackLoss::default(),
        }
    }

    /// Same weights as `dim`, with both binarization stages enabled.
    pub fn bidim(denoiser: Denoiser, ims: InternalModelSet) -> Self {
        DimClassifier {
            name: "bidim".into(),
            denoiser: Some(denoiser.net),
            bank: ImBank::Separate(ims.models),
            binarize_input: true,
            binarize_denoised: true,
            attack_loss: DimAttackLoss::default(),
        }
    }

    pub fn im_only(ims: InternalModelSet) -> Self {
        DimClassifier {
            name: "im_only".into(),
            denoiser: None,
            bank: ImBank::Separate(ims.models),
            binarize_input: false,
            binarize_denoised: false,
            attack_loss: DimAttackLoss::default(),
        }
    }

    pub fn single_im(encoder: Network, decoders: Vec<Network>) -> Self {
        DimClassifier {
            name: "single_im".into(),
            denoiser: None,
            bank: ImBank::SingleHead { encoder, decoders },
            binarize_input: false,
            binarize_denoised: false,
            attack_loss: DimAttackLoss::default(),
        }
    }

    pub fn dn_single_im(denoiser: Denoiser, encoder: Network, decoders: Vec<Network>) -> Self {
        DimClassifier {
            name: "dn_single_im".into(),
            denoiser: Some(denoiser.net),
            bank: ImBank::SingleHead { encoder, decoders },
            binarize_input: false,
            binarize_denoised: false,
            attack_loss: DimAttackLoss::default(),
        }
    }

    /// Switch the binarization flags (biDIM <-> DIM share weights).
    pub fn with_flags(mut self, name: &str, binarize_input: bool, binarize_denoised: bool) -> Self {
        self.name = name.into();
        self.binarize_input = binarize_input;
        self.binarize_denoised = binarize_denoised;
        self
    }

    fn stages(&self, alpha: Option<f32>) -> (BinStage, BinStage) {
        let soften = |on: bool| match (on, alpha) {
            (false, _) => BinStage::Off,
            (true, None) => BinStage::Hard,
            (true, Some(a)) => BinStage::Soft(a),
        };
        (soften(self.binarize_input), soften(self.binarize_denoised))
    }

    /// The tensor the reconstruction bank actually sees for `x` (denoised,
    /// clamped, binarization flags applied). Used for latent extraction.
    pub fn bank_input(&self, xs: &Tensor) -> Result<Tensor> {
        let fwd = self.forward_stages(xs, None)?;
        Ok(fwd.bank_in)
    }

    /// Relative intensity vector per sample (Eq. score): component i is
    /// `l1(F_i(input)) / l1(input)`, zero when the input is entirely black.
    pub fn relative_intensity(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>> {
        Ok(self.forward_stages(xs, None)?.scores)
    }

    fn forward_stages(&self, xs: &Tensor, alpha: Option<f32>) -> Result<StagedForward> {
        let (bin_in, bin_mid) = self.stages(alpha);
        let n = xs.batch();
        let width = xs.item_len();

        let mut pre = xs.clone().reshape(vec![n, width])?;
        bin_in.apply(pre.data_mut());

        let (den_cache, bank_in) = match &self.denoiser {
            Some(dn) => {
                let cache = dn.forward(&pre)?;
                let mut d = cache.output().clone();
                // tanh output clamped to the pixel range before scoring
                d.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                (Some(cache), d)
            }
            None => (None, pre.clone()),
        };
        let mut bank_in = bank_in;
        let den_out = den_cache.as_ref().map(|c| c.output().clone());
        bin_mid.apply(bank_in.data_mut());

        let denom: Vec<f64> = (0..n).map(|i| l1_norm(bank_in.item(i))).collect();

        let mut scores = vec![vec![0.0f32; self.bank.num_classes()]; n];
        let bank = StagedBank::forward(&self.bank, &bank_in)?;
        for k in 0..self.bank.num_classes() {
            let out = bank.head_output(k);
            for i in 0..n {
                if denom[i] > 0.0 {
                    scores[i][k] = (l1_norm(out.item(i)) / denom[i]) as f32;
                }
            }
        }
        Ok(StagedForward {
            scores,
            pre,
            den_cache,
            den_out,
            bank_in,
            denom,
            bank: Some(bank.take()),
            bin_in,
            bin_mid,
        })
    }

    /// Gradient of `sum_k w[n][k] * score_k(x_n)` w.r.t. the input, evaluated
    /// with the given proxy steepness for any enabled binarization stage.
    fn combo_grad(&self, xs: &Tensor, w: &[Vec<f32>], alpha: Option<f32>) -> Result<(Vec<Vec<f32>>, Tensor)> {
        let fwd = self.forward_stages(xs, alpha)?;
        let grad = self.staged_backward(&fwd, w, xs.shape())?;
        Ok((fwd.scores, grad))
    }

    /// Reverse pass from a cached [`StagedForward`].
    fn staged_backward(&self, fwd: &StagedForward, w: &[Vec<f32>], xs_shape: &[usize]) -> Result<Tensor> {
        let (bin_in, bin_mid) = (fwd.bin_in, fwd.bin_mid);
        if bin_in == BinStage::Hard || bin_mid == BinStage::Hard {
            return Err(DimError::NotDifferentiable);
        }
        let n = fwd.bank_in.batch();
        let k = self.bank.num_classes();
        if w.len() != n || w.iter().any(|row| row.len() != k) {
            return Err(DimError::shape("combo_grad weights", format!("{n}x{k}"), w.len()));
        }

        let bank_caches = fwd.bank.as_ref().expect("bank caches retained");
        let width = fwd.bank_in.item_len();
        // d(score_k)/d(head_out) = sign(head_out) / denom
        // d(score_k)/d(bank_in) also carries -score_k * sign(bank_in) / denom.
        let mut grad_bank_in = vec![0.0f32; n * width];
        match (&self.bank, bank_caches) {
            (ImBank::Separate(models), StagedCaches::Separate(caches)) => {
                for (kidx, (model, cache)) in models.iter().zip(caches).enumerate() {
                    let out = cache.output();
                    let mut og = vec![0.0f32; n * width];
                    let mut any = false;
                    for i in 0..n {
                        if fwd.denom[i] <= 0.0 {
                            continue;
                        }
                        let c = w[i][kidx] / fwd.denom[i] as f32;
                        if c == 0.0 {
                            continue;
                        }
                        any = true;
                        for (g, &o) in og[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(out.item(i))
                        {
                            *g = c * sign(o);
                        }
                    }
                    if !any {
                        continue;
                    }
                    let grads = model.backward(cache, &Tensor::new(vec![n, width], og)?)?;
                    for (acc, g) in grad_bank_in.iter_mut().zip(grads.input.data()) {
                        *acc += *g;
                    }
                }
            }
            (ImBank::SingleHead { encoder, decoders }, StagedCaches::SingleHead { enc, decs }) => {
                let latent = enc.output().item_len();
                let mut grad_z = vec![0.0f32; n * latent];
                for (kidx, (dec, cache)) in decoders.iter().zip(decs).enumerate() {
                    let out = cache.output();
                    let mut og = vec![0.0f32; n * width];
                    let mut any = false;
                    for i in 0..n {
                        if fwd.denom[i] <= 0.0 {
                            continue;
                        }
                        let c = w[i][kidx] / fwd.denom[i] as f32;
                        if c == 0.0 {
                            continue;
                        }
                        any = true;
                        for (g, &o) in og[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(out.item(i))
                        {
                            *g = c * sign(o);
                        }
                    }
                    if !any {
                        continue;
                    }
                    let grads = dec.backward(cache, &Tensor::new(vec![n, width], og)?)?;
                    for (acc, g) in grad_z.iter_mut().zip(grads.input.data()) {
                        *acc += *g;
                    }
                }
                let grads = encoder.backward(enc, &Tensor::new(vec![n, latent], grad_z)?)?;
                grad_bank_in.copy_from_slice(grads.input.data());
            }
            _ => unreachable!("bank and caches are built together"),
        }

        // Denominator coupling: score_k = u_k / v with v = l1(bank_in).
        for i in 0..n {
            if fwd.denom[i] <= 0.0 {
                continue;
            }
            let weighted: f32 = (0..k).map(|j| w[i][j] * fwd.scores[i][j]).sum();
            if weighted == 0.0 {
                continue;
            }
            let c = -weighted / fwd.denom[i] as f32;
            for (g, &m) in grad_bank_in[i * width..(i + 1) * width]
                .iter_mut()
                .zip(fwd.bank_in.item(i))
            {
                *g += c * sign(m);
            }
        }

        // Back through the mid binarization stage.
        bin_mid.backprop(&mut grad_bank_in, fwd.bank_in.data());

        // Back through clamp and denoiser when present.
        let mut grad_pre = match (&self.denoiser, &fwd.den_cache) {
            (Some(dn), Some(cache)) => {
                if let Some(den_out) = &fwd.den_out {
                    for (g, &raw) in grad_bank_in.iter_mut().zip(den_out.data()) {
                        if !(0.0..=1.0).contains(&raw) {
                            *g = 0.0;
                        }
                    }
                }
                let grads = dn.backward(cache, &Tensor::new(vec![n, width], grad_bank_in)?)?;
                grads.input.into_data()
            }
            _ => grad_bank_in,
        };

        bin_in.backprop(&mut grad_pre, fwd.pre.data());
        Tensor::new(xs_shape.to_vec(), grad_pre)
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct StagedForward {
    scores: Vec<Vec<f32>>,
    pre: Tensor,
    den_cache: Option<crate::nn::ForwardCache>,
    den_out: Option<Tensor>,
    bank_in: Tensor,
    denom: Vec<f64>,
    bank: Option<StagedCaches>,
    bin_in: BinStage,
    bin_mid: BinStage,
}

enum StagedCaches {
    Separate(Vec<crate::nn::ForwardCache>),
    SingleHead {
        enc: crate::nn::ForwardCache,
        decs: Vec<crate::nn::ForwardCache>,
    },
}

struct StagedBank {
    caches: StagedCaches,
}

impl StagedBank {
    fn forward(bank: &ImBank, input: &Tensor) -> Result<Self> {
        let caches = match bank {
            ImBank::Separate(models) => StagedCaches::Separate(
                models
                    .iter()
                    .map(|m| m.forward(input))
                    .collect::<Result<Vec<_>>>()?,
            ),
            ImBank::SingleHead { encoder, decoders } => {
                let enc = encoder.forward(input)?;
                let z = enc.output().clone();
                let decs = decoders
                    .iter()
                    .map(|d| d.forward(&z))
                    .collect::<Result<Vec<_>>>()?;
                StagedCaches::SingleHead { enc, decs }
            }
        };
        Ok(StagedBank { caches })
    }

    fn head_output(&self, k: usize) -> &Tensor {
        match &self.caches {
            StagedCaches::Separate(cs) => cs[k].output(),
            StagedCaches::SingleHead { decs, .. } => decs[k].output(),
        }
    }

    fn take(self) -> StagedCaches {
        self.caches
    }
}

/// A plain logit classifier (CNN, Madry), optionally behind a hard input
/// binarization (biCNN).
#[derive(Debug, Clone)]
pub struct LogitClassifier {
    pub name: String,
    pub net: Network,
    pub binarize_input: bool,
}

impl LogitClassifier {
    pub fn new(name: &str, net: Network, binarize_input: bool) -> Self {
        LogitClassifier { name: name.into(), net, binarize_input }
    }

    fn output_classes(&self) -> usize {
        self.net
            .specs()
            .iter()
            .rev()
            .find_map(|s| match s {
                LayerSpec::Dense { output, .. } => Some(*output),
                _ => None,
            })
            .unwrap_or(crate::data::NUM_CLASSES)
    }

    fn preprocess(&self, xs: &Tensor, alpha: Option<f32>) -> (Tensor, BinStage) {
        let stage = match (self.binarize_input, alpha) {
            (false, _) => BinStage::Off,
            (true, None) => BinStage::Hard,
            (true, Some(a)) => BinStage::Soft(a),
        };
        let mut pre = xs.clone();
        stage.apply(pre.data_mut());
        (pre, stage)
    }

    fn logits(&self, xs: &Tensor, alpha: Option<f32>) -> Result<Vec<Vec<f32>>> {
        let (pre, _) = self.preprocess(xs, alpha);
        let out = self.net.infer(&pre)?;
        Ok((0..out.batch()).map(|i| out.item(i).to_vec()).collect())
    }

    fn combo_grad(&self, xs: &Tensor, w: &[Vec<f32>], alpha: Option<f32>) -> Result<(Vec<Vec<f32>>, Tensor)> {
        let (pre, stage) = self.preprocess(xs, alpha);
        if stage == BinStage::Hard {
            return Err(DimError::NotDifferentiable);
        }
        let cache = self.net.forward(&pre)?;
        let out = cache.output();
        let (n, k) = (out.batch(), out.item_len());
        let mut og = vec![0.0f32; n * k];
        for i in 0..n {
            og[i * k..(i + 1) * k].copy_from_slice(&w[i]);
        }
        let scores = (0..n).map(|i| out.item(i).to_vec()).collect();
        let grads = self.net.backward(&cache, &Tensor::new(vec![n, k], og)?)?;
        let mut g = grads.input.into_data();
        stage.backprop(&mut g, pre.data());
        Ok((scores, Tensor::new(xs.shape().to_vec(), g)?))
    }

    /// Per-sample cross-entropy loss and its input gradient. The softmax
    /// residual is computed in f64 and renormalized per sample before the
    /// f32 backward pass: on very confident predictions the raw residual
    /// underflows f32 to exactly zero, which would blind gradient attacks.
    /// Every attack consumes the gradient through a norm or sign, so the
    /// per-sample positive rescale is direction-preserving.
    fn ce_loss_grad(&self, xs: &Tensor, ys: &[u8], alpha: Option<f32>) -> Result<(Vec<f32>, Tensor)> {
        let (pre, stage) = self.preprocess(xs, alpha);
        if stage == BinStage::Hard {
            return Err(DimError::NotDifferentiable);
        }
        let cache = self.net.forward(&pre)?;
        let out = cache.output();
        let (n, k) = (out.batch(), out.item_len());
        let mut losses = Vec::with_capacity(n);
        let mut og = vec![0.0f32; n * k];
        for i in 0..n {
            let row = out.item(i);
            let y = ys[i] as usize;
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let denom: f64 = row.iter().map(|&z| f64::from(z - max).exp()).sum();
            losses.push((denom.ln() - f64::from(row[y] - max)) as f32);
            let mut residual = vec![0.0f64; k];
            let mut peak = 0.0f64;
            for j in 0..k {
                let p = f64::from(row[j] - max).exp() / denom;
                residual[j] = p - if j == y { 1.0 } else { 0.0 };
                peak = peak.max(residual[j].abs());
            }
            if peak > 0.0 {
                for j in 0..k {
                    og[i * k + j] = (residual[j] / peak) as f32;
                }
            }
        }
        let grads = self.net.backward(&cache, &Tensor::new(vec![n, k], og)?)?;
        let mut g = grads.input.into_data();
        stage.backprop(&mut g, pre.data());
        Ok((losses, Tensor::new(xs.shape().to_vec(), g)?))
    }
}

/// What every attack and the evaluation harness see: per-class scores, the
/// derived decision, and (when available) input gradients.
pub trait TargetModel: Sync {
    fn name(&self) -> &str;
    fn num_classes(&self) -> usize;

    /// Per-class decision scores for a `[N, 1, 28, 28]` batch.
    fn scores(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>>;

    /// Argmax with ties broken to the lowest class index.
    fn predict(&self, xs: &Tensor) -> Result<Vec<usize>> {
        Ok(self.scores(xs)?.iter().map(|row| argmax(row)).collect())
    }

    /// False when a hard binarization blocks gradients.
    fn is_differentiable(&self) -> bool;

    /// True when inputs pass through a hard binarization (the finetune
    /// projection applies).
    fn has_binarization(&self) -> bool;

    /// Scores plus the gradient of `sum_k w[n][k] * score_k(x_n)`.
    fn score_combo_grad(&self, xs: &Tensor, w: &[Vec<f32>]) -> Result<(Vec<Vec<f32>>, Tensor)>;

    /// Per-sample attack loss (to maximize) and its gradient: cross-entropy
    /// for logit models, the score margin for intensity models.
    fn attack_loss_grad(&self, xs: &Tensor, ys: &[u8]) -> Result<(Vec<f32>, Tensor)>;

    /// Differentiable stand-in with every hard binarization replaced by
    /// `sigma(alpha (x - threshold))`; `None` when nothing is binarized.
    fn sigmoid_proxy(&self, alpha: f32) -> Result<Option<Box<dyn TargetModel + '_>>>;
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax over relative intensities, with a per-sample flag marking
/// degenerate all-zero score vectors (those predict class 0).
pub fn dim_predict(dim: &DimClassifier, xs: &Tensor) -> Result<(Vec<usize>, Vec<bool>)> {
    let scores = dim.relative_intensity(xs)?;
    let classes = scores.iter().map(|row| argmax(row)).collect();
    let degenerate = scores
        .iter()
        .map(|row| row.iter().all(|&v| v == 0.0))
        .collect();
    Ok((classes, degenerate))
}

/// Cross-entropy attack loss over the score vector (scores consumed as
/// logits): per-sample loss plus peak-normalized softmax-residual weights
/// for the combo gradient.
fn intensity_ce_weights(scores: &[Vec<f32>], ys: &[u8]) -> (Vec<f32>, Vec<Vec<f32>>) {
    let k = scores[0].len();
    let mut losses = Vec::with_capacity(scores.len());
    let mut w = vec![vec![0.0f32; k]; scores.len()];
    for (i, row) in scores.iter().enumerate() {
        let y = ys[i] as usize;
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let denom: f64 = row.iter().map(|&z| f64::from(z - max).exp()).sum();
        losses.push((denom.ln() - f64::from(row[y] - max)) as f32);
        let mut peak = 0.0f64;
        let mut residual = vec![0.0f64; k];
        for j in 0..k {
            let p = f64::from(row[j] - max).exp() / denom;
            residual[j] = p - if j == y { 1.0 } else { 0.0 };
            peak = peak.max(residual[j].abs());
        }
        if peak > 0.0 {
            for j in 0..k {
                w[i][j] = (residual[j] / peak) as f32;
            }
        }
    }
    (losses, w)
}

fn dim_attack_weights(
    loss: DimAttackLoss,
    scores: &[Vec<f32>],
    ys: &[u8],
) -> (Vec<f32>, Vec<Vec<f32>>) {
    match loss {
        DimAttackLoss::IntensityCe => intensity_ce_weights(scores, ys),
        DimAttackLoss::Margin => margin_weights(scores, ys),
    }
}

/// Margin attack loss for score models: `max_{k != y} s_k - s_y`, maximized
/// by gradient attacks. Returns per-sample weights for the combo gradient.
fn margin_weights(scores: &[Vec<f32>], ys: &[u8]) -> (Vec<f32>, Vec<Vec<f32>>) {
    let k = scores[0].len();
    let mut losses = Vec::with_capacity(scores.len());
    let mut w = vec![vec![0.0f32; k]; scores.len()];
    for (i, row) in scores.iter().enumerate() {
        let y = ys[i] as usize;
        let mut rival = usize::from(y == 0);
        for j in 0..k {
            if j != y && row[j] > row[rival] {
                rival = j;
            }
        }
        losses.push(row[rival] - row[y]);
        w[i][rival] += 1.0;
        w[i][y] -= 1.0;
    }
    (losses, w)
}

impl TargetModel for DimClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_classes(&self) -> usize {
        self.bank.num_classes()
    }

    fn scores(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>> {
        self.relative_intensity(xs)
    }

    fn is_differentiable(&self) -> bool {
        !(self.binarize_input || self.binarize_denoised)
    }

    fn has_binarization(&self) -> bool {
        self.binarize_input || self.binarize_denoised
    }

    fn score_combo_grad(&self, xs: &Tensor, w: &[Vec<f32>]) -> Result<(Vec<Vec<f32>>, Tensor)> {
        self.combo_grad(xs, w, None)
    }

    fn attack_loss_grad(&self, xs: &Tensor, ys: &[u8]) -> Result<(Vec<f32>, Tensor)> {
        let fwd = self.forward_stages(xs, None)?;
        let (losses, w) = dim_attack_weights(self.attack_loss, &fwd.scores, ys);
        let grad = self.staged_backward(&fwd, &w, xs.shape())?;
        Ok((losses, grad))
    }

    fn sigmoid_proxy(&self, alpha: f32) -> Result<Option<Box<dyn TargetModel + '_>>> {
        if alpha <= 0.0 {
            return Err(DimError::Invalid(format!("proxy alpha must be positive, got {alpha}")));
        }
        if !self.has_binarization() {
            return Ok(None);
        }
        Ok(Some(Box::new(DimProxy { inner: self, alpha })))
    }
}

/// Differentiable view of a binarized [`DimClassifier`].
pub struct DimProxy<'a> {
    inner: &'a DimClassifier,
    alpha: f32,
}

impl TargetModel for DimProxy<'_> {
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn scores(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>> {
        Ok(self.inner.forward_stages(xs, Some(self.alpha))?.scores)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn has_binarization(&self) -> bool {
        false
    }

    fn score_combo_grad(&self, xs: &Tensor, w: &[Vec<f32>]) -> Result<(Vec<Vec<f32>>, Tensor)> {
        self.inner.combo_grad(xs, w, Some(self.alpha))
    }

    fn attack_loss_grad(&self, xs: &Tensor, ys: &[u8]) -> Result<(Vec<f32>, Tensor)> {
        let fwd = self.inner.forward_stages(xs, Some(self.alpha))?;
        let (losses, w) = dim_attack_weights(self.inner.attack_loss, &fwd.scores, ys);
        let grad = self.inner.staged_backward(&fwd, &w, xs.shape())?;
        Ok((losses, grad))
    }

    fn sigmoid_proxy(&self, _alpha: f32) -> Result<Option<Box<dyn TargetModel + '_>>> {
        Ok(None)
    }
}

impl TargetModel for LogitClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_classes(&self) -> usize {
        self.output_classes()
    }

    fn scores(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>> {
        self.logits(xs, None)
    }

    fn is_differentiable(&self) -> bool {
        !self.binarize_input
    }

    fn has_binarization(&self) -> bool {
        self.binarize_input
    }

    fn score_combo_grad(&self, xs: &Tensor, w: &[Vec<f32>]) -> Result<(Vec<Vec<f32>>, Tensor)> {
        self.combo_grad(xs, w, None)
    }

    fn attack_loss_grad(&self, xs: &Tensor, ys: &[u8]) -> Result<(Vec<f32>, Tensor)> {
        self.ce_loss_grad(xs, ys, None)
    }

    fn sigmoid_proxy(&self, alpha: f32) -> Result<Option<Box<dyn TargetModel + '_>>> {
        if alpha <= 0.0 {
            return Err(DimError::Invalid(format!("proxy alpha must be positive, got {alpha}")));
        }
        if !self.binarize_input {
            return Ok(None);
        }
        Ok(Some(Box::new(LogitProxy { inner: self, alpha })))
    }
}

/// Differentiable view of a binarized [`LogitClassifier`].
pub struct LogitProxy<'a> {
    inner: &'a LogitClassifier,
    alpha: f32,
}

impl TargetModel for LogitProxy<'_> {
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn num_classes(&self) -> usize {
        self.inner.output_classes()
    }

    fn scores(&self, xs: &Tensor) -> Result<Vec<Vec<f32>>> {
        self.inner.logits(xs, Some(self.alpha))
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn has_binarization(&self) -> bool {
        false
    }

    fn score_combo_grad(&self, xs: &Tensor, w: &[Vec<f32>]) -> Result<(Vec<Vec<f32>>, Tensor)> {
        self.inner.combo_grad(xs, w, Some(self.alpha))
    }

    fn attack_loss_grad(&self, xs: &Tensor, ys: &[u8]) -> Result<(Vec<f32>, Tensor)> {
        self.inner.ce_loss_grad(xs, ys, Some(self.alpha))
    }

    fn sigmoid_proxy(&self, _alpha: f32) -> Result<Option<Box<dyn TargetModel + '_>>> {
        Ok(None)
    }
}

/// Replace every hard binarization in `model` with a sigmoid of steepness
/// `alpha`. Errors when the model has no binarization or `alpha <= 0`.
pub fn sigmoid_proxy<'a>(model: &'a dyn TargetModel, alpha: f32) -> Result<Box<dyn TargetModel + 'a>> {
    model
        .sigmoid_proxy(alpha)?
        .ok_or_else(|| DimError::Invalid(format!("{} has no binarization to soften", model.name())))
}

/// Any trained classifier, unified for persistence and evaluation.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Logit(LogitClassifier),
    Dim(DimClassifier),
}

impl AnyModel {
    pub fn as_target(&self) -> &dyn TargetModel {
        match self {
            AnyModel::Logit(m) => m,
            AnyModel::Dim(m) => m,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            AnyModel::Logit(m) => &m.name,
            AnyModel::Dim(m) => &m.name,
        }
    }
}

/// Kinds accepted by `train_baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Cnn,
    BiCnn,
    Madry,
    SingleIm,
    DnSingleIm,
    ImOnly,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "cnn" => BaselineKind::Cnn,
            "bicnn" => BaselineKind::BiCnn,
            "madry" => BaselineKind::Madry,
            "single_im" => BaselineKind::SingleIm,
            "dn_single_im" => BaselineKind::DnSingleIm,
            "im_only" => BaselineKind::ImOnly,
            other => return Err(DimError::Config(format!("unknown model kind '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Cnn => "cnn",
            BaselineKind::BiCnn => "bicnn",
            BaselineKind::Madry => "madry",
            BaselineKind::SingleIm => "single_im",
            BaselineKind::DnSingleIm => "dn_single_im",
            BaselineKind::ImOnly => "im_only",
        }
    }
}
