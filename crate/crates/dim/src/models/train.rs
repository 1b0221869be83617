//! Training loops: denoiser reconstruction, per-class internal models with
//! brightness jitter, the single-head variant, cross-entropy baselines, and
//! adversarial training.
//!
//! All loops are deterministic: shuffles, noise, jitter, and weight init are
//! derived from the run seed, and per-image noise streams key on the dataset
//! index so parallel and serial augmentation agree.

use super::{
    cnn_arch, denoiser_arch, im_decoder_arch, im_encoder_arch, internal_model_arch, madry_arch,
    AnyModel, BaselineKind, Denoiser, DimClassifier, InternalModelSet, LogitClassifier,
    TargetModel,
};
use crate::data::{binarize, ImageBatch, NoiseSpec, IMAGE_PIXELS, NUM_CLASSES};
use crate::error::{DimError, Result};
use crate::nn::{adam_step, AdamState, Network};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

/// Shared optimizer/batching knobs. Defaults: batch 128, Adam lr 1e-3.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig { epochs, batch_size: 128, lr: 1e-3, seed }
    }
}

/// Inner attack used by adversarial training. Canonical MNIST recipe:
/// 40 steps of L-inf PGD, step 0.01, eps 0.3, random start.
#[derive(Debug, Clone)]
pub struct MadryConfig {
    pub eps: f32,
    pub step_size: f32,
    pub steps: usize,
    pub random_start: bool,
}

impl Default for MadryConfig {
    fn default() -> Self {
        MadryConfig { eps: 0.3, step_size: 0.01, steps: 40, random_start: true }
    }
}

fn epoch_order(n: usize, seed: u64, tag: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, tag, epoch as u64));
    order
}

/// Gather `indices` rows of a flat `[N, 784]` tensor into a `[B, 784]` batch.
fn gather_flat(flat: &Tensor, indices: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
    for &i in indices {
        data.extend_from_slice(flat.item(i));
    }
    Tensor::new(vec![indices.len(), IMAGE_PIXELS], data).expect("gather_flat shape")
}

/// Gather image rows keeping the `[B, 1, 28, 28]` layout.
fn gather_images(images: &Tensor, indices: &[usize]) -> Tensor {
    let item = images.item_len();
    let mut data = Vec::with_capacity(indices.len() * item);
    for &i in indices {
        data.extend_from_slice(images.item(i));
    }
    Tensor::new(vec![indices.len(), 1, 28, 28], data).expect("gather_images shape")
}

/// Joint L-inf + sparse noise keyed on dataset indices.
fn noise_batch(clean: &Tensor, spec: &NoiseSpec, indices: &[usize]) -> Tensor {
    let mut out = clean.clone();
    let hw = spec.linf_halfwidth;
    let p = spec.l0_flip_prob;
    for (row, &idx) in indices.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, "train-noise", idx as u64);
        for v in out.item_mut(row) {
            let off = if hw > 0.0 { rng.gen_range(-hw..=hw) } else { 0.0 };
            let u: f32 = rng.gen();
            let spike = if u < p {
                1.0
            } else if u < 2.0 * p {
                -1.0
            } else {
                0.0
            };
            *v = (*v + off + spike).clamp(0.0, 1.0);
        }
    }
    out
}

struct Trainer {
    net: Network,
    adam: AdamState,
}

impl Trainer {
    fn new(net: Network, lr: f32) -> Self {
        let adam = AdamState::new(net.param_count(), lr);
        Trainer { net, adam }
    }

    fn step(&mut self, grads_flat: &[f32]) -> Result<()> {
        let mut flat = self.net.flat_params();
        adam_step(&mut self.adam, &mut flat, grads_flat)?;
        self.net.set_flat_params(&flat)
    }
}

/// Train the denoiser: reconstruct clean pixels from jointly noised inputs
/// under MSE. Returns the model and the per-epoch loss trace.
pub fn train_denoiser(
    data: &ImageBatch,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
) -> Result<(Denoiser, Vec<f32>)> {
    let n = data.len();
    let flat = data.images.clone().reshape(vec![n, IMAGE_PIXELS])?;
    let mut tr = Trainer::new(
        Network::with_init(denoiser_arch(), rng::derive(cfg.seed, "denoiser-init"))?,
        cfg.lr,
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, "denoiser-shuffle", epoch);
        let epoch_spec = noise.reseeded(rng::derive(cfg.seed, &format!("denoiser-noise-{epoch}")));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = gather_flat(&flat, chunk);
            let noisy = noise_batch(&clean, &epoch_spec, chunk);
            let cache = tr.net.forward(&noisy)?;
            let (loss, lgrad) = crate::nn::mse_loss(cache.output(), &clean)?;
            if !loss.is_finite() {
                return Err(DimError::Divergence { epoch });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            seen += chunk.len();
            let grads = tr.net.backward(&cache, &lgrad)?;
            tr.step(&grads.flat())?;
        }
        trace.push((loss_sum / seen as f64) as f32);
    }
    Ok((Denoiser::new(tr.net)?, trace))
}

/// Run the trained denoiser over a dataset once, clamping outputs to the
/// pixel range. The result feeds internal-model training.
pub fn precompute_denoised(denoiser: &Network, images: &Tensor) -> Result<Tensor> {
    let n = images.batch();
    let mut out = Vec::with_capacity(n * IMAGE_PIXELS);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(512) {
        let x = gather_images(images, chunk).reshape(vec![chunk.len(), IMAGE_PIXELS])?;
        let y = denoiser.infer(&x)?;
        out.extend(y.data().iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::new(vec![n, IMAGE_PIXELS], out)
}

/// Train internal model `class` to reconstruct own-class inputs and emit
/// black images otherwise. `inputs` is `[N, 784]` (denoised for the full
/// model, raw pixels for the no-denoiser ablation). Noise is applied to the
/// input, brightness jitter scales input and target together.
pub fn train_internal_model(
    class: usize,
    inputs: &Tensor,
    labels: &[u8],
    noise: &NoiseSpec,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<f32>)> {
    if class >= NUM_CLASSES {
        return Err(DimError::Invalid(format!("class {class} out of range")));
    }
    let n = inputs.batch();
    let mut tr = Trainer::new(
        Network::with_init(internal_model_arch(), rng::derive(cfg.seed, "im-init"))?,
        cfg.lr,
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, "im-shuffle", epoch);
        let epoch_spec = noise.reseeded(rng::derive(cfg.seed, &format!("im-noise-{epoch}")));
        let jitter_seed = rng::derive(cfg.seed, &format!("im-jitter-{epoch}"));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = gather_flat(inputs, chunk);
            let mut input = noise_batch(&clean, &epoch_spec, chunk);
            let mut target = Tensor::zeros(vec![chunk.len(), IMAGE_PIXELS]);
            for (row, &idx) in chunk.iter().enumerate() {
                let gamma: f32 = rng::stream(jitter_seed, "brightness", idx as u64).gen_range(0.0..=1.0);
                for v in input.item_mut(row) {
                    *v *= gamma;
                }
                if labels[idx] as usize == class {
                    for (t, &c) in target.item_mut(row).iter_mut().zip(clean.item(row)) {
                        *t = gamma * c;
                    }
                }
            }
            let cache = tr.net.forward(&input)?;
            let (loss, lgrad) = crate::nn::mse_loss(cache.output(), &target)?;
            if !loss.is_finite() {
                return Err(DimError::Divergence { epoch });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            seen += chunk.len();
            let grads = tr.net.backward(&cache, &lgrad)?;
            tr.step(&grads.flat())?;
        }
        trace.push((loss_sum / seen as f64) as f32);
    }
    Ok((tr.net, trace))
}

/// Per-epoch traces from a full DIM training run.
#[derive(Debug, Clone)]
pub struct DimTraces {
    pub denoiser: Vec<f32>,
    pub internal: Vec<Vec<f32>>,
}

/// Train the denoiser, freeze it, then train the K internal models on its
/// outputs (in parallel; every stream is keyed by class so scheduling does
/// not affect the result).
pub fn train_dim(
    data: &ImageBatch,
    noise: &NoiseSpec,
    denoiser_cfg: &TrainConfig,
    im_cfg: &TrainConfig,
) -> Result<(DimClassifier, DimTraces)> {
    let (denoiser, den_trace) = train_denoiser(data, noise, denoiser_cfg)?;
    let denoised = precompute_denoised(&denoiser.net, &data.images)?;
    let results: Vec<Result<(Network, Vec<f32>)>> = (0..NUM_CLASSES)
        .into_par_iter()
        .map(|class| {
            let cfg = TrainConfig {
                seed: rng::derive(im_cfg.seed, &format!("im-{class}")),
                ..im_cfg.clone()
            };
            train_internal_model(class, &denoised, &data.labels, noise, &cfg)
        })
        .collect();
    let mut models = Vec::with_capacity(NUM_CLASSES);
    let mut traces = Vec::with_capacity(NUM_CLASSES);
    for r in results {
        let (net, trace) = r?;
        models.push(net);
        traces.push(trace);
    }
    Ok((
        DimClassifier::dim(denoiser, InternalModelSet::new(models)?),
        DimTraces { denoiser: den_trace, internal: traces },
    ))
}

/// Train the shared-encoder variant: one encoder feeding K decoder heads,
/// each head regressing toward its own-class target.
pub fn train_single_head(
    inputs: &Tensor,
    labels: &[u8],
    noise: &NoiseSpec,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<Network>, Vec<f32>)> {
    let n = inputs.batch();
    let mut enc = Trainer::new(
        Network::with_init(im_encoder_arch(), rng::derive(cfg.seed, "enc-init"))?,
        cfg.lr,
    );
    let mut decs: Vec<Trainer> = (0..NUM_CLASSES)
        .map(|k| {
            Network::with_init(im_decoder_arch(), rng::derive(cfg.seed, &format!("dec-init-{k}")))
                .map(|net| Trainer::new(net, cfg.lr))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, "single-shuffle", epoch);
        let epoch_spec = noise.reseeded(rng::derive(cfg.seed, &format!("single-noise-{epoch}")));
        let jitter_seed = rng::derive(cfg.seed, &format!("single-jitter-{epoch}"));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = gather_flat(inputs, chunk);
            let mut input = noise_batch(&clean, &epoch_spec, chunk);
            let mut gammas = Vec::with_capacity(chunk.len());
            for (row, &idx) in chunk.iter().enumerate() {
                let gamma: f32 = rng::stream(jitter_seed, "brightness", idx as u64).gen_range(0.0..=1.0);
                gammas.push(gamma);
                for v in input.item_mut(row) {
                    *v *= gamma;
                }
            }
            let enc_cache = enc.net.forward(&input)?;
            let z = enc_cache.output().clone();
            let mut grad_z = vec![0.0f32; z.len()];
            let mut batch_loss = 0.0f64;
            for (k, dec) in decs.iter_mut().enumerate() {
                let mut target = Tensor::zeros(vec![chunk.len(), IMAGE_PIXELS]);
                for (row, &idx) in chunk.iter().enumerate() {
                    if labels[idx] as usize == k {
                        for (t, &c) in target.item_mut(row).iter_mut().zip(clean.item(row)) {
                            *t = gammas[row] * c;
                        }
                    }
                }
                let cache = dec.net.forward(&z)?;
                let (loss, lgrad) = crate::nn::mse_loss(cache.output(), &target)?;
                if !loss.is_finite() {
                    return Err(DimError::Divergence { epoch });
                }
                batch_loss += f64::from(loss);
                let grads = dec.net.backward(&cache, &lgrad)?;
                for (acc, g) in grad_z.iter_mut().zip(grads.input.data()) {
                    *acc += *g;
                }
                dec.step(&grads.flat())?;
            }
            let enc_grads = enc
                .net
                .backward(&enc_cache, &Tensor::new(z.shape().to_vec(), grad_z)?)?;
            enc.step(&enc_grads.flat())?;
            loss_sum += batch_loss / NUM_CLASSES as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        trace.push((loss_sum / seen as f64) as f32);
    }
    Ok((enc.net, decs.into_iter().map(|d| d.net).collect(), trace))
}

/// Cross-entropy gradient at the input of a raw network (used by the inner
/// adversarial-training loop, where the weights are still changing). The
/// softmax residual is renormalized per sample in f64 so confident
/// predictions cannot underflow the f32 sign step to zero.
fn ce_input_grad(net: &Network, xs: &Tensor, ys: &[u8]) -> Result<Tensor> {
    let cache = net.forward(xs)?;
    let out = cache.output();
    let (n, k) = (out.batch(), out.item_len());
    let mut og = vec![0.0f32; n * k];
    for i in 0..n {
        let row = out.item(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let denom: f64 = row.iter().map(|&z| f64::from(z - max).exp()).sum();
        let mut residual = vec![0.0f64; k];
        let mut peak = 0.0f64;
        for j in 0..k {
            let p = f64::from(row[j] - max).exp() / denom;
            residual[j] = p - if j == ys[i] as usize { 1.0 } else { 0.0 };
            peak = peak.max(residual[j].abs());
        }
        if peak > 0.0 {
            for j in 0..k {
                og[i * k + j] = (residual[j] / peak) as f32;
            }
        }
    }
    Ok(net.backward(&cache, &Tensor::new(vec![n, k], og)?)?.input)
}

/// Plain cross-entropy training of a logit network.
pub fn train_logit(
    name: &str,
    arch: Vec<crate::nn::LayerSpec>,
    data: &ImageBatch,
    cfg: &TrainConfig,
    binarize_input: bool,
) -> Result<(LogitClassifier, Vec<f32>)> {
    let images = if binarize_input {
        binarize(&data.images, crate::data::BINARIZE_THRESHOLD)
    } else {
        data.images.clone()
    };
    let mut tr = Trainer::new(
        Network::with_init(arch, rng::derive(cfg.seed, &format!("{name}-init")))?,
        cfg.lr,
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    let n = data.len();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, "plain-shuffle", epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = gather_images(&images, chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i] as usize).collect();
            let cache = tr.net.forward(&x)?;
            let (loss, lgrad) = crate::nn::cross_entropy_loss(cache.output(), &ys)?;
            if !loss.is_finite() {
                return Err(DimError::Divergence { epoch });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            seen += chunk.len();
            let grads = tr.net.backward(&cache, &lgrad)?;
            tr.step(&grads.flat())?;
        }
        trace.push((loss_sum / seen as f64) as f32);
    }
    Ok((LogitClassifier::new(name, tr.net, binarize_input), trace))
}

/// Adversarial training: each batch is replaced by its L-inf PGD perturbation
/// against the current weights before the optimizer step. With zero inner
/// steps no randomness is drawn and the trajectory equals plain training.
pub fn train_madry(
    data: &ImageBatch,
    cfg: &TrainConfig,
    madry: &MadryConfig,
) -> Result<(LogitClassifier, Vec<f32>)> {
    let mut tr = Trainer::new(
        Network::with_init(madry_arch(), rng::derive(cfg.seed, "madry-init"))?,
        cfg.lr,
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    let n = data.len();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, "plain-shuffle", epoch);
        let start_seed = rng::derive(cfg.seed, &format!("madry-start-{epoch}"));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = gather_images(&data.images, chunk);
            let ys_u8: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = if madry.steps == 0 {
                clean
            } else {
                let mut adv = clean.clone();
                if madry.random_start {
                    for (row, &idx) in chunk.iter().enumerate() {
                        let mut rng = rng::stream(start_seed, "madry-start", idx as u64);
                        for v in adv.item_mut(row) {
                            *v = (*v + rng.gen_range(-madry.eps..=madry.eps)).clamp(0.0, 1.0);
                        }
                    }
                }
                for _ in 0..madry.steps {
                    let grad = ce_input_grad(&tr.net, &adv, &ys_u8)?;
                    for ((a, &c), &g) in adv
                        .data_mut()
                        .iter_mut()
                        .zip(clean.data())
                        .zip(grad.data())
                    {
                        let stepped = *a + madry.step_size * g.signum();
                        *a = stepped
                            .clamp(c - madry.eps, c + madry.eps)
                            .clamp(0.0, 1.0);
                    }
                }
                adv
            };
            let ys: Vec<usize> = ys_u8.iter().map(|&y| y as usize).collect();
            let cache = tr.net.forward(&x)?;
            let (loss, lgrad) = crate::nn::cross_entropy_loss(cache.output(), &ys)?;
            if !loss.is_finite() {
                return Err(DimError::Divergence { epoch });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            seen += chunk.len();
            let grads = tr.net.backward(&cache, &lgrad)?;
            tr.step(&grads.flat())?;
        }
        trace.push((loss_sum / seen as f64) as f32);
    }
    Ok((LogitClassifier::new("madry", tr.net, false), trace))
}

/// Train one of the baseline kinds. `denoiser` is required for
/// `dn_single_im` (the frozen first stage is shared, not retrained).
pub fn train_baseline(
    kind: BaselineKind,
    data: &ImageBatch,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    denoiser: Option<&Denoiser>,
) -> Result<(AnyModel, Vec<f32>)> {
    let n = data.len();
    match kind {
        BaselineKind::Cnn => {
            let (m, t) = train_logit("cnn", cnn_arch(), data, cfg, false)?;
            Ok((AnyModel::Logit(m), t))
        }
        BaselineKind::BiCnn => {
            let (m, t) = train_logit("bicnn", cnn_arch(), data, cfg, true)?;
            Ok((AnyModel::Logit(m), t))
        }
        BaselineKind::Madry => {
            let (m, t) = train_madry(data, cfg, &MadryConfig::default())?;
            Ok((AnyModel::Logit(m), t))
        }
        BaselineKind::SingleIm => {
            let flat = data.images.clone().reshape(vec![n, IMAGE_PIXELS])?;
            let (enc, decs, t) = train_single_head(&flat, &data.labels, noise, cfg)?;
            Ok((AnyModel::Dim(DimClassifier::single_im(enc, decs)), t))
        }
        BaselineKind::DnSingleIm => {
            let den = denoiser.ok_or_else(|| {
                DimError::Config("dn_single_im needs a trained denoiser".into())
            })?;
            let denoised = precompute_denoised(&den.net, &data.images)?;
            let (enc, decs, t) = train_single_head(&denoised, &data.labels, noise, cfg)?;
            Ok((
                AnyModel::Dim(DimClassifier::dn_single_im(den.clone(), enc, decs)),
                t,
            ))
        }
        BaselineKind::ImOnly => {
            let flat = data.images.clone().reshape(vec![n, IMAGE_PIXELS])?;
            let results: Vec<Result<(Network, Vec<f32>)>> = (0..NUM_CLASSES)
                .into_par_iter()
                .map(|class| {
                    let c = TrainConfig {
                        seed: rng::derive(cfg.seed, &format!("im-{class}")),
                        ..cfg.clone()
                    };
                    train_internal_model(class, &flat, &data.labels, noise, &c)
                })
                .collect();
            let mut models = Vec::with_capacity(NUM_CLASSES);
            let mut mean_trace = vec![0.0f32; cfg.epochs];
            for r in results {
                let (net, trace) = r?;
                for (acc, v) in mean_trace.iter_mut().zip(&trace) {
                    *acc += *v / NUM_CLASSES as f32;
                }
                models.push(net);
            }
            Ok((
                AnyModel::Dim(DimClassifier::im_only(InternalModelSet::new(models)?)),
                mean_trace,
            ))
        }
    }
}

/// Fraction of correctly classified samples, evaluated in chunks.
pub fn clean_accuracy(model: &dyn TargetModel, data: &ImageBatch, chunk: usize) -> Result<f64> {
    let n = data.len();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for block in indices.chunks(chunk.max(1)) {
        let x = gather_images(&data.images, block);
        let preds = model.predict(&x)?;
        correct += preds
            .iter()
            .zip(block.iter().map(|&i| data.labels[i] as usize))
            .filter(|(p, y)| **p == *y)
            .count();
    }
    Ok(correct as f64 / n as f64)
}
