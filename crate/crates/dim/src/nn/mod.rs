//! Minimal reverse-mode network engine: dense/conv layers, activations,
//! pooling, losses, Adam, and checkpoint persistence.
//!
//! Forward passes cache per-layer activations in a caller-owned
//! [`ForwardCache`]; backward consumes the cache and produces parameter and
//! input gradients. A `Network` is never mutated by forward/backward, so one
//! instance supports concurrent inference with per-call caches.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod loss;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use loss::{cross_entropy_loss, mse_loss};

use crate::error::{DimError, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

/// Layer descriptor. `dims` are kind-specific and fully determine parameter
/// shapes; spatial output sizes follow from the input (valid padding).
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    MaxPool2d { kernel: usize, stride: usize },
    Relu,
    Tanh,
    Sigmoid { alpha: f32 },
    Flatten,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid { .. } => "sigmoid",
            LayerSpec::Flatten => "flatten",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }
}

/// Weight/bias pair for a parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Parameter and input gradients for one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Aligned with the layer list; `None` for parameter-free layers.
    pub layers: Vec<Option<LayerGrads>>,
    pub input: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Gradients {
    /// Parameter gradients flattened in checkpoint order (per layer: weights
    /// then bias).
    pub fn flat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// Activation cache from one forward call. `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`; pooling layers additionally store
/// argmax indices.
#[derive(Debug)]
pub struct ForwardCache {
    acts: Vec<Tensor>,
    pool_idx: Vec<Option<Vec<u32>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.acts.pop().expect("cache holds at least the input")
    }
}

/// An ordered stack of layers plus their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    params: Vec<Option<LayerParams>>,
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f32).sqrt()
}

impl Network {
    /// Build a network with Glorot-uniform weights and zero biases.
    pub fn with_init(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_chain(&specs)?;
        let mut params = Vec::with_capacity(specs.len());
        for (idx, spec) in specs.iter().enumerate() {
            params.push(match spec {
                LayerSpec::Dense { input, output } => {
                    let limit = glorot_limit(*input, *output);
                    let mut rng = rng::stream(seed, "init", idx as u64);
                    let w: Vec<f32> = (0..input * output)
                        .map(|_| rng.gen_range(-limit..=limit))
                        .collect();
                    Some(LayerParams {
                        weights: Tensor::new(vec![*input, *output], w)?,
                        bias: Tensor::zeros(vec![*output]),
                    })
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = in_channels * kernel * kernel;
                    let fan_out = out_channels * kernel * kernel;
                    let limit = glorot_limit(fan_in, fan_out);
                    let mut rng = rng::stream(seed, "init", idx as u64);
                    let w: Vec<f32> = (0..out_channels * fan_in)
                        .map(|_| rng.gen_range(-limit..=limit))
                        .collect();
                    Some(LayerParams {
                        weights: Tensor::new(vec![*out_channels, fan_in], w)?,
                        bias: Tensor::zeros(vec![*out_channels]),
                    })
                }
                _ => None,
            });
        }
        Ok(Network { specs, params })
    }

    /// Assemble a network from explicit parameters (checkpoint load path).
    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Option<LayerParams>>) -> Result<Self> {
        validate_chain(&specs)?;
        if specs.len() != params.len() {
            return Err(DimError::shape("Network::from_parts", specs.len(), params.len()));
        }
        for (idx, (spec, p)) in specs.iter().zip(&params).enumerate() {
            match (spec, p) {
                (LayerSpec::Dense { input, output }, Some(lp)) => {
                    if lp.weights.shape() != [*input, *output] || lp.bias.len() != *output {
                        return Err(DimError::shape(
                            format!("dense layer {idx} params"),
                            format!("[{input}, {output}]"),
                            format!("{:?}", lp.weights.shape()),
                        ));
                    }
                }
                (LayerSpec::Conv2d { in_channels, out_channels, kernel, .. }, Some(lp)) => {
                    let fan_in = in_channels * kernel * kernel;
                    if lp.weights.shape() != [*out_channels, fan_in] || lp.bias.len() != *out_channels {
                        return Err(DimError::shape(
                            format!("conv2d layer {idx} params"),
                            format!("[{out_channels}, {fan_in}]"),
                            format!("{:?}", lp.weights.shape()),
                        ));
                    }
                }
                (s, Some(_)) if !s.has_params() => {
                    return Err(DimError::Invalid(format!(
                        "layer {idx} ({}) takes no parameters",
                        s.kind_name()
                    )));
                }
                (s, None) if s.has_params() => {
                    return Err(DimError::Invalid(format!(
                        "layer {idx} ({}) is missing parameters",
                        s.kind_name()
                    )));
                }
                _ => {}
            }
        }
        Ok(Network { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn num_layers(&self) -> usize {
        self.specs.len()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// All parameters flattened in checkpoint order.
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params.iter().flatten() {
            out.extend_from_slice(p.weights.data());
            out.extend_from_slice(p.bias.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(DimError::shape("set_flat_params", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for p in self.params.iter_mut().flatten() {
            let wn = p.weights.len();
            p.weights.data_mut().copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = p.bias.len();
            p.bias.data_mut().copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    /// Run the full stack, caching activations for a later [`Network::backward`].
    pub fn forward(&self, x: &Tensor) -> Result<ForwardCache> {
        self.forward_prefix(x, self.specs.len())
    }

    /// Run only the first `n_layers` layers (used for latent extraction).
    pub fn forward_prefix(&self, x: &Tensor, n_layers: usize) -> Result<ForwardCache> {
        if x.shape().is_empty() || x.shape().len() < 2 {
            return Err(DimError::shape("forward input", "[batch, ...]", format!("{:?}", x.shape())));
        }
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut pool_idx = Vec::with_capacity(n_layers);
        acts.push(x.clone());
        for (idx, spec) in self.specs.iter().take(n_layers).enumerate() {
            let (y, aux) = self.layer_forward(idx, spec, acts.last().unwrap())?;
            acts.push(y);
            pool_idx.push(aux);
        }
        Ok(ForwardCache { acts, pool_idx })
    }

    /// Forward without keeping the cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.into_output())
    }

    fn layer_forward(
        &self,
        idx: usize,
        spec: &LayerSpec,
        x: &Tensor,
    ) -> Result<(Tensor, Option<Vec<u32>>)> {
        match spec {
            LayerSpec::Dense { input, output } => {
                if x.shape().len() != 2 || x.shape()[1] != *input {
                    return Err(DimError::shape(
                        format!("dense layer {idx}"),
                        format!("[N, {input}]"),
                        format!("{:?}", x.shape()),
                    ));
                }
                let p = self.params[idx].as_ref().unwrap();
                let n = x.batch();
                let mut y = vec![0.0f32; n * output];
                matmul(
                    n, *input, *output,
                    x.data(), *input as isize, 1,
                    p.weights.data(), *output as isize, 1,
                    0.0, &mut y,
                );
                let b = p.bias.data();
                for row in y.chunks_exact_mut(*output) {
                    for (v, bv) in row.iter_mut().zip(b) {
                        *v += *bv;
                    }
                }
                Ok((Tensor::new(vec![n, *output], y)?, None))
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                let (n, c, h, w) = conv_input_dims(x, idx, "conv2d")?;
                if c != *in_channels {
                    return Err(DimError::shape(
                        format!("conv2d layer {idx}"),
                        format!("{in_channels} input channels"),
                        c,
                    ));
                }
                let (oh, ow) = conv_out_size(h, w, *kernel, *stride, idx)?;
                let p = self.params[idx].as_ref().unwrap();
                let ckk = c * kernel * kernel;
                let mut y = vec![0.0f32; n * out_channels * oh * ow];
                let mut col = vec![0.0f32; ckk * oh * ow];
                for i in 0..n {
                    im2col(x.item(i), c, h, w, *kernel, *stride, oh, ow, &mut col);
                    let y_i = &mut y[i * out_channels * oh * ow..(i + 1) * out_channels * oh * ow];
                    matmul(
                        *out_channels, ckk, oh * ow,
                        p.weights.data(), ckk as isize, 1,
                        &col, (oh * ow) as isize, 1,
                        0.0, y_i,
                    );
                    for (oc, plane) in y_i.chunks_exact_mut(oh * ow).enumerate() {
                        let b = p.bias.data()[oc];
                        plane.iter_mut().for_each(|v| *v += b);
                    }
                }
                Ok((Tensor::new(vec![n, *out_channels, oh, ow], y)?, None))
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let (n, c, h, w) = conv_input_dims(x, idx, "maxpool2d")?;
                let (oh, ow) = conv_out_size(h, w, *kernel, *stride, idx)?;
                let mut y = vec![0.0f32; n * c * oh * ow];
                let mut arg = vec![0u32; n * c * oh * ow];
                for i in 0..n {
                    let xi = x.item(i);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f32::NEG_INFINITY;
                                let mut best_at = 0usize;
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        let at = ch * h * w + iy * w + ix;
                                        if xi[at] > best {
                                            best = xi[at];
                                            best_at = at;
                                        }
                                    }
                                }
                                let out_at = i * c * oh * ow + ch * oh * ow + oy * ow + ox;
                                y[out_at] = best;
                                arg[out_at] = best_at as u32;
                            }
                        }
                    }
                }
                Ok((Tensor::new(vec![n, c, oh, ow], y)?, Some(arg)))
            }
            LayerSpec::Relu => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                Ok((y, None))
            }
            LayerSpec::Tanh => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                Ok((y, None))
            }
            LayerSpec::Sigmoid { alpha } => {
                if *alpha <= 0.0 {
                    return Err(DimError::Invalid(format!(
                        "sigmoid layer {idx}: alpha must be positive, got {alpha}"
                    )));
                }
                let a = *alpha;
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-a * *v).exp()));
                Ok((y, None))
            }
            LayerSpec::Flatten => {
                let n = x.batch();
                let m = x.item_len();
                Ok((x.clone().reshape(vec![n, m])?, None))
            }
        }
    }

    /// Reverse pass. `out_grad` is dLoss/dOutput for the cached forward;
    /// returns parameter gradients plus the gradient at the input.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &Tensor) -> Result<Gradients> {
        if cache.acts.len() != self.specs.len() + 1 {
            return Err(DimError::Invalid(format!(
                "backward: cache covers {} layers but the network has {} \
                 (was forward run on this network?)",
                cache.acts.len().saturating_sub(1),
                self.specs.len()
            )));
        }
        if out_grad.shape() != cache.output().shape() {
            return Err(DimError::shape(
                "backward out_grad",
                format!("{:?}", cache.output().shape()),
                format!("{:?}", out_grad.shape()),
            ));
        }
        let mut grad = out_grad.clone();
        let mut layer_grads: Vec<Option<LayerGrads>> = vec![None; self.specs.len()];
        for idx in (0..self.specs.len()).rev() {
            let x = &cache.acts[idx];
            let y = &cache.acts[idx + 1];
            grad = match &self.specs[idx] {
                LayerSpec::Dense { input, output } => {
                    let p = self.params[idx].as_ref().unwrap();
                    let n = x.batch();
                    // dW = X^T @ dY
                    let mut dw = vec![0.0f32; input * output];
                    matmul(
                        *input, n, *output,
                        x.data(), 1, *input as isize,
                        grad.data(), *output as isize, 1,
                        0.0, &mut dw,
                    );
                    let mut db = vec![0.0f32; *output];
                    for row in grad.data().chunks_exact(*output) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += *g;
                        }
                    }
                    // dX = dY @ W^T
                    let mut dx = vec![0.0f32; n * input];
                    matmul(
                        n, *output, *input,
                        grad.data(), *output as isize, 1,
                        p.weights.data(), 1, *output as isize,
                        0.0, &mut dx,
                    );
                    layer_grads[idx] = Some(LayerGrads { weights: dw, bias: db });
                    Tensor::new(vec![n, *input], dx)?
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                    let p = self.params[idx].as_ref().unwrap();
                    let (n, c, h, w) = conv_input_dims(x, idx, "conv2d")?;
                    let (oh, ow) = conv_out_size(h, w, *kernel, *stride, idx)?;
                    let ckk = in_channels * kernel * kernel;
                    let mut dw = vec![0.0f32; out_channels * ckk];
                    let mut db = vec![0.0f32; *out_channels];
                    let mut dx = vec![0.0f32; n * c * h * w];
                    let mut col = vec![0.0f32; ckk * oh * ow];
                    let mut dcol = vec![0.0f32; ckk * oh * ow];
                    for i in 0..n {
                        let dy_i = &grad.data()[i * out_channels * oh * ow..(i + 1) * out_channels * oh * ow];
                        im2col(x.item(i), c, h, w, *kernel, *stride, oh, ow, &mut col);
                        // dW += dY_i @ col^T
                        matmul(
                            *out_channels, oh * ow, ckk,
                            dy_i, (oh * ow) as isize, 1,
                            &col, 1, (oh * ow) as isize,
                            1.0, &mut dw,
                        );
                        for (oc, plane) in dy_i.chunks_exact(oh * ow).enumerate() {
                            db[oc] += plane.iter().sum::<f32>();
                        }
                        // dcol = W^T @ dY_i
                        matmul(
                            ckk, *out_channels, oh * ow,
                            p.weights.data(), 1, ckk as isize,
                            dy_i, (oh * ow) as isize, 1,
                            0.0, &mut dcol,
                        );
                        col2im(&dcol, c, h, w, *kernel, *stride, oh, ow, &mut dx[i * c * h * w..(i + 1) * c * h * w]);
                    }
                    layer_grads[idx] = Some(LayerGrads { weights: dw, bias: db });
                    Tensor::new(vec![n, c, h, w], dx)?
                }
                LayerSpec::MaxPool2d { .. } => {
                    let arg = cache.pool_idx[idx]
                        .as_ref()
                        .ok_or_else(|| DimError::Invalid(format!("maxpool layer {idx}: cache missing indices")))?;
                    let n = x.batch();
                    let item = x.item_len();
                    let out_item = y.item_len();
                    let mut dx = vec![0.0f32; x.len()];
                    for i in 0..n {
                        for (j, g) in grad.item(i).iter().enumerate() {
                            let at = arg[i * out_item + j] as usize;
                            dx[i * item + at] += *g;
                        }
                    }
                    Tensor::new(x.shape().to_vec(), dx)?
                }
                LayerSpec::Relu => {
                    let mut dx = grad.clone();
                    for (d, xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                LayerSpec::Tanh => {
                    let mut dx = grad.clone();
                    for (d, yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= 1.0 - yv * yv;
                    }
                    dx
                }
                LayerSpec::Sigmoid { alpha } => {
                    let mut dx = grad.clone();
                    for (d, yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= alpha * yv * (1.0 - yv);
                    }
                    dx
                }
                LayerSpec::Flatten => grad.clone().reshape(x.shape().to_vec())?,
            };
        }
        if !grad.all_finite() {
            return Err(DimError::NonFiniteGradient("backward input gradient".into()));
        }
        Ok(Gradients { layers: layer_grads, input: grad })
    }
}

fn conv_input_dims(x: &Tensor, idx: usize, kind: &str) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(DimError::shape(
            format!("{kind} layer {idx}"),
            "[N, C, H, W]",
            format!("{s:?}"),
        ));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn conv_out_size(h: usize, w: usize, kernel: usize, stride: usize, idx: usize) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 || h < kernel || w < kernel {
        return Err(DimError::Invalid(format!(
            "layer {idx}: kernel {kernel}/stride {stride} does not fit input {h}x{w}"
        )));
    }
    Ok(((h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(DimError::Invalid("network needs at least one layer".into()));
    }
    let mut width: Option<usize> = None;
    let mut channels: Option<usize> = None;
    for (idx, spec) in specs.iter().enumerate() {
        match spec {
            LayerSpec::Dense { input, output } => {
                if *input == 0 || *output == 0 {
                    return Err(DimError::Invalid(format!("dense layer {idx}: zero width")));
                }
                if let Some(wid) = width {
                    if wid != *input {
                        return Err(DimError::shape(
                            format!("dense layer {idx} input"),
                            wid,
                            *input,
                        ));
                    }
                }
                width = Some(*output);
                channels = None;
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                if *kernel == 0 || *stride == 0 || *in_channels == 0 || *out_channels == 0 {
                    return Err(DimError::Invalid(format!("conv2d layer {idx}: zero dimension")));
                }
                if let Some(ch) = channels {
                    if ch != *in_channels {
                        return Err(DimError::shape(
                            format!("conv2d layer {idx} channels"),
                            ch,
                            *in_channels,
                        ));
                    }
                }
                channels = Some(*out_channels);
                width = None;
            }
            LayerSpec::Sigmoid { alpha } => {
                if *alpha <= 0.0 {
                    return Err(DimError::Invalid(format!(
                        "sigmoid layer {idx}: alpha must be positive"
                    )));
                }
            }
            LayerSpec::Flatten => {
                channels = None;
                width = None;
            }
            _ => {}
        }
    }
    Ok(())
}

/// `c[m,n] = alpha_implicit(1.0) * a @ b + beta * c` with explicit strides,
/// so transposed views never require a copy.
#[allow(clippy::too_many_arguments)]
fn matmul(
    m: usize, k: usize, n: usize,
    a: &[f32], rsa: isize, csa: isize,
    b: &[f32], rsb: isize, csb: isize,
    beta: f32, c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Unfold `[C, H, W]` into `[C*K*K, OH*OW]` columns (valid padding).
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, stride: usize, oh: usize, ow: usize, col: &mut [f32]) {
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k * k + ky * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    let src = ch * h * w + iy * w + kx;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        col[dst + ox] = x[src + ox * stride];
                    }
                }
            }
        }
    }
}

/// Scatter-add the column gradient back onto the `[C, H, W]` input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, stride: usize, oh: usize, ow: usize, dx: &mut [f32]) {
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k * k + ky * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    let dst = ch * h * w + iy * w + kx;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        dx[dst + ox * stride] += col[src + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
