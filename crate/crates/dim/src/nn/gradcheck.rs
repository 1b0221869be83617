//! Central finite-difference checking for the analytic gradients.
//!
//! The scalar objective is `L(y) = sum_i c_i y_i` for a random combination
//! vector `c`, evaluated in f64. Analytic gradients come from one backward
//! pass with `c` as the output gradient; numeric gradients perturb one
//! coordinate at a time. Piecewise-linear layers (relu, maxpool) are only
//! meaningful away from their kinks, so inputs can be rejection-sampled with
//! a margin wider than the step.

use super::{LayerSpec, Network};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

/// Step used by the central differences.
pub const FD_STEP: f32 = 1e-3;

/// Scalar objective evaluated through an f64 re-implementation of the
/// forward pass, so the difference quotient is not drowned by f32 roundoff.
/// This path shares no code with `Network::forward`.
fn combo_loss(net: &Network, x: &Tensor, combo: &[f32]) -> Result<f64> {
    let y = forward_f64(net, x, None)?;
    Ok(y.iter().zip(combo).map(|(&v, &c)| v * f64::from(c)).sum())
}

/// Reference forward in f64. `override_params` substitutes the flat parameter
/// vector (perturbed copies during parameter checks).
pub fn forward_f64(net: &Network, x: &Tensor, override_params: Option<&[f64]>) -> Result<Vec<f64>> {
    let flat: Vec<f64> = match override_params {
        Some(p) => p.to_vec(),
        None => net.flat_params().iter().map(|&v| f64::from(v)).collect(),
    };
    let mut off = 0usize;
    let mut cur: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    let mut shape: Vec<usize> = x.shape().to_vec();
    for spec in net.specs() {
        match spec {
            LayerSpec::Dense { input, output } => {
                let n = shape[0];
                let w = &flat[off..off + input * output];
                let b = &flat[off + input * output..off + input * output + output];
                off += input * output + output;
                let mut y = vec![0.0f64; n * output];
                for i in 0..n {
                    for j in 0..*output {
                        let mut acc = b[j];
                        for k in 0..*input {
                            acc += cur[i * input + k] * w[k * output + j];
                        }
                        y[i * output + j] = acc;
                    }
                }
                cur = y;
                shape = vec![n, *output];
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                debug_assert_eq!(c, *in_channels);
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let ckk = c * kernel * kernel;
                let wgt = &flat[off..off + out_channels * ckk];
                let b = &flat[off + out_channels * ckk..off + out_channels * ckk + out_channels];
                off += out_channels * ckk + out_channels;
                let mut y = vec![0.0f64; n * out_channels * oh * ow];
                for i in 0..n {
                    for oc in 0..*out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = b[oc];
                                for ch in 0..c {
                                    for ky in 0..*kernel {
                                        for kx in 0..*kernel {
                                            let iv = cur[i * c * h * w
                                                + ch * h * w
                                                + (oy * stride + ky) * w
                                                + (ox * stride + kx)];
                                            acc += iv * wgt[oc * ckk + ch * kernel * kernel + ky * kernel + kx];
                                        }
                                    }
                                }
                                y[i * out_channels * oh * ow + oc * oh * ow + oy * ow + ox] = acc;
                            }
                        }
                    }
                }
                cur = y;
                shape = vec![n, *out_channels, oh, ow];
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let mut y = vec![0.0f64; n * c * oh * ow];
                for i in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        best = best.max(
                                            cur[i * c * h * w
                                                + ch * h * w
                                                + (oy * stride + ky) * w
                                                + (ox * stride + kx)],
                                        );
                                    }
                                }
                                y[i * c * oh * ow + ch * oh * ow + oy * ow + ox] = best;
                            }
                        }
                    }
                }
                cur = y;
                shape = vec![n, c, oh, ow];
            }
            LayerSpec::Relu => cur.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Tanh => cur.iter_mut().for_each(|v| *v = v.tanh()),
            LayerSpec::Sigmoid { alpha } => {
                let a = f64::from(*alpha);
                cur.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-a * *v).exp()));
            }
            LayerSpec::Flatten => {
                let n = shape[0];
                let m: usize = shape[1..].iter().product();
                shape = vec![n, m];
            }
        }
    }
    Ok(cur)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Maximum relative error between analytic and finite-difference gradients,
/// over every parameter and every input coordinate.
pub fn max_gradient_error(net: &Network, x: &Tensor, combo: &[f32]) -> Result<f64> {
    let cache = net.forward(x)?;
    let out_shape = cache.output().shape().to_vec();
    let out_grad = Tensor::new(out_shape, combo.to_vec())?;
    let grads = net.backward(&cache, &out_grad)?;

    let mut worst = 0.0f64;

    // Input gradient. The effective step is measured after f32 rounding.
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        let plus = orig + FD_STEP;
        let minus = orig - FD_STEP;
        xp.data_mut()[i] = plus;
        let up = combo_loss(net, &xp, combo)?;
        xp.data_mut()[i] = minus;
        let dn = combo_loss(net, &xp, combo)?;
        xp.data_mut()[i] = orig;
        let span = f64::from(plus) - f64::from(minus);
        worst = worst.max(rel_err(f64::from(grads.input.data()[i]), (up - dn) / span));
    }

    // Parameter gradients (perturbed in f64 through the reference forward).
    let base: Vec<f64> = net.flat_params().iter().map(|&v| f64::from(v)).collect();
    let h = f64::from(FD_STEP);
    for (li, lg) in grads.layers.iter().enumerate() {
        let Some(lg) = lg else { continue };
        let offset = param_offset(net, li);
        for (j, &analytic) in lg.weights.iter().chain(lg.bias.iter()).enumerate() {
            let mut flat = base.clone();
            flat[offset + j] += h;
            let up = {
                let y = forward_f64(net, x, Some(&flat))?;
                y.iter().zip(combo).map(|(&v, &c)| v * f64::from(c)).sum::<f64>()
            };
            flat[offset + j] -= 2.0 * h;
            let dn = {
                let y = forward_f64(net, x, Some(&flat))?;
                y.iter().zip(combo).map(|(&v, &c)| v * f64::from(c)).sum::<f64>()
            };
            worst = worst.max(rel_err(f64::from(analytic), (up - dn) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn param_offset(net: &Network, layer: usize) -> usize {
    net.params()
        .iter()
        .take(layer)
        .flatten()
        .map(|p| p.weights.len() + p.bias.len())
        .sum()
}

/// Sample an input whose relu pre-activations and pooling windows keep a
/// margin wider than [`FD_STEP`], so central differences stay on one linear
/// piece. Falls back to the last draw if the margin cannot be met.
pub fn well_conditioned_input(net: &Network, shape: &[usize], seed: u64) -> Result<Tensor> {
    let margin = FD_STEP * 20.0;
    let n: usize = shape.iter().product();
    let mut last = Tensor::zeros(shape.to_vec());
    for attempt in 0..200u64 {
        let mut rng = rng::stream(seed, "gradcheck-input", attempt);
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(shape.to_vec(), data)?;
        if input_has_margin(net, &x, margin)? {
            return Ok(x);
        }
        last = x;
    }
    Ok(last)
}

fn input_has_margin(net: &Network, x: &Tensor, margin: f32) -> Result<bool> {
    let cache = net.forward(x)?;
    for (idx, spec) in net.specs().iter().enumerate() {
        match spec {
            LayerSpec::Relu => {
                if cache.acts[idx].data().iter().any(|v| v.abs() < margin) {
                    return Ok(false);
                }
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                if !pool_windows_have_margin(&cache.acts[idx], *kernel, *stride, margin) {
                    return Ok(false);
                }
            }
            _ => {}
        }
    }
    Ok(true)
}

fn pool_windows_have_margin(x: &Tensor, kernel: usize, stride: usize, margin: f32) -> bool {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    for i in 0..n {
        let xi = x.item(i);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut top = f32::NEG_INFINITY;
                    let mut second = f32::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let v = xi[ch * h * w + (oy * stride + ky) * w + (ox * stride + kx)];
                            if v > top {
                                second = top;
                                top = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    if top - second < margin {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Random output-combination vector for the scalar objective.
pub fn random_combo(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = rng::stream(seed, "gradcheck-combo", 0);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
