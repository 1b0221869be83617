//! Latent extraction from the internal models and the silhouette measure
//! used to quantify per-class clustering.

use crate::data::ImageBatch;
use crate::error::{DimError, Result};
use crate::models::{DimClassifier, ImBank, IM_ENCODER_LAYERS};
use crate::tensor::Tensor;

/// Bottleneck activations of internal model `model_index` on the (denoised,
/// flag-processed) inputs. Output is `N x latent_dim`.
pub fn extract_latents(
    dim: &DimClassifier,
    images: &ImageBatch,
    model_index: usize,
) -> Result<Vec<Vec<f32>>> {
    let k = dim.bank.num_classes();
    if model_index >= k {
        return Err(DimError::Invalid(format!(
            "model index {model_index} out of range for {k} internal models"
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    let indices: Vec<usize> = (0..images.len()).collect();
    for chunk in indices.chunks(256) {
        let sub = images.select(chunk)?;
        let bank_in = dim.bank_input(&sub.images)?;
        let z: Tensor = match &dim.bank {
            ImBank::Separate(models) => models[model_index]
                .forward_prefix(&bank_in, IM_ENCODER_LAYERS)?
                .into_output(),
            ImBank::SingleHead { encoder, .. } => encoder.infer(&bank_in)?,
        };
        for i in 0..z.batch() {
            out.push(z.item(i).to_vec());
        }
    }
    Ok(out)
}

/// Mean silhouette of the samples labeled `class` in a 2-D embedding:
/// `a` is the mean distance to same-class points, `b` the smallest mean
/// distance to any other class; each sample scores `(b - a) / max(a, b)`.
pub fn class_silhouette(points: &[[f32; 2]], labels: &[u8], class: u8) -> f64 {
    let dist = |p: &[f32; 2], q: &[f32; 2]| -> f64 {
        let dx = f64::from(p[0]) - f64::from(q[0]);
        let dy = f64::from(p[1]) - f64::from(q[1]);
        (dx * dx + dy * dy).sqrt()
    };
    let classes: Vec<u8> = {
        let mut c: Vec<u8> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    if members.len() < 2 || classes.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for &i in &members {
        let a = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist(&points[i], &points[j]))
            .sum::<f64>()
            / (members.len() - 1) as f64;
        let mut b = f64::INFINITY;
        for &other in classes.iter().filter(|&&c| c != class) {
            let others: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == other).collect();
            if others.is_empty() {
                continue;
            }
            let mean = others.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>()
                / others.len() as f64;
            b = b.min(mean);
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / members.len() as f64
}
