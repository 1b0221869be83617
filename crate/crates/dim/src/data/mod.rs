//! MNIST ingestion and the training-time input corruptions.

mod augment;
mod idx;

pub use augment::{
    add_l0_noise, add_linf_noise, apply_training_noise, binarize, binarize_in_place,
    brightness_jitter, NoiseSpec, BINARIZE_THRESHOLD,
};
pub use idx::{load_idx, load_idx_images, load_idx_labels};

use crate::error::{DimError, Result};
use crate::tensor::Tensor;

/// A batch of MNIST images in `[0,1]^{28x28}` with labels in `0..=9`.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

impl ImageBatch {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != IMAGE_SIDE || shape[3] != IMAGE_SIDE {
            return Err(DimError::shape(
                "ImageBatch",
                "[N, 1, 28, 28]",
                format!("{shape:?}"),
            ));
        }
        if shape[0] != labels.len() || labels.is_empty() {
            return Err(DimError::Invalid(format!(
                "image count {} does not match label count {}",
                shape[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(DimError::Invalid(format!("label {bad} outside 0..=9")));
        }
        if images.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(DimError::Invalid("pixel outside [0,1]".into()));
        }
        Ok(ImageBatch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.item(i)
    }

    /// Select a sub-batch by indices (used for evaluation subsets).
    pub fn select(&self, indices: &[usize]) -> Result<ImageBatch> {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DimError::Invalid(format!("index {i} out of range")));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        ImageBatch::new(
            Tensor::new(vec![indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)?,
            labels,
        )
    }
}
