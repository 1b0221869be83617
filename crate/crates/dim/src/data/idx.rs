//! IDX file parsing: big-endian u32 header (magic 2051 for images, 2049 for
//! labels) followed by a u8 payload. Pixels are scaled by 1/255.

use super::{ImageBatch, IMAGE_SIDE};
use crate::error::{DimError, Result};
use crate::tensor::Tensor;
use std::path::Path;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| DimError::Invalid(format!("{}: truncated header", path.display())))
}

pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| DimError::io(path.display().to_string(), e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(DimError::Invalid(format!(
            "{}: expected image magic {IMAGES_MAGIC}, got {magic}",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DimError::Invalid(format!(
            "{}: expected 28x28 images, got {rows}x{cols}",
            path.display()
        )));
    }
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(DimError::Invalid(format!(
            "{}: payload is {} bytes, header implies {want}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[16..].iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new(vec![n, 1, IMAGE_SIDE, IMAGE_SIDE], data)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| DimError::io(path.display().to_string(), e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(DimError::Invalid(format!(
            "{}: expected label magic {LABELS_MAGIC}, got {magic}",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(DimError::Invalid(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            8 + n
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Load an image/label pair into a validated batch.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageBatch> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(DimError::Invalid(format!(
            "{} holds {} images but {} holds {} labels",
            images_path.display(),
            images.shape()[0],
            labels_path.display(),
            labels.len()
        )));
    }
    ImageBatch::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(path: &Path, magic: u32, n: u32, pixels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
    }

    fn write_labels(path: &Path, magic: u32, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn byte_255_becomes_one() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        let mut pixels = vec![0u8; 784];
        pixels[0] = 255;
        pixels[1] = 128;
        write_images(&img, 2051, 1, &pixels);
        write_labels(&lab, 2049, &[7]);
        let batch = load_idx(&img, &lab).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.image(0)[0], 1.0);
        assert!((batch.image(0)[1] - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(batch.labels, vec![7]);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lab = dir.path().join("lab");
        // A labels file carrying the images magic must be rejected.
        write_labels(&lab, 2051, &[1, 2, 3]);
        assert!(load_idx_labels(&lab).is_err());
    }

    #[test]
    fn truncated_images_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        write_images(&img, 2051, 2, &vec![0u8; 784]); // header says 2, payload has 1
        assert!(load_idx_images(&img).is_err());
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_images(&img, 2051, 1, &vec![0u8; 784]);
        write_labels(&lab, 2049, &[1, 2]);
        assert!(load_idx(&img, &lab).is_err());
    }
}
