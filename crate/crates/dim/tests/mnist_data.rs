//! Checks against the real dataset files shipped under data/mnist.

use dim::data::load_idx;
use std::path::{Path, PathBuf};

fn data_dir() -> PathBuf {
    if let Ok(env) = std::env::var("DIM_DATA_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn canonical_test_file_loads_ten_thousand_images() {
    let dir = data_dir();
    let batch = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(batch.len(), 10_000);
    assert_eq!(batch.images.shape(), &[10_000, 1, 28, 28]);
    assert!(batch.labels.iter().all(|&l| l <= 9));
    assert!(batch.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    // Canonical first labels of the test split.
    assert_eq!(&batch.labels[..8], &[7, 2, 1, 0, 4, 1, 4, 9]);
}

#[test]
fn train_file_loads_sixty_thousand_images() {
    let dir = data_dir();
    let batch = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(batch.len(), 60_000);
    // Every digit is represented.
    let mut counts = [0usize; 10];
    for &l in &batch.labels {
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 5_000), "{counts:?}");
}

#[test]
fn image_and_label_files_are_not_interchangeable() {
    let dir = data_dir();
    assert!(load_idx(
        &dir.join("t10k-labels-idx1-ubyte"),
        &dir.join("t10k-images-idx3-ubyte"),
    )
    .is_err());
}
