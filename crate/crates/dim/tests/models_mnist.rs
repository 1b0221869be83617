//! Behavioral checks on real MNIST at small training budgets: the internal
//! models learn own-class reconstruction, the denoiser beats the identity on
//! noisy digits, and the sigmoid proxy agrees with hard binarization.

use dim::data::{load_idx, ImageBatch, NoiseSpec};
use dim::models::{
    precompute_denoised, train_denoiser, train_internal_model, DimClassifier, TargetModel,
    TrainConfig,
};
use dim::tensor::{l1_norm, Tensor};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

fn data_dir() -> PathBuf {
    if let Ok(env) = std::env::var("DIM_DATA_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

struct MiniFixture {
    train_subset: ImageBatch,
    test_subset: ImageBatch,
    denoiser: dim::models::Denoiser,
    denoised: Tensor,
    im0: dim::nn::Network,
}

static MINI: OnceLock<MiniFixture> = OnceLock::new();

/// Small shared training run: 8k training digits, 3 epochs.
fn mini() -> &'static MiniFixture {
    MINI.get_or_init(|| {
        let dir = data_dir();
        let train = load_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        let test = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
        )
        .unwrap();
        let train_subset = train.select(&(0..8000).collect::<Vec<_>>()).unwrap();
        let test_subset = test.select(&(0..500).collect::<Vec<_>>()).unwrap();
        let noise = NoiseSpec::defaults(0);
        let cfg = TrainConfig::new(3, 7);
        let (denoiser, trace) = train_denoiser(&train_subset, &noise, &cfg).unwrap();
        assert!(trace.last().unwrap() < trace.first().unwrap());
        let denoised = precompute_denoised(&denoiser.net, &train_subset.images).unwrap();
        let (im0, _) =
            train_internal_model(0, &denoised, &train_subset.labels, &noise, &cfg).unwrap();
        MiniFixture { train_subset, test_subset, denoiser, denoised, im0 }
    })
}

fn mean_intensity(net: &dim::nn::Network, inputs: &Tensor) -> f64 {
    let out = net.infer(inputs).unwrap();
    let mut acc = 0.0;
    for i in 0..out.batch() {
        acc += l1_norm(out.item(i)) / out.item_len() as f64;
    }
    acc / out.batch() as f64
}

fn flat_images(batch: &ImageBatch, indices: &[usize]) -> Tensor {
    let sub = batch.select(indices).unwrap();
    let n = sub.len();
    sub.images.reshape(vec![n, 784]).unwrap()
}

#[test]
fn internal_model_separates_own_class_intensity() {
    let fx = mini();
    let own: Vec<usize> = (0..fx.test_subset.len())
        .filter(|&i| fx.test_subset.labels[i] == 0)
        .take(40)
        .collect();
    let other: Vec<usize> = (0..fx.test_subset.len())
        .filter(|&i| fx.test_subset.labels[i] != 0)
        .take(40)
        .collect();
    let den = &fx.denoiser.net;
    let own_in = precompute_denoised(den, &fx.test_subset.select(&own).unwrap().images).unwrap();
    let other_in = precompute_denoised(den, &fx.test_subset.select(&other).unwrap().images).unwrap();
    let own_mean = mean_intensity(&fx.im0, &own_in);
    let other_mean = mean_intensity(&fx.im0, &other_in);
    assert!(
        own_mean > 5.0 * other_mean,
        "own-class intensity {own_mean} vs other {other_mean}"
    );
    // An untrained model shows no separation.
    let untrained = dim::nn::Network::with_init(dim::models::internal_model_arch(), 99).unwrap();
    let a = mean_intensity(&untrained, &own_in);
    let b = mean_intensity(&untrained, &other_in);
    assert!((a / b - 1.0).abs() < 0.5, "untrained ratio {}", a / b);
}

#[test]
fn im_loss_on_black_inputs_is_reconstruction_of_noise_only() {
    // With an all-black rejected input, the internal model's target is the
    // black image, so the loss equals the mean squared output.
    let fx = mini();
    let black = Tensor::zeros(vec![4, 784]);
    let out = fx.im0.infer(&black).unwrap();
    let (loss, _) = dim::nn::mse_loss(&out, &black).unwrap();
    let direct: f64 =
        out.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / out.len() as f64;
    assert!((f64::from(loss) - direct).abs() < 1e-6);
}

#[test]
fn denoiser_beats_identity_on_noisy_digits() {
    let fx = mini();
    let idx: Vec<usize> = (0..200).collect();
    let clean = flat_images(&fx.test_subset, &idx);
    let noisy = dim::data::apply_training_noise(&clean, &NoiseSpec::defaults(42));
    let den_out = fx.denoiser.net.infer(&noisy).unwrap();
    let (mse_denoised, _) = dim::nn::mse_loss(&den_out, &clean).unwrap();
    let (mse_identity, _) = dim::nn::mse_loss(&noisy, &clean).unwrap();
    assert!(
        mse_denoised < mse_identity,
        "denoiser {mse_denoised} vs identity {mse_identity}"
    );
}

#[test]
fn denoised_training_set_stays_in_pixel_range() {
    let fx = mini();
    assert!(fx.denoised.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn bidim_proxy_agrees_with_hard_model_on_clean_digits() {
    // Binarization-flag plumbing: at alpha = 100 the proxy's decisions match
    // the hard model on nearly every clean digit.
    let fx = mini();
    let ims: Vec<dim::nn::Network> = (0..10)
        .map(|k| {
            if k == 0 {
                fx.im0.clone()
            } else {
                dim::nn::Network::with_init(dim::models::internal_model_arch(), k).unwrap()
            }
        })
        .collect();
    let bidim = DimClassifier {
        name: "bidim".into(),
        denoiser: Some(fx.denoiser.net.clone()),
        bank: dim::models::ImBank::Separate(ims),
        binarize_input: true,
        binarize_denoised: true,
        attack_loss: Default::default(),
    };
    let idx: Vec<usize> = (0..300).collect();
    let sub = fx.test_subset.select(&idx).unwrap();
    let hard = bidim.predict(&sub.images).unwrap();
    let proxy = dim::models::sigmoid_proxy(&bidim, 100.0).unwrap();
    let soft = proxy.predict(&sub.images).unwrap();
    let agree = hard.iter().zip(&soft).filter(|(a, b)| a == b).count();
    assert!(
        agree as f64 / hard.len() as f64 >= 0.95,
        "agreement {agree}/{}",
        hard.len()
    );
    let _ = &fx.train_subset;
}
