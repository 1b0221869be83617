//! MSE and cross-entropy losses (value plus gradient w.r.t. predictions).
//!
//! Reductions accumulate in f64; gradients come back as f32 tensors congruent
//! with the predictions.

use crate::error::{DimError, Result};
use crate::tensor::Tensor;

/// Mean squared error over all elements. Gradient is `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(DimError::shape(
            "mse_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = vec![0.0f32; pred.len()];
    for (g, (p, t)) in grad.iter_mut().zip(pred.data().iter().zip(target.data())) {
        let d = f64::from(*p) - f64::from(*t);
        acc += d * d;
        *g = (2.0 * d / n) as f32;
    }
    Ok(((acc / n) as f32, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Numerically stabilized softmax cross-entropy, averaged over the batch.
/// `logits` is `[N, K]`; gradient is `(softmax - onehot) / N`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(DimError::shape("cross_entropy_loss", "[N, K]", format!("{:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(DimError::shape("cross_entropy_loss labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(DimError::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut grad = vec![0.0f32; n * k];
    let mut total = 0.0f64;
    for i in 0..n {
        let row = logits.item(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &z in row {
            denom += f64::from(z - max).exp();
        }
        let log_denom = denom.ln();
        total += log_denom - f64::from(row[labels[i]] - max);
        for (j, &z) in row.iter().enumerate() {
            let p = (f64::from(z - max).exp() / denom) as f32;
            grad[i * k + j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    Ok(((total / n as f64) as f32, Tensor::new(vec![n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_residual() {
        let p = Tensor::from_vec(vec![0.3, 0.7]).reshape(vec![1, 2]).unwrap();
        let (loss, grad) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_hand_value() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let t = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert!((loss - 0.5).abs() < 1e-7);
        assert!((grad.data()[0] - 1.0).abs() < 1e-7);
        assert_eq!(grad.data()[1], 0.0);
    }

    #[test]
    fn mse_matches_double_loop_oracle() {
        let mut rng = crate::rng::stream(11, "mse-oracle", 0);
        use rand::Rng;
        let p: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut oracle = 0.0f64;
        for i in 0..64 {
            let d = f64::from(p[i]) - f64::from(t[i]);
            oracle += d * d;
        }
        oracle /= 64.0;
        let (loss, _) = mse_loss(
            &Tensor::new(vec![8, 8], p).unwrap(),
            &Tensor::new(vec![8, 8], t).unwrap(),
        )
        .unwrap();
        assert!((f64::from(loss) - oracle).abs() < 1e-6);
    }

    #[test]
    fn mse_shape_mismatch_rejected() {
        let a = Tensor::zeros(vec![1, 2]);
        let b = Tensor::zeros(vec![2, 1]);
        assert!(mse_loss(&a, &b).is_err());
    }

    #[test]
    fn ce_uniform_logits() {
        let logits = Tensor::zeros(vec![1, 10]);
        let (loss, _) = cross_entropy_loss(&logits, &[3]).unwrap();
        assert!((f64::from(loss) - 10.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn ce_large_logits_stable() {
        let logits = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn ce_matches_unstabilized_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, "ce-oracle", 0);
        let z: Vec<f32> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = 4usize;
        let denom: f64 = z.iter().map(|&v| f64::from(v).exp()).sum();
        let oracle = -(f64::from(z[label]).exp() / denom).ln();
        let (loss, _) = cross_entropy_loss(&Tensor::new(vec![1, 10], z).unwrap(), &[label]).unwrap();
        assert!((f64::from(loss) - oracle).abs() < 1e-5);
    }

    #[test]
    fn ce_label_out_of_range() {
        let logits = Tensor::zeros(vec![1, 10]);
        assert!(cross_entropy_loss(&logits, &[10]).is_err());
    }
}
