use super::*;
use crate::nn::gradcheck::{max_gradient_error, random_combo, well_conditioned_input};

fn identity_dense(width: usize) -> Network {
    let mut w = vec![0.0f32; width * width];
    for i in 0..width {
        w[i * width + i] = 1.0;
    }
    Network::from_parts(
        vec![LayerSpec::Dense { input: width, output: width }],
        vec![Some(LayerParams {
            weights: Tensor::new(vec![width, width], w).unwrap(),
            bias: Tensor::zeros(vec![width]),
        })],
    )
    .unwrap()
}

#[test]
fn dense_identity_forward() {
    let net = identity_dense(2);
    let x = Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap();
    let y = net.infer(&x).unwrap();
    assert_eq!(y.data(), &[0.3, 0.7]);
}

#[test]
fn relu_forward() {
    let net = Network::with_init(vec![LayerSpec::Relu], 0).unwrap();
    let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = net.infer(&x).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn conv_1x1_doubling_kernel() {
    // 1x1 kernel with value 2 on a 2x2 image of ones: every output pixel is 2.
    let net = Network::from_parts(
        vec![LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 1, stride: 1 }],
        vec![Some(LayerParams {
            weights: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        })],
    )
    .unwrap();
    let x = Tensor::filled(vec![1, 1, 2, 2], 1.0);
    let y = net.infer(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[2.0, 2.0, 2.0, 2.0]);
}

#[test]
fn conv_hand_oracle_3x3() {
    // 3x3 kernel over a 4x4 ramp, stride 1: compare against a scalar loop.
    let x_data: Vec<f32> = (0..16).map(|v| v as f32 / 7.0).collect();
    let k_data: Vec<f32> = (0..9).map(|v| (v as f32 - 4.0) / 3.0).collect();
    let net = Network::from_parts(
        vec![LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 3, stride: 1 }],
        vec![Some(LayerParams {
            weights: Tensor::new(vec![1, 9], k_data.clone()).unwrap(),
            bias: Tensor::from_vec(vec![0.25]),
        })],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1, 4, 4], x_data.clone()).unwrap();
    let y = net.infer(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    for oy in 0..2 {
        for ox in 0..2 {
            let mut acc = 0.25f32;
            for ky in 0..3 {
                for kx in 0..3 {
                    acc += x_data[(oy + ky) * 4 + ox + kx] * k_data[ky * 3 + kx];
                }
            }
            let got = y.data()[oy * 2 + ox];
            assert!((got - acc).abs() < 1e-6, "({oy},{ox}): {got} vs {acc}");
        }
    }
}

#[test]
fn scalar_product_backward() {
    // y = w * x with w = 3, x = 2, upstream 1: dw = 2, dx = 3.
    let net = Network::from_parts(
        vec![LayerSpec::Dense { input: 1, output: 1 }],
        vec![Some(LayerParams {
            weights: Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        })],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
    let cache = net.forward(&x).unwrap();
    let grads = net.backward(&cache, &Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(grads.layers[0].as_ref().unwrap().weights, vec![2.0]);
    assert_eq!(grads.input.data(), &[3.0]);
}

#[test]
fn tanh_backward_at_zero() {
    let net = Network::with_init(vec![LayerSpec::Tanh], 0).unwrap();
    let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let cache = net.forward(&x).unwrap();
    let grads = net.backward(&cache, &Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(grads.input.data(), &[1.0]);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let net = Network::with_init(
        vec![
            LayerSpec::Dense { input: 6, output: 5 },
            LayerSpec::Tanh,
            LayerSpec::Dense { input: 5, output: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 4, output: 3 },
        ],
        42,
    )
    .unwrap();
    let x = well_conditioned_input(&net, &[2, 6], 7).unwrap();
    let combo = random_combo(2 * 3, 9);
    let err = max_gradient_error(&net, &x, &combo).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn conv_pool_gradients_match_finite_differences() {
    let net = Network::with_init(
        vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1 },
            LayerSpec::Tanh,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 2 * 2 * 2, output: 3 },
        ],
        1,
    )
    .unwrap();
    let x = well_conditioned_input(&net, &[1, 1, 6, 6], 3).unwrap();
    let combo = random_combo(3, 5);
    let err = max_gradient_error(&net, &x, &combo).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn sigmoid_alpha_gradcheck() {
    let net = Network::with_init(
        vec![LayerSpec::Dense { input: 4, output: 4 }, LayerSpec::Sigmoid { alpha: 10.0 }],
        8,
    )
    .unwrap();
    let x = well_conditioned_input(&net, &[1, 4], 2).unwrap();
    let combo = random_combo(4, 3);
    let err = max_gradient_error(&net, &x, &combo).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn forward_is_pure_wrt_params() {
    let net = Network::with_init(
        vec![
            LayerSpec::Dense { input: 8, output: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 6, output: 4 },
        ],
        3,
    )
    .unwrap();
    let before: Vec<u8> = net.flat_params().iter().flat_map(|f| f.to_le_bytes()).collect();
    let x = Tensor::filled(vec![4, 8], 0.5);
    let _ = net.infer(&x).unwrap();
    let after: Vec<u8> = net.flat_params().iter().flat_map(|f| f.to_le_bytes()).collect();
    assert_eq!(before, after);
}

#[test]
fn dense_shape_error_names_layer() {
    let net = Network::with_init(vec![LayerSpec::Dense { input: 4, output: 2 }], 0).unwrap();
    let err = net.infer(&Tensor::zeros(vec![1, 5])).unwrap_err();
    assert!(err.to_string().contains("dense layer 0"), "{err}");
}

#[test]
fn backward_with_foreign_cache_rejected() {
    let net_a = Network::with_init(vec![LayerSpec::Dense { input: 2, output: 2 }], 0).unwrap();
    let net_b = Network::with_init(
        vec![LayerSpec::Dense { input: 2, output: 2 }, LayerSpec::Relu],
        0,
    )
    .unwrap();
    let cache = net_a.forward(&Tensor::zeros(vec![1, 2])).unwrap();
    let out_grad = Tensor::zeros(vec![1, 2]);
    assert!(net_b.backward(&cache, &out_grad).is_err());
}

#[test]
fn incompatible_chain_rejected() {
    let err = Network::with_init(
        vec![
            LayerSpec::Dense { input: 4, output: 3 },
            LayerSpec::Dense { input: 5, output: 2 },
        ],
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("dense layer 1"));
}

#[test]
fn maxpool_forward_and_backward_route_to_argmax() {
    let net = Network::with_init(vec![LayerSpec::MaxPool2d { kernel: 2, stride: 2 }], 0).unwrap();
    let x = Tensor::new(
        vec![1, 1, 2, 4],
        vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 8.0, 7.0],
    )
    .unwrap();
    let cache = net.forward(&x).unwrap();
    assert_eq!(cache.output().data(), &[4.0, 8.0]);
    let grads = net
        .backward(&cache, &Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap())
        .unwrap();
    assert_eq!(grads.input.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let net = Network::with_init(
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 12, output: 9 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 9, output: 4 },
            LayerSpec::Tanh,
            LayerSpec::Sigmoid { alpha: 25.0 },
        ],
        99,
    )
    .unwrap();
    let bytes = save_checkpoint(&net);
    let restored = load_checkpoint(&bytes).unwrap();
    assert_eq!(net.specs(), restored.specs());
    let a: Vec<u8> = net.flat_params().iter().flat_map(|f| f.to_le_bytes()).collect();
    let b: Vec<u8> = restored.flat_params().iter().flat_map(|f| f.to_le_bytes()).collect();
    assert_eq!(a, b);
    // Saving the restored network reproduces the file byte for byte.
    assert_eq!(bytes, save_checkpoint(&restored));
}

#[test]
fn checkpoint_bad_magic_rejected() {
    let net = Network::with_init(vec![LayerSpec::Dense { input: 2, output: 2 }], 0).unwrap();
    let mut bytes = save_checkpoint(&net);
    bytes[0] = b'X';
    let err = load_checkpoint(&bytes).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn checkpoint_truncation_rejected() {
    let net = Network::with_init(vec![LayerSpec::Dense { input: 2, output: 2 }], 0).unwrap();
    let bytes = save_checkpoint(&net);
    let err = load_checkpoint(&bytes[..bytes.len() - 4]).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn checkpoint_weight_count_mismatch_rejected() {
    let net = Network::with_init(vec![LayerSpec::Dense { input: 2, output: 2 }], 0).unwrap();
    let mut bytes = save_checkpoint(&net);
    // Over-declare the weight count without appending payload.
    let count_at = bytes.len() - 6 * 4 - 8;
    bytes[count_at..count_at + 8].copy_from_slice(&100u64.to_le_bytes());
    assert!(load_checkpoint(&bytes).is_err());
}

#[test]
fn adam_trains_identity_map() {
    // Sanity: a 2-layer net fits y = x on a few points.
    let mut net = Network::with_init(
        vec![
            LayerSpec::Dense { input: 2, output: 8 },
            LayerSpec::Tanh,
            LayerSpec::Dense { input: 8, output: 2 },
        ],
        17,
    )
    .unwrap();
    let x = Tensor::new(vec![4, 2], vec![0.1, 0.9, 0.8, 0.2, 0.4, 0.5, 0.9, 0.1]).unwrap();
    let mut state = AdamState::new(net.param_count(), 1e-2);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..300 {
        let cache = net.forward(&x).unwrap();
        let (loss, lgrad) = mse_loss(cache.output(), &x).unwrap();
        first.get_or_insert(loss);
        last = loss;
        let grads = net.backward(&cache, &lgrad).unwrap();
        let mut flat = net.flat_params();
        adam_step(&mut state, &mut flat, &grads.flat()).unwrap();
        net.set_flat_params(&flat).unwrap();
    }
    assert!(last < first.unwrap() * 0.05, "{last} vs {first:?}");
}
