use super::*;
use crate::nn::normal_tensor;
use crate::rng::substream;

fn tiny_config(classes: usize) -> ConvNetConfig {
    ConvNetConfig {
        in_channels: 2,
        input_size: 10,
        blocks: vec![
            BlockSpec { out_channels: 3, kernel: 3, stride: 1, padding: 0 },
            BlockSpec { out_channels: 4, kernel: 3, stride: 2, padding: 0 },
        ],
        pool: 2,
        num_classes: classes,
        batch_norm: true,
        bn_momentum: DEFAULT_BN_MOMENTUM,
        bn_eps: DEFAULT_BN_EPS,
    }
}

#[test]
fn convnet4_has_reference_shapes() {
    let cfg = ConvNetConfig::convnet4(10);
    assert_eq!(cfg.spatial_sizes().unwrap(), (vec![29, 13, 5, 2], 1));
    assert_eq!(cfg.fc_inputs().unwrap(), 300);
    let model = build_convnet4(10, 0).unwrap();
    assert_eq!(model.fc().weight.shape(), &[10, 300]);
    assert_eq!(model.num_channels(), 1200);
    let shapes: Vec<_> = model.blocks().iter().map(|b| b.conv.weight.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![300, 3, 4, 4], vec![300, 300, 4, 4], vec![300, 300, 4, 4], vec![300, 300, 3, 3]]);
    let strides: Vec<_> = model.blocks().iter().map(|b| b.conv.stride).collect();
    assert_eq!(strides, vec![1, 2, 2, 2]);
}

#[test]
fn forward_produces_logits_per_example() {
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 6), 1).unwrap();
    let logits = model.forward(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
    assert_eq!(logits.shape(), &[1, 10]);
}

#[test]
fn same_seed_same_weights() {
    let a: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 5), 42).unwrap();
    let b: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 5), 42).unwrap();
    let c: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 5), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn rejects_wrong_input_size_and_single_class() {
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 4), 0).unwrap();
    assert!(matches!(model.forward(&Tensor::zeros(&[1, 3, 28, 28])), Err(Error::Shape { .. })));
    assert!(ConvNet::<f64>::build(ConvNetConfig::convnet4_with_width(1, 4), 0).is_err());
}

#[test]
fn zero_input_gives_zero_first_layer_means() {
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 4), 3).unwrap();
    let (_, stats) = model.forward_with_stats(&Tensor::zeros(&[2, 3, 32, 32])).unwrap();
    let first = model.channel_index().layer_range(0);
    assert!(stats.per_channel_mean[first].iter().all(|&v| v == 0.0));
    assert_eq!(stats.batch_size, 2);
}

/// Independent triple loop: re-runs the network layer by layer and averages
/// each BN input over (example, row, column).
fn naive_tap_means(model: &ConvNet, input: &Tensor) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = input.clone();
    for blk in model.blocks() {
        let z = blk.conv.forward(&x).unwrap();
        let s = z.shape().to_vec();
        for c in 0..s[1] {
            let mut acc = 0.0;
            for b in 0..s[0] {
                for i in 0..s[2] {
                    for j in 0..s[3] {
                        acc += z.data()[((b * s[1] + c) * s[2] + i) * s[3] + j];
                    }
                }
            }
            out.push(acc / (s[0] * s[2] * s[3]) as f64);
        }
        let y = blk.bn.as_ref().unwrap().forward_eval(&z).unwrap();
        x = crate::nn::relu(&y);
    }
    out
}

#[test]
fn tap_means_match_naive_oracle() {
    let mut rng = substream(9, "model-test");
    let mut model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 5), 9).unwrap();
    for blk in &mut model.blocks {
        let bn = blk.bn.as_mut().unwrap();
        bn.running_mean = normal_tensor(&[5], 0.5, &mut rng);
    }
    let input: Tensor = normal_tensor(&[3, 3, 32, 32], 1.0, &mut rng);
    let (_, stats) = model.forward_with_stats(&input).unwrap();
    for (a, b) in stats.per_channel_mean.iter().zip(naive_tap_means(&model, &input)) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn duplicated_batch_has_single_example_stats() {
    let mut rng = substream(10, "model-test");
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 4), 10).unwrap();
    let one: Tensor = normal_tensor(&[1, 3, 32, 32], 1.0, &mut rng);
    let many = Tensor::concat(&[&one, &one, &one, &one]).unwrap();
    let (_, s1) = model.forward_with_stats(&one).unwrap();
    let (_, s4) = model.forward_with_stats(&many).unwrap();
    for (a, b) in s1.per_channel_mean.iter().zip(&s4.per_channel_mean) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in s1.per_channel_sqmean.iter().zip(&s4.per_channel_sqmean) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn stats_pass_logits_equal_plain_forward() {
    let mut rng = substream(11, "model-test");
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 4), 11).unwrap();
    let input: Tensor = normal_tensor(&[2, 3, 32, 32], 1.0, &mut rng);
    let (logits, _) = model.forward_with_stats(&input).unwrap();
    assert_eq!(logits, model.forward(&input).unwrap());
}

#[test]
fn train_mode_taps_equal_bn_batch_means() {
    let mut rng = substream(12, "model-test");
    let model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 4), 12).unwrap();
    let input: Tensor = normal_tensor(&[3, 3, 32, 32], 1.0, &mut rng);
    let (_, taps, bn) = model.forward_train_with_stats(&input).unwrap();
    let index = model.channel_index();
    for (l, s) in bn.iter().enumerate() {
        for (c, &m) in s.mean.iter().enumerate() {
            let g = index.layer_range(l).start + c;
            assert!((taps.per_channel_mean[g] - m).abs() <= 1e-10);
        }
    }
    // The first layer's input does not depend on BN mode.
    let (_, eval_taps) = model.forward_with_stats(&input).unwrap();
    for g in index.layer_range(0) {
        assert!((eval_taps.per_channel_mean[g] - taps.per_channel_mean[g]).abs() <= 1e-10);
    }
}

#[test]
fn channel_index_locates_layers() {
    let idx = ChannelIndex::new(&[3, 2, 4]);
    assert_eq!(idx.total(), 9);
    assert_eq!(idx.locate(0), Some((0, 0)));
    assert_eq!(idx.locate(3), Some((1, 0)));
    assert_eq!(idx.locate(8), Some((2, 3)));
    assert_eq!(idx.locate(9), None);
    let d = idx.doubled();
    assert_eq!(d.total(), 18);
    assert_eq!(d.locate(9), Some((3, 0)));
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn backprop_matches_central_differences() {
    let h = 1e-4;
    let mut checked = 0;
    for seed in 0..6u64 {
        let mut rng = substream(seed, "gradcheck");
        let mut model: ConvNet = ConvNet::build(tiny_config(3), seed).unwrap();
        // Move BN affine params off their init so their gradients are generic.
        for blk in &mut model.blocks {
            let bn = blk.bn.as_mut().unwrap();
            let c = bn.channels();
            bn.gamma = normal_tensor(&[c], 0.3, &mut rng).map(|v| v + 1.0);
            bn.beta = normal_tensor(&[c], 0.3, &mut rng);
        }
        let input: Tensor = normal_tensor(&[3, 2, 10, 10], 1.0, &mut rng);
        if model.min_relu_margin(&input).unwrap() < 1e-3 {
            continue;
        }
        let labels = [0, 2, 1];
        let (_, grads) = model.loss_and_gradients(&input, &labels).unwrap();
        let n_params = model.parameters().len();
        for p in 0..n_params {
            for i in 0..model.parameters()[p].len() {
                let orig = model.parameters()[p].data()[i];
                model.parameters_mut()[p].data_mut()[i] = orig + h;
                let lp = model.loss_and_gradients(&input, &labels).unwrap().0;
                model.parameters_mut()[p].data_mut()[i] = orig - h;
                let lm = model.loss_and_gradients(&input, &labels).unwrap().0;
                model.parameters_mut()[p].data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[p].data()[i];
                assert!(rel_err(fd, an) <= 1e-4, "seed {seed} param {p}[{i}]: fd {fd} vs backprop {an}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 3);
}

/// Two classes that differ in the sign of the first color plane.
fn separable_images(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = substream(seed, "separable");
    let mut x: Tensor = normal_tensor(&[n, 3, 32, 32], 0.3, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for (i, &y) in labels.iter().enumerate() {
        let shift = if y == 0 { -1.0 } else { 1.0 };
        for v in &mut x.item_mut(i)[..1024] {
            *v += shift;
        }
    }
    (x, labels)
}

#[test]
fn learns_a_separable_two_class_problem() {
    let (x, y) = separable_images(64, 1);
    let mut model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(2, 4), 1).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 8, lr: 0.05, ..TrainConfig::default() };
    train_classifier(&mut model, &x, &y, &cfg).unwrap();
    let logits = model.forward(&x).unwrap();
    let acc = train::count_correct(&logits, &y) as f64 / y.len() as f64;
    assert!(acc >= 0.95, "accuracy {acc}");
    assert!(model.blocks()[0].bn.as_ref().unwrap().updates() == 5 * 8);
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let (x, y) = separable_images(8, 2);
    let mut model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(2, 3), 2).unwrap();
    let before = model.clone();
    let report = train_classifier(&mut model, &x, &y, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert!(report.step_losses.is_empty());
    assert_eq!(model, before);
}

#[test]
fn training_is_deterministic_under_seed() {
    let (x, y) = separable_images(16, 3);
    let run = || {
        let mut model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(2, 3), 3).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 17, ..TrainConfig::default() };
        (train_classifier(&mut model, &x, &y, &cfg).unwrap(), model)
    };
    let (r1, m1) = run();
    let (r2, m2) = run();
    assert_eq!(r1.step_losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), r2.step_losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(m1, m2);
}

#[test]
fn divergence_is_reported() {
    let (x, y) = separable_images(8, 4);
    let mut model: ConvNet = ConvNet::build(ConvNetConfig::convnet4_with_width(2, 3), 4).unwrap();
    let cfg = TrainConfig { epochs: 50, lr: 1e12, momentum: 0.0, schedule: LrSchedule::Constant, ..TrainConfig::default() };
    let err = train_classifier(&mut model, &x, &y, &cfg).unwrap_err();
    assert!(err.is_numerical(), "{err:?}");
}
