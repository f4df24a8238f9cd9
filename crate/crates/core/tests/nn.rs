use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weavecount::dataset::synth_examples;
use weavecount::nn::blocks::{inception, inception_block, orig_inception};
use weavecount::nn::gradcheck::{check_layer, check_loss, check_network};
use weavecount::nn::io::{read_header, read_weights, write_weights};
use weavecount::nn::layers::{conv2d_same, BatchNorm, Conv2d, Layer, MaxPool3s1, Relu, TrainCtx};
use weavecount::nn::loss::{bce, dice};
use weavecount::nn::optim::{Adam, AdamParams};
use weavecount::nn::train::{evaluate, train, train_step, TrainConfig};
use weavecount::nn::{LossKind, NetConfig, Network, Tensor, Variant};

fn random_tensor(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor {
    let data = (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(n, h, w, c, data).unwrap()
}

#[test]
fn default_inc_dice_shapes_and_size() {
    let net = Network::build(NetConfig::paper(Variant::IncDice), 1).unwrap();
    assert_eq!(
        net.encoder_shapes(200, 200),
        vec![
            (100, 100, 48),
            (50, 50, 96),
            (25, 25, 192),
            (12, 12, 192),
            (12, 12, 384)
        ]
    );
    let n = net.param_count();
    assert!((5_000_000..=8_000_000).contains(&n), "{n} parameters");
    // a pure function of the configuration
    let again = Network::build(NetConfig::paper(Variant::IncDice), 99).unwrap();
    assert_eq!(again.param_count(), n);
}

#[test]
fn all_variants_build() {
    for v in Variant::ALL {
        let net = Network::build(NetConfig::paper(v), 0).unwrap();
        assert!(net.param_count() > 100_000, "{v}");
        assert_eq!(net.encoder_shapes(200, 200).last().unwrap().0, 12);
    }
}

#[test]
fn inconsistent_config_is_rejected() {
    let mut cfg = NetConfig::paper(Variant::IncDice);
    cfg.decoder_filters.pop();
    assert!(Network::build(cfg, 0).is_err());
    let mut cfg = NetConfig::paper(Variant::IncDice);
    cfg.filters[2] = 0;
    assert!(Network::build(cfg, 0).is_err());
    let mut cfg = NetConfig::paper(Variant::UnetDice);
    cfg.dropout_p = 1.0;
    assert!(Network::build(cfg, 0).is_err());
}

#[test]
fn toy_forward_shape_range_and_determinism() {
    let cfg = NetConfig::toy(Variant::IncDice, 3, 2, 64);
    let net = Network::build(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, 2, 64, 64, 1);
    let y = net.infer(&x).unwrap();
    assert_eq!(y.shape(), (2, 64, 64, 1));
    assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(net.infer(&x).unwrap(), y);
    // symbolic shapes agree with the executed ones
    assert_eq!(
        net.encoder_shapes(64, 64),
        vec![(32, 32, 6), (16, 16, 12), (16, 16, 24)]
    );
    assert_eq!(net.decoder_shapes(64, 64), vec![(32, 32, 12 + 12), (64, 64, 6 + 6)]);
}

#[test]
fn toy_unet_and_orig_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, 1, 25, 25, 1);
    for v in [Variant::UnetTh, Variant::OrigIncDice] {
        let net = Network::build(NetConfig::toy(v, 3, 2, 25), 3).unwrap();
        assert_eq!(net.infer(&x).unwrap().shape(), (1, 25, 25, 1));
    }
}

#[test]
fn wrong_input_is_rejected() {
    let net = Network::build(NetConfig::toy(Variant::IncDice, 3, 2, 64), 5).unwrap();
    assert!(net.infer(&Tensor::zeros(1, 3, 3, 1)).is_err());
    assert!(net.infer(&Tensor::zeros(1, 16, 16, 2)).is_err());
}

#[test]
fn inception_concatenates_three_banks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = inception("inc", 3, 4, &[3, 5, 7], &mut rng);
    let x = random_tensor(&mut rng, 1, 9, 9, 3);
    let y = block.infer(&x);
    assert_eq!(y.shape(), (1, 9, 9, 12));
    for (b, k) in block.branches.iter().zip([3, 5, 7]) {
        let mut w = Vec::new();
        b.visit_ref(&mut |p| w.push(p.value.clone()));
        let direct = conv2d_same(&x, &w[0], &w[1], k, 4);
        let bi = [3, 5, 7].iter().position(|&kk| kk == k).unwrap();
        for px in 0..81 {
            for ch in 0..4 {
                assert_eq!(y.data[px * 12 + bi * 4 + ch], direct.data[px * 4 + ch]);
            }
        }
    }
}

#[test]
fn zero_weights_give_zero_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, 1, 6, 6, 2);
    let mut inc = inception("inc", 2, 3, &[3, 5, 7], &mut rng);
    inc.visit(&mut |p| p.value.iter_mut().for_each(|v| *v = 0.0));
    let y = inc.infer(&x);
    assert_eq!(y.c, 9);
    assert!(y.data.iter().all(|&v| v == 0.0));

    let mut orig = orig_inception("orig", 2, 3, &mut rng);
    orig.visit(&mut |p| {
        if p.trainable {
            p.value.iter_mut().for_each(|v| *v = 0.0)
        }
    });
    let y = orig.infer(&x);
    assert_eq!(y.c, 12);
    assert!(y.data.iter().all(|&v| v == 0.0));
}

#[test]
fn orig_inception_matches_composed_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, 1, 7, 7, 2);
    let block = orig_inception("orig", 2, 3, &mut rng);
    let mut params = Vec::new();
    block.visit_ref(&mut |p| params.push(p.value.clone()));
    // each conv contributes weight, bias; each batch norm gamma, beta, mean, var
    let conv = |x: &Tensor, i: usize, k: usize| conv2d_same(x, &params[i], &params[i + 1], k, 3);
    let bn_relu = |x: &Tensor, i: usize| {
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value = params[i].clone();
        bn.beta.value = params[i + 1].clone();
        Relu::new().infer(&bn.infer(x))
    };
    let b1 = bn_relu(&conv(&x, 0, 1), 2);
    let b2 = bn_relu(&conv(&bn_relu(&conv(&x, 6, 1), 8), 12, 3), 14);
    let b3a = bn_relu(&conv(&x, 18, 1), 20);
    let b3 = bn_relu(&conv(&conv(&b3a, 24, 3), 26, 3), 28);
    let b4 = bn_relu(&conv(&MaxPool3s1::new().infer(&x), 32, 1), 34);
    let y = block.infer(&x);
    for px in 0..49 {
        for (bi, b) in [&b1, &b2, &b3, &b4].iter().enumerate() {
            for ch in 0..3 {
                let d = (y.data[px * 12 + bi * 3 + ch] - b.data[px * 3 + ch]).abs();
                assert!(d < 1e-12);
            }
        }
    }
}

#[test]
fn gradient_checks_of_layers() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, 1, 6, 6, 2);
        let mut conv = Conv2d::new("c", 3, 2, 3, &mut rng);
        let r = check_layer(&mut conv, &x, TrainCtx::frozen, 60, seed);
        assert!(r.max_rel_err < 1e-5, "conv {r:?}");

        let mut bn = BatchNorm::new("bn", 2);
        bn.running_mean.value = vec![0.3, -0.2];
        bn.running_var.value = vec![0.5, 2.0];
        bn.gamma.value = vec![1.5, 0.7];
        let r = check_layer(&mut bn, &x, TrainCtx::frozen, 60, seed);
        assert!(r.max_rel_err < 1e-4, "bn eval {r:?}");

        let batch_ctx = || TrainCtx {
            update_running: false,
            dropout: false,
            ..TrainCtx::training(0)
        };
        let xb = random_tensor(&mut rng, 2, 4, 4, 2);
        let r = check_layer(&mut bn, &xb, batch_ctx, 60, seed);
        assert!(r.max_rel_err < 1e-4, "bn batch {r:?}");

        let mut block = inception_block("inc", 2, 2, &[3, 5, 7], &mut rng);
        let r = check_layer(&mut block, &x, TrainCtx::frozen, 60, seed);
        assert!(r.max_rel_err < 1e-4 && r.checked > 60, "inception {r:?}");
    }
}

#[test]
fn gradient_checks_of_losses() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = Tensor::from_vec(2, 4, 4, 1, (0..32).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let target = Tensor::from_vec(
            2,
            4,
            4,
            1,
            (0..32).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        assert!(check_loss(LossKind::Dice, &pred, &target).max_rel_err < 1e-5);
        assert!(check_loss(LossKind::Bce, &pred, &target).max_rel_err < 1e-5);
    }
}

#[test]
fn gradient_check_of_toy_network() {
    for (seed, variant) in [
        (0, Variant::IncDice),
        (1, Variant::IncDice),
        (2, Variant::UnetDice),
        (3, Variant::OrigIncDice),
    ] {
        let mut cfg = NetConfig::toy(variant, 2, 2, 16);
        cfg.dropout_p = 0.0;
        let mut net = Network::build(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        net.visit(&mut |p| {
            if p.name.ends_with("running_var") {
                p.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
            } else if p.name.ends_with("running_mean") {
                p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
            }
        });
        let x = random_tensor(&mut rng, 1, 16, 16, 1);
        let t = Tensor::from_vec(1, 16, 16, 1, (0..256).map(|i| ((i % 7 == 0) as u8) as f64).collect()).unwrap();
        let r = check_network(&mut net, &x, &t, 80, seed);
        assert!(r.max_rel_err < 1e-4, "{variant}: {r:?}");
        assert!(r.checked >= 120, "{variant}: {r:?}");
    }
}

#[test]
fn loss_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let a: Vec<f64> = (0..20).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        let p: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        assert!((dice(&a, &b) - dice(&b, &a)).abs() < 1e-15);
        let d = dice(&p, &a);
        assert!((0.0..=1.0).contains(&d));
        assert!(bce(&p, &a) >= 0.0);
    }
}

#[test]
fn weights_roundtrip() {
    let cfg = NetConfig::toy(Variant::UnetDice, 3, 2, 32);
    let net = Network::build(cfg, 11).unwrap();
    let mut buf = Vec::new();
    write_weights(&net.weights(), &mut buf).unwrap();
    let header = read_header(&mut buf.as_slice()).unwrap();
    assert_eq!(header.config, *net.config());
    let w = read_weights(buf.as_slice()).unwrap();
    let back = Network::from_weights(&w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, 1, 32, 32, 1);
    assert_eq!(back.infer(&x).unwrap(), net.infer(&x).unwrap());

    buf.truncate(buf.len() - 3);
    assert!(read_weights(buf.as_slice()).is_err());
}

#[test]
fn toy_overfits_one_example() {
    let ex = synth_examples(1, 32, (10.0, 14.0), 3).unwrap();
    let mut cfg = NetConfig::toy(Variant::IncDice, 2, 4, 32);
    cfg.dropout_p = 0.0;
    let mut net = Network::build(cfg, 1).unwrap();
    let mut opt = Adam::new(AdamParams::with_lr(1e-2));
    let mut ctx = TrainCtx::training(0);
    let batch = [&ex[0]];
    for _ in 0..300 {
        train_step(&mut net, &mut opt, &batch, &mut ctx).unwrap();
    }
    let m = evaluate(&net, &ex).unwrap();
    assert!(m.dice_loss < 0.1, "{m:?}");
}

#[test]
fn training_improves_and_is_reproducible() {
    let data = synth_examples(60, 32, (10.0, 16.0), 21).unwrap();
    let (tr, val) = data.split_at(50);
    let cfg = NetConfig::toy(Variant::IncDice, 2, 2, 32);
    let initial = evaluate(&Network::build(cfg.clone(), 4).unwrap(), val).unwrap();
    let tc = TrainConfig {
        batch: 10,
        lr: 1e-2,
        patience: 5,
        max_epochs: 12,
        seed: 8,
    };
    let run = || {
        let mut net = Network::build(cfg.clone(), 4).unwrap();
        let report = train(&mut net, tr, val, &tc, |_, _| {}).unwrap();
        (report, evaluate(&net, val).unwrap())
    };
    let (r1, m1) = run();
    let (r2, m2) = run();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert!(m1.accuracy > initial.accuracy, "{initial:?} -> {m1:?}");
    let best = r1.history[r1.best_epoch - 1].val_accuracy;
    assert_eq!(m1.accuracy, best);
}

#[test]
fn training_rejects_empty_sets() {
    let data = synth_examples(2, 32, (10.0, 16.0), 1).unwrap();
    let mut net = Network::build(NetConfig::toy(Variant::IncDice, 2, 2, 32), 0).unwrap();
    assert!(train(&mut net, &[], &data, &TrainConfig::default(), |_, _| {}).is_err());
    assert!(train(&mut net, &data, &[], &TrainConfig::default(), |_, _| {}).is_err());
}

#[test]
fn bce_variant_trains() {
    let data = synth_examples(8, 32, (10.0, 16.0), 2).unwrap();
    let mut net = Network::build(NetConfig::toy(Variant::UnetTh, 2, 2, 32), 0).unwrap();
    assert_eq!(net.config().loss, LossKind::Bce);
    let tc = TrainConfig {
        batch: 4,
        lr: 1e-3,
        patience: 2,
        max_epochs: 2,
        seed: 0,
    };
    let r = train(&mut net, &data, &data, &tc, |_, _| {}).unwrap();
    assert!(r.history.iter().all(|h| h.train_loss.is_finite()));
}
