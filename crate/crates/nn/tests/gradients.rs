use covct_nn::{
    gradient_check, GradCheckConfig, LayerSpec, Mode, Network, NetworkBuilder, ProbeLoss, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense layers, activations, and stacks made only of them.
const DENSE_TOL: f64 = 1e-3;
/// Everything involving convolution, pooling, batch norm, dropout or reshaping.
const LAYER_TOL: f64 = 1e-2;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

/// Values bounded away from zero so ReLU kinks sit far from the FD step.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

fn sequential(specs: &[LayerSpec]) -> Network {
    let mut b = NetworkBuilder::new(11);
    for s in specs {
        b.then(s.clone()).unwrap();
    }
    b.build()
}

fn weighted(mode: Mode) -> GradCheckConfig {
    GradCheckConfig {
        loss: ProbeLoss::Weighted,
        mode,
        ..GradCheckConfig::default()
    }
}

fn check(net: &Network, x: &Tensor, cfg: &GradCheckConfig, tol: f64) {
    let out = net.predict(x).unwrap();
    let target = match cfg.loss {
        ProbeLoss::Weighted => random(out.shape(), 99),
        ProbeLoss::Bce => random(out.shape(), 98).map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
    };
    let r = gradient_check(net, x, &target, cfg).unwrap();
    assert!(r.checked > 0);
    assert!(
        r.passed(tol),
        "max relative error {} at {} (tol {tol})",
        r.max_rel_error,
        r.worst
    );
}

#[test]
fn conv3x3_gradients() {
    let net = sequential(&[LayerSpec::Conv3x3Same {
        in_channels: 1,
        out_channels: 2,
    }]);
    check(
        &net,
        &random(&[1, 1, 4, 4], 1),
        &weighted(Mode::Train),
        LAYER_TOL,
    );
    let net = sequential(&[LayerSpec::Conv3x3Same {
        in_channels: 3,
        out_channels: 2,
    }]);
    check(
        &net,
        &random(&[2, 3, 5, 4], 2),
        &weighted(Mode::Train),
        LAYER_TOL,
    );
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let net = sequential(&[LayerSpec::batchnorm(2)]);
    let x = random(&[4, 2, 3, 3], 3);
    check(&net, &x, &weighted(Mode::Train), LAYER_TOL);
    check(&net, &x, &weighted(Mode::Eval), LAYER_TOL);
}

#[test]
fn maxpool_gradients() {
    let net = sequential(&[LayerSpec::MaxPool2]);
    // Distinct values spaced well beyond the FD step: no ties.
    let mut vals: Vec<f32> = (0..16).map(|i| i as f32 * 0.1).collect();
    vals.reverse();
    vals.swap(3, 9);
    let x = Tensor::new(vec![1, 1, 4, 4], vals).unwrap();
    check(&net, &x, &weighted(Mode::Train), LAYER_TOL);
}

#[test]
fn dense_gradients() {
    let net = sequential(&[LayerSpec::Dense {
        inputs: 5,
        units: 4,
    }]);
    check(&net, &random(&[3, 5], 4), &weighted(Mode::Train), DENSE_TOL);
}

#[test]
fn activation_gradients() {
    let relu = sequential(&[LayerSpec::ReLU]);
    check(
        &relu,
        &away_from_zero(&[2, 6], 5),
        &weighted(Mode::Train),
        DENSE_TOL,
    );
    let sig = sequential(&[LayerSpec::Sigmoid]);
    check(&sig, &random(&[2, 6], 6), &weighted(Mode::Train), DENSE_TOL);
}

#[test]
fn shape_layer_gradients() {
    let up = sequential(&[LayerSpec::UpSample2]);
    check(
        &up,
        &random(&[1, 2, 3, 3], 7),
        &weighted(Mode::Train),
        LAYER_TOL,
    );
    let flat = sequential(&[
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 8,
            units: 2,
        },
    ]);
    check(
        &flat,
        &random(&[2, 2, 2, 2], 8),
        &weighted(Mode::Train),
        LAYER_TOL,
    );

    let mut b = NetworkBuilder::new(3);
    let a = b
        .add(
            LayerSpec::Conv3x3Same {
                in_channels: 1,
                out_channels: 2,
            },
            &[0],
        )
        .unwrap();
    let c = b.add(LayerSpec::Concat, &[a, 0]).unwrap();
    b.add(
        LayerSpec::Conv3x3Same {
            in_channels: 3,
            out_channels: 1,
        },
        &[c],
    )
    .unwrap();
    check(
        &b.build(),
        &random(&[1, 1, 4, 4], 9),
        &weighted(Mode::Train),
        LAYER_TOL,
    );
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    let net = sequential(&[
        LayerSpec::Dense {
            inputs: 6,
            units: 8,
        },
        LayerSpec::Dropout { rate: 0.3 },
    ]);
    check(
        &net,
        &random(&[4, 6], 10),
        &weighted(Mode::Train),
        LAYER_TOL,
    );
}

#[test]
fn dense_sigmoid_bce_stack() {
    let net = sequential(&[
        LayerSpec::Dense {
            inputs: 6,
            units: 5,
        },
        LayerSpec::ReLU,
        LayerSpec::Dense {
            inputs: 5,
            units: 1,
        },
        LayerSpec::Sigmoid,
    ]);
    let cfg = GradCheckConfig::default();
    check(&net, &random(&[4, 6], 12), &cfg, DENSE_TOL);
}

fn conv_stack() -> Network {
    sequential(&[
        LayerSpec::Conv3x3Same {
            in_channels: 1,
            out_channels: 3,
        },
        LayerSpec::batchnorm(3),
        LayerSpec::ReLU,
        LayerSpec::MaxPool2,
        LayerSpec::Conv3x3Same {
            in_channels: 3,
            out_channels: 2,
        },
        LayerSpec::ReLU,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 32,
            units: 1,
        },
        LayerSpec::Sigmoid,
    ])
}

#[test]
fn conv_batchnorm_sigmoid_bce_stack() {
    let net = conv_stack();
    let cfg = GradCheckConfig::default();
    check(&net, &random(&[1, 1, 8, 8], 13), &cfg, LAYER_TOL);
    check(&net, &random(&[3, 1, 8, 8], 14), &cfg, LAYER_TOL);
}

#[test]
fn checker_flags_doubled_gradients() {
    let net = conv_stack();
    let x = random(&[1, 1, 8, 8], 13);
    let cfg = GradCheckConfig {
        analytic_scale: 2.0,
        ..GradCheckConfig::default()
    };
    let r = gradient_check(&net, &x, &Tensor::full(&[1, 1], 1.0), &cfg).unwrap();
    assert!(r.max_rel_error > 0.4, "{}", r.max_rel_error);
}
