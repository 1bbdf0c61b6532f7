use covct_nn::weights::{decode, encode};
use covct_nn::{
    load_weights, save_weights, train, LayerSpec, Network, NetworkBuilder, NnError, Tensor,
    TensorDataset, TrainConfig,
};
use proptest::prelude::*;

fn two_layer(seed: u64) -> Network {
    let mut b = NetworkBuilder::new(seed);
    b.then(LayerSpec::Dense {
        inputs: 2,
        units: 4,
    })
    .unwrap();
    b.then(LayerSpec::ReLU).unwrap();
    b.then(LayerSpec::Dense {
        inputs: 4,
        units: 1,
    })
    .unwrap();
    b.then(LayerSpec::Sigmoid).unwrap();
    b.build()
}

/// Eight points, label 1 iff x + y > 0.
fn separable() -> TensorDataset {
    let pts = [
        (1.0, 0.5),
        (0.8, 1.2),
        (0.3, 0.9),
        (1.5, -0.2),
        (-1.0, -0.5),
        (-0.8, -1.2),
        (-0.3, -0.9),
        (-1.5, 0.2),
    ];
    let xs = pts
        .iter()
        .map(|&(a, b)| Tensor::new(vec![2], vec![a, b]).unwrap())
        .collect();
    let ts = pts
        .iter()
        .map(|&(a, b)| Tensor::scalar(if a + b > 0.0 { 1.0 } else { 0.0 }))
        .collect();
    TensorDataset::new(xs, ts).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs,
        initial_lr: 0.1,
        train_set_size: 8,
        test_set_size: 8,
        rng_seed: 3,
    }
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let mut net = two_layer(1);
    let before = net.clone();
    let log = train(&mut net, &separable(), &cfg(0)).unwrap();
    assert!(log.records.is_empty());
    assert_eq!(net, before);
}

#[test]
fn loss_decreases_on_separable_data() {
    let mut net = two_layer(1);
    let log = train(&mut net, &separable(), &cfg(20)).unwrap();
    let losses = log.epoch_losses();
    assert_eq!(losses.len(), 20);
    assert_eq!(log.records.len(), 20 * 2);
    assert!(
        losses.last().unwrap() < losses.first().unwrap(),
        "{losses:?}"
    );
}

#[test]
fn same_seed_same_history() {
    let run = || {
        let mut net = two_layer(1);
        train(&mut net, &separable(), &cfg(5)).unwrap()
    };
    let (a, b) = (run(), run());
    let bits = |l: &covct_nn::TrainLog| {
        l.records
            .iter()
            .map(|r| r.loss.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn lr_follows_exponential_decay() {
    let mut net = two_layer(1);
    let log = train(&mut net, &separable(), &cfg(3)).unwrap();
    let lrs: Vec<f32> = log.records.iter().step_by(2).map(|r| r.lr).collect();
    assert_eq!(lrs[0], 0.1);
    for w in lrs.windows(2) {
        let ratio = (w[1] / w[0]) as f64;
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-6);
    }
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("epoch,step,lr,loss\n0,0,"));
}

#[test]
fn non_finite_loss_reports_divergence() {
    let mut net = two_layer(1);
    let bad = TensorDataset::new(
        vec![Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap(); 8],
        vec![Tensor::scalar(1.0); 8],
    )
    .unwrap();
    match train(&mut net, &bad, &cfg(2)) {
        Err(NnError::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_size_must_match_dataset() {
    let mut net = two_layer(1);
    let mut c = cfg(1);
    c.train_set_size = 9;
    assert!(matches!(
        train(&mut net, &separable(), &c),
        Err(NnError::InvalidArgument(_))
    ));
}

fn conv_net(layers: usize) -> Network {
    let mut b = NetworkBuilder::new(9);
    let mut c = 1;
    for i in 0..layers {
        let out = 2 << i;
        b.then(LayerSpec::Conv3x3Same {
            in_channels: c,
            out_channels: out,
        })
        .unwrap();
        b.then(LayerSpec::batchnorm(out)).unwrap();
        c = out;
    }
    b.build()
}

#[test]
fn weight_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let src = conv_net(2);
    save_weights(&src, &path).unwrap();
    let mut dst = NetworkBuilder::new(1234).build();
    assert!(load_weights(&mut dst, &path).is_err());
    let mut dst = {
        // Same architecture, different init.
        let mut b = NetworkBuilder::new(77);
        b.then(LayerSpec::Conv3x3Same {
            in_channels: 1,
            out_channels: 2,
        })
        .unwrap();
        b.then(LayerSpec::batchnorm(2)).unwrap();
        b.then(LayerSpec::Conv3x3Same {
            in_channels: 2,
            out_channels: 4,
        })
        .unwrap();
        b.then(LayerSpec::batchnorm(4)).unwrap();
        b.build()
    };
    assert_ne!(dst, src);
    load_weights(&mut dst, &path).unwrap();
    assert_eq!(encode(&dst), encode(&src));
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"CTPW");
}

#[test]
fn truncated_file_is_format_error() {
    let bytes = encode(&conv_net(1));
    for cut in [0, 3, 8, 13, bytes.len() - 1] {
        assert!(
            matches!(decode(&bytes[..cut]), Err(NnError::Format(_))),
            "cut at {cut}"
        );
    }
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(matches!(decode(&wrong_version), Err(NnError::Format(_))));
}

#[test]
fn layer_count_mismatch_is_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&conv_net(2), &path).unwrap();
    let mut bigger = conv_net(3);
    assert!(matches!(
        load_weights(&mut bigger, &path),
        Err(NnError::Shape(_))
    ));
}

proptest! {
    #[test]
    fn encode_decode_preserves_every_bit(vals in proptest::collection::vec(any::<f32>(), 2 * 9 + 2 + 4)) {
        let mut net = {
            let mut b = NetworkBuilder::new(0);
            b.then(LayerSpec::Conv3x3Same { in_channels: 1, out_channels: 2 }).unwrap();
            b.then(LayerSpec::ReLU).unwrap();
            b.then(LayerSpec::batchnorm(1)).unwrap();
            b.build()
        };
        let mut it = vals.iter();
        for layer in net.layers_mut() {
            for t in layer.tensors_mut() {
                for v in t.data_mut() {
                    *v = *it.next().unwrap();
                }
            }
        }
        let bytes = encode(&net);
        let mut copy = net.clone();
        for layer in copy.layers_mut() {
            for t in layer.tensors_mut() {
                t.fill(0.0);
            }
        }
        covct_nn::weights::apply_weights(&mut copy, decode(&bytes).unwrap()).unwrap();
        prop_assert_eq!(encode(&copy), bytes);
    }
}
