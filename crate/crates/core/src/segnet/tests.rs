use rand::Rng;

use super::*;
use crate::numcore::{grad_check, GradCheckConfig, Tensor};
use crate::rng::stream;

fn rand_tensor(shape: &[usize], seed: u64, purpose: &str) -> Tensor<f64> {
    let mut r = stream(seed, purpose, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny() -> BackboneConfig {
    BackboneConfig {
        widths: vec![3, 4],
        convs_per_stage: 1,
        kernel: 3,
        output_stride: 2,
        in_channels: 3,
    }
}

#[test]
fn default_backbone_shape_contract() {
    let cfg = BackboneConfig::default();
    let mut store = ParamStore::<f32>::new();
    cfg.register(&mut store, 0).unwrap();
    let mut tape = Tape::new();
    let img = tape.constant(Tensor::full(&[64, 64, 3], 0.5));
    let out = backbone_forward(&mut tape, &store, &cfg, img).unwrap();
    assert_eq!(tape.shape(out), [16, 16, 64]);
}

#[test]
fn output_strides_downsample_the_last_stages() {
    for (s, side) in [(1, 16), (2, 8), (4, 4), (8, 2)] {
        let cfg = BackboneConfig {
            output_stride: s,
            ..BackboneConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        cfg.register(&mut store, 0).unwrap();
        let mut tape = Tape::new();
        let img = tape.constant(Tensor::full(&[16, 16, 3], 0.1));
        let out = backbone_forward(&mut tape, &store, &cfg, img).unwrap();
        assert_eq!(tape.shape(out), [side, side, 64], "stride {s}");
    }
    let cfg = BackboneConfig {
        output_stride: 16,
        ..BackboneConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn indivisible_resolution_is_dimension_error() {
    let cfg = BackboneConfig::default();
    let mut store = ParamStore::<f64>::new();
    cfg.register(&mut store, 0).unwrap();
    let mut tape = Tape::new();
    let img = tape.constant(Tensor::full(&[10, 12, 3], 0.1));
    assert!(matches!(
        backbone_forward(&mut tape, &store, &cfg, img),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn zero_weights_give_zero_features() {
    let cfg = BackboneConfig::default();
    let mut store = ParamStore::<f64>::new();
    cfg.register(&mut store, 0).unwrap();
    for p in store.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut tape = Tape::new();
    let img = tape.constant(rand_tensor(&[16, 16, 3], 1, "img"));
    let out = backbone_forward(&mut tape, &store, &cfg, img).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let cfg = tiny();
    for seed in 1..=5 {
        let mut store = ParamStore::<f64>::new();
        cfg.register(&mut store, seed).unwrap();
        // Nonzero biases so the bias path is exercised.
        for name in [BackboneConfig::bias_name(0, 0), BackboneConfig::bias_name(1, 0)] {
            let p = store.by_name_mut(&name).unwrap();
            p.value = rand_tensor(p.value.shape(), seed, &name).map(|v| 0.1 * v);
        }
        store.insert("input", rand_tensor(&[8, 8, 3], seed, "img")).unwrap();
        let probe = rand_tensor(&[4, 4, 4], seed, "probe");
        let cfg_gc = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut store,
            |tape, store| {
                let x = tape.param_named(store, "input")?;
                let out = backbone_forward(tape, store, &cfg, x)?;
                let p = tape.constant(probe.clone());
                let m = tape.mul(out, p)?;
                Ok(tape.sum(m))
            },
            &cfg_gc,
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.worst());
    }
}

#[test]
fn classifier_widths_follow_label_counts() {
    let tax = crate::taxonomy::LabelTaxonomy::shipped();
    let mut store = ParamStore::<f64>::new();
    for id in ["coarse", "fine"] {
        register_classifier(&mut store, id, 8, tax.num_labels(id).unwrap(), 0).unwrap();
    }
    let mut tape = Tape::new();
    let f = tape.constant(rand_tensor(&[4, 4, 8], 0, "f"));
    let c = classify(&mut tape, &store, f, "coarse").unwrap();
    let fi = classify(&mut tape, &store, f, "fine").unwrap();
    assert_eq!(tape.shape(c), [4, 4, 7]);
    assert_eq!(tape.shape(fi), [4, 4, 20]);
}

#[test]
fn zero_classifier_gives_uniform_softmax() {
    let mut store = ParamStore::<f64>::new();
    register_classifier(&mut store, "a", 5, 7, 0).unwrap();
    store.by_name_mut("head.a.weight").unwrap().value = Tensor::zeros(&[5, 7]);
    let mut tape = Tape::new();
    let f = tape.constant(rand_tensor(&[3, 3, 5], 0, "f"));
    let logits = classify(&mut tape, &store, f, "a").unwrap();
    let p = tape.softmax(logits, 2).unwrap();
    assert!(tape
        .value(p)
        .data()
        .iter()
        .all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
}

#[test]
fn unknown_classifier_is_config_error() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::zeros(&[2, 2, 3]));
    assert!(matches!(
        classify(&mut tape, &store, f, "nope"),
        Err(Error::Config(_))
    ));
}

#[test]
fn classify_and_upsample_gradients_match_finite_differences() {
    for seed in 1..=5 {
        let mut store = ParamStore::<f64>::new();
        register_classifier(&mut store, "a", 4, 7, seed).unwrap();
        store.by_name_mut("head.a.bias").unwrap().value = rand_tensor(&[7], seed, "b");
        store.insert("f", rand_tensor(&[3, 2, 4], seed, "f")).unwrap();
        let probe = rand_tensor(&[6, 8, 7], seed, "probe");
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut store,
            |tape, store| {
                let f = tape.param_named(store, "f")?;
                let l = classify(tape, store, f, "a")?;
                let u = upsample_bilinear(tape, l, 6, 8)?;
                let p = tape.constant(probe.clone());
                let m = tape.mul(u, p)?;
                Ok(tape.sum(m))
            },
            &cfg,
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.worst());
    }
}

#[test]
fn argmax_ignores_constant_logit_shift() {
    let t = rand_tensor(&[5, 5, 7], 3, "l");
    let shifted = t.map(|v| v + 12.5);
    assert_eq!(argmax_channels(t.data(), 7), argmax_channels(shifted.data(), 7));
}
