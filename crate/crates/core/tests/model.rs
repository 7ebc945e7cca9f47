use ndarray::{Array1, Array2};

use intentlab::error::Error;
use intentlab::nn::model::*;
use intentlab::nn::tape::Tape;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dims() -> ModelDims {
    ModelDims { d_in: 5, encoder_hidden: vec![6, 4], d_f: 3, proj_hidden: 4, d_z: 2, order_hidden: 4, perm_hidden: 5 }
}

#[test]
fn zero_params_give_zero_outputs() {
    let p = ModelParams::zeros(&small_dims(), 0.1).unwrap();
    let x = array![1.0, -2.0, 0.5, 3.0, 0.0];
    assert_eq!(p.encode(x.view()).unwrap(), Array1::<f64>::zeros(3));
    let f = array![0.3, 0.1, -0.2];
    assert_eq!(p.project(f.view()).unwrap(), Array1::<f64>::zeros(2));
    assert_eq!(p.order_logit(f.view(), f.view()).unwrap(), 0.0);
}

#[test]
fn shapes_follow_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = ModelParams::init(&ModelDims::default(), 0.1, &mut rng).unwrap();
    assert_eq!(p.d_in(), 32);
    assert_eq!(p.d_f(), 32);
    assert_eq!(p.d_z(), 16);
    let f = p.encode(Array1::zeros(32).view()).unwrap();
    assert_eq!(p.project(f.view()).unwrap().len(), 16);
    assert!(p.encode(Array1::zeros(31).view()).is_err());
    let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "encoder.0.weight");
    assert_eq!(names.len(), 2 * (3 + 2 + 2 + 2));
}

#[test]
fn identical_inputs_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = ModelParams::init(&small_dims(), 0.1, &mut rng).unwrap();
    let x = Array2::from_shape_fn((4, 5), |(_, j)| j as f64 * 0.3);
    let f = p.encode_rows(&x).unwrap();
    for r in 1..4 {
        assert_eq!(f.row(r), f.row(0));
    }
}

#[test]
fn order_logit_is_not_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = ModelParams::init(&small_dims(), 0.1, &mut rng).unwrap();
    let a = array![0.4, -0.3, 0.9];
    let b = array![-0.5, 0.2, 0.1];
    let ab = p.order_logit(a.view(), b.view()).unwrap();
    let ba = p.order_logit(b.view(), a.view()).unwrap();
    assert!((ab + ba).abs() > 1e-6);
}

#[test]
fn tape_forward_matches_plain_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ModelParams::init(&small_dims(), 0.1, &mut rng).unwrap();
    let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.2);
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let xv = tape.leaf(x.clone());
    let f = bound.encoder.forward(&tape, xv);
    let plain = p.encode_rows(&x).unwrap();
    assert!((&*tape.value(f) - &plain).iter().all(|d| d.abs() < 1e-15));
}

#[test]
fn rejects_bad_temperature() {
    assert!(matches!(ModelParams::zeros(&small_dims(), 0.0), Err(Error::NonPositiveTemperature(_))));
}
