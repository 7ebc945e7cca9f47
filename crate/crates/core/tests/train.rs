use intentlab::datamodel::UnlabeledVideo;
use intentlab::nn::ModelDims;
use intentlab::synthgen::{generate_dataset, GenConfig, SplitCounts};
use intentlab::train::*;

fn small_cfg() -> PretrainConfig {
    PretrainConfig {
        dims: ModelDims {
            d_in: 32,
            encoder_hidden: vec![16],
            d_f: 8,
            proj_hidden: 8,
            d_z: 4,
            order_hidden: 8,
            perm_hidden: 8,
        },
        steps: 30,
        batch_size: 4,
        ..Default::default()
    }
}

fn videos() -> Vec<UnlabeledVideo> {
    let counts = SplitCounts { pretrain: 12, labeled_train: 1, labeled_test: 1 };
    generate_dataset(&GenConfig::default(), counts).unwrap().pretrain_view()
}

#[test]
fn log_has_one_row_per_step_and_is_reproducible() {
    let v = videos();
    let a = pretrain(&v, &small_cfg(), 3).unwrap();
    assert_eq!(a.log.len(), 30);
    assert_eq!(a.skipped, 0);
    let b = pretrain(&v, &small_cfg(), 3).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.last().unwrap().report.l_total.to_bits(), b.log.last().unwrap().report.l_total.to_bits());
    assert_ne!(a.params, init_params(&small_cfg(), 3).unwrap());
}

#[test]
fn short_videos_are_skipped() {
    let mut v = videos();
    v[0].features = v[0].features.slice(ndarray::s![..3, ..]).to_owned();
    let out = pretrain(&v, &small_cfg(), 1).unwrap();
    assert_eq!(out.skipped, 1);
}

#[test]
fn fifty_steps_reproduce_bit_exactly() {
    let v = videos();
    let cfg = PretrainConfig { steps: 50, batch_size: 8, ..Default::default() };
    let a = pretrain(&v, &cfg, 11).unwrap();
    let b = pretrain(&v, &cfg, 11).unwrap();
    assert_eq!(a.log.len(), 50);
    assert_eq!(a.log, b.log);
    assert!(a.log.iter().all(|s| s.report.l_total.is_finite() && s.report.pair_count == 24));
}

#[test]
fn loss_decreases_on_default_data() {
    let data = generate_dataset(&GenConfig::default(), SplitCounts::default()).unwrap();
    let out = pretrain(&data.pretrain_view(), &PretrainConfig::default(), 0).unwrap();
    let tenth = out.log.len() / 10;
    let mean = |s: &[StepLog]| s.iter().map(|l| l.report.l_total).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&out.log[..tenth]), mean(&out.log[out.log.len() - tenth..]));
    assert!(last < first, "first 10% {first}, last 10% {last}");
}
