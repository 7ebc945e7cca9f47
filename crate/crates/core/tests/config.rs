use std::path::PathBuf;

use intentlab::config::*;
use intentlab::datamodel::Split;
use intentlab::error::Error;
use intentlab::evaluation::Regime;
use intentlab::losses::LossMode;
use intentlab::sampling::NegativeScope;
use intentlab::synthgen::{split_file, Dataset, SplitCounts};

fn small() -> RunConfig {
    let mut cfg =
        RunConfig { counts: SplitCounts { pretrain: 6, labeled_train: 3, labeled_test: 2 }, ..RunConfig::default() };
    cfg.gen.d_in = 8;
    cfg.pretrain.dims.d_in = 8;
    cfg
}

#[test]
fn defaults_validate() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.pretrain.temperature, 0.1);
    assert_eq!(cfg.pretrain.batch_size, 16);
    assert_eq!(cfg.pretrain.scope, NegativeScope::Global);
    assert_eq!(cfg.pretrain.mode, LossMode::Combined);
    assert_eq!(cfg.eval.settings.len(), 3);
    assert_eq!(cfg.eval.settings[2].regime, Regime::Finetuned);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = RunConfig::default();
    c.pretrain.dims.d_in = 7;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    let mut c = RunConfig::default();
    c.pretrain.temperature = 0.0;
    assert!(matches!(c.validate(), Err(Error::NonPositiveTemperature(_))));
    let mut c = RunConfig::default();
    c.eval.settings[0].labeled_fraction = 0.0;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    let mut c = RunConfig::default();
    c.pretrain.batch_size = 0;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
}

#[test]
fn toml_and_json_round_trip() {
    let mut cfg = RunConfig { seed: 42, ..RunConfig::default() };
    cfg.pretrain.mode = LossMode::CombinedPermutation;
    cfg.pretrain.scope = NegativeScope::Local;
    cfg.gen.noise_sigma = 0.1234567890123;
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    let json: RunConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
    assert_eq!(json.digest(), cfg.digest());
    assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::InvalidConfig(_))));
}

#[test]
fn partial_toml_takes_defaults() {
    let cfg = RunConfig::from_toml("seed = 3\n[pretrain]\nsteps = 10\nmode = \"ord_only\"\n").unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.pretrain.steps, 10);
    assert_eq!(cfg.pretrain.mode, LossMode::OrdOnly);
    assert_eq!(cfg.gen, RunConfig::default().gen);
}

#[test]
fn digest_tracks_content_not_location() {
    let a = RunConfig::default();
    let mut b = a.clone();
    b.out_dir = PathBuf::from("/elsewhere");
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.digest().len(), 64);
    let mut c = a.clone();
    c.seed = 1;
    assert_ne!(a.digest(), c.digest());
    let mut d = a.clone();
    d.pretrain.lr = 2e-3;
    assert_ne!(a.digest(), d.digest());
    assert_eq!(a.data_digest(), d.data_digest());
    assert_eq!(a.digest(), RunConfig::default().digest());
}

#[test]
fn load_reports_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(RunConfig::load(&dir.path().join("nope.toml")), Err(Error::Io { .. })));
    let path = dir.path().join("run.toml");
    std::fs::write(&path, small().to_toml()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), small());
}

#[test]
fn dataset_manifest_is_stable() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (data, m1) = write_dataset(&cfg, a.path()).unwrap();
    let (_, m2) = write_dataset(&cfg, b.path()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.config_digest, cfg.data_digest());
    assert!(!m1.no_signal);
    assert_eq!(m1.files.len(), 3);
    for split in Split::ALL {
        let name = split_file(split);
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
    assert_eq!(read_manifest(a.path()).unwrap(), m1);
    let loaded = Dataset::load(a.path()).unwrap();
    assert_eq!(loaded.labeled_test, data.labeled_test);
    assert_eq!(loaded.pretrain_view(), data.pretrain_view());
}

#[test]
fn no_signal_is_flagged() {
    let mut cfg = small();
    cfg.gen.regime_shift = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let (_, m) = write_dataset(&cfg, dir.path()).unwrap();
    assert!(m.no_signal);
}

#[test]
fn dataset_needs_existing_directory() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    assert!(matches!(write_dataset(&small(), &missing), Err(Error::Io { .. })));
    assert!(!missing.exists());
    assert!(matches!(read_manifest(dir.path()), Err(Error::DatasetNotFound(_))));
}
