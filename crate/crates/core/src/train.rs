//! Self-supervised pretraining driver.
//!
//! Takes [`UnlabeledVideo`]s only, so transition annotations cannot reach
//! the training loop.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::UnlabeledVideo;
use crate::error::{Error, Result};
use crate::losses::{loss_and_grads, LossMode, LossReport};
use crate::nn::{ModelDims, ModelParams, OptimKind, OptimState};
use crate::sampling::{assemble_batch, usable_videos, NegativeScope};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub dims: ModelDims,
    pub temperature: f64,
    pub optimizer: OptimKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub scope: NegativeScope,
    pub mode: LossMode,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dims: ModelDims::default(),
            temperature: 0.1,
            optimizer: OptimKind::adam(),
            lr: 1e-3,
            steps: 2000,
            batch_size: 16,
            scope: NegativeScope::Global,
            mode: LossMode::Combined,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub log: Vec<StepLog>,
    /// Videos dropped because they admit no triplet.
    pub skipped: usize,
}

/// Freshly initialised parameters for `seed`, the scratch baseline. The
/// pretraining run for the same seed starts from exactly these.
pub fn init_params(cfg: &PretrainConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(&cfg.dims, cfg.temperature, &mut rng)
}

pub fn pretrain(videos: &[UnlabeledVideo], cfg: &PretrainConfig, seed: u64) -> Result<PretrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut params = init_params(cfg, seed)?;
    // Initialisation and sampling draw from separate streams.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut opt = OptimState::new(cfg.optimizer, cfg.lr)?;

    let usable = usable_videos(videos, cfg.scope);
    let skipped = videos.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::VideoTooShort {
            id: "<all>".into(),
            reason: "no pretraining video admits a triplet".into(),
        });
    }
    let k = cfg.batch_size.min(usable.len());
    if k < cfg.batch_size {
        warn!("batch size reduced from {} to {k}: not enough usable videos", cfg.batch_size);
    }

    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let chosen: Vec<&UnlabeledVideo> =
            sample(&mut rng, usable.len(), k).into_iter().map(|i| &videos[usable[i]]).collect();
        let batch = assemble_batch(&chosen, cfg.scope, &mut rng)?;
        let (report, grads) = loss_and_grads(&batch, &params, cfg.mode, &mut rng)?;
        opt.apply(&mut params.tensors_mut(), &grads)?;
        log.push(StepLog { step, report });
    }
    Ok(PretrainOutcome { params, log, skipped })
}
