//! Synthetic videos with a latent regime change.
//!
//! Each video follows an 8-dimensional latent trajectory. Before the
//! transition the state moves by a constant step along a random unit
//! direction; from the clip containing the transition onwards the direction
//! is re-drawn and the step grows by a factor `1 + regime_shift`. A clip
//! observes its mid-clip latent state and the displacement across the clip,
//! both pushed through one random linear map shared by the whole dataset,
//! plus isotropic noise.
//!
//! Pre- and post-transition directions come from the same isotropic law, so
//! with `regime_shift = 0` the two regimes are indistinguishable clip by
//! clip. With a positive shift they differ only in step length, which is an
//! even function of the raw features: no linear read-out of the raw input
//! separates them.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{read_jsonl, read_pretrain_jsonl, write_jsonl, Split, UnlabeledVideo, VideoRecord};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 8;
/// Seconds per row of a generated video.
pub const CLIP_STRIDE: f64 = 1.0;
/// Standard deviation of the initial latent state.
pub const INITIAL_SPREAD: f64 = 1.0;
/// Latent step per clip before the transition.
pub const BASE_STEP: f64 = 0.3;

const MAP_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub d_in: usize,
    pub n_range: (usize, usize),
    pub transition_quantile_range: (f64, f64),
    pub noise_sigma: f64,
    pub regime_shift: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            d_in: 32,
            n_range: (12, 24),
            transition_quantile_range: (0.3, 0.7),
            noise_sigma: 0.05,
            regime_shift: 4.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let (min, max) = self.n_range;
        let (lo, hi) = self.transition_quantile_range;
        if self.d_in == 0 {
            return Err(Error::InvalidConfig("d_in must be positive".into()));
        }
        if min < 4 || min > max {
            return Err(Error::InvalidConfig(format!("n_range must satisfy 4 <= min <= max, got ({min}, {max})")));
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "transition_quantile_range must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        if !(self.regime_shift >= 0.0) || !self.regime_shift.is_finite() {
            return Err(Error::InvalidConfig(format!("regime_shift must be nonnegative, got {}", self.regime_shift)));
        }
        Ok(())
    }

    /// True when pre- and post-transition clips share one distribution.
    pub fn is_no_signal(&self) -> bool {
        self.regime_shift == 0.0
    }
}

/// Per-video generator stream, independent of generation order.
pub fn video_rng(seed: u64, video_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(video_index);
    rng
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..LATENT_DIM).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// A generator bound to one dataset's observation map.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GenConfig,
    /// `d_in x 2 * LATENT_DIM`
    obs_map: Array2<f64>,
}

impl Generator {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = video_rng(cfg.seed, MAP_STREAM);
        let scale = 1.0 / ((2 * LATENT_DIM) as f64).sqrt();
        let obs_map = Array2::from_shape_fn((cfg.d_in, 2 * LATENT_DIM), |_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            scale * e
        });
        Ok(Generator { cfg, obs_map })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn video<R: Rng + ?Sized>(&self, id: String, split: Split, rng: &mut R) -> VideoRecord {
        let cfg = &self.cfg;
        let (min, max) = cfg.n_range;
        let n = rng.random_range(min..=max);
        let end = n as f64 * CLIP_STRIDE;
        let (lo, hi) = cfg.transition_quantile_range;
        let t_a = end * rng.random_range(lo..hi);

        let mut state: Array1<f64> = (0..LATENT_DIM)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                INITIAL_SPREAD * e
            })
            .collect::<Vec<f64>>()
            .into();
        let pre = unit_direction(rng) * BASE_STEP;
        let post = unit_direction(rng) * (BASE_STEP * (1.0 + cfg.regime_shift));

        let mut features = Array2::zeros((n, cfg.d_in));
        let mut latent = Array1::zeros(2 * LATENT_DIM);
        for r in 0..n {
            let clip_start = r as f64 * CLIP_STRIDE;
            let before = ((t_a - clip_start) / CLIP_STRIDE).clamp(0.0, 1.0);
            let step = &pre * before + &post * (1.0 - before);
            for k in 0..LATENT_DIM {
                latent[k] = state[k] + 0.5 * step[k];
                latent[LATENT_DIM + k] = step[k];
            }
            let mut row = self.obs_map.dot(&latent);
            if cfg.noise_sigma > 0.0 {
                row.mapv_inplace(|x| {
                    let e: f64 = StandardNormal.sample(rng);
                    x + cfg.noise_sigma * e
                });
            }
            features.row_mut(r).assign(&row);
            state += &step;
        }
        VideoRecord { id, features, clip_stride: CLIP_STRIDE, transition: Some(t_a), split }
    }
}

/// Generates one video from a fresh generator for `cfg`.
pub fn generate_video<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<VideoRecord> {
    let gen = Generator::new(cfg.clone())?;
    Ok(gen.video("video-0".into(), Split::LabeledTest, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub pretrain: usize,
    pub labeled_train: usize,
    pub labeled_test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts { pretrain: 600, labeled_train: 200, labeled_test: 200 }
    }
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.pretrain + self.labeled_train + self.labeled_test
    }
}

/// Three disjoint splits. The pretraining split is only reachable through
/// [`Dataset::pretrain_view`], which drops the transition annotation.
#[derive(Clone, Debug)]
pub struct Dataset {
    pretrain: Vec<VideoRecord>,
    pub labeled_train: Vec<VideoRecord>,
    pub labeled_test: Vec<VideoRecord>,
}

impl Dataset {
    pub fn from_splits(
        pretrain: Vec<UnlabeledVideo>,
        labeled_train: Vec<VideoRecord>,
        labeled_test: Vec<VideoRecord>,
    ) -> Self {
        let pretrain = pretrain
            .into_iter()
            .map(|v| VideoRecord {
                id: v.id,
                features: v.features,
                clip_stride: v.clip_stride,
                transition: None,
                split: Split::PretrainUnlabeled,
            })
            .collect();
        Dataset { pretrain, labeled_train, labeled_test }
    }

    pub fn pretrain_len(&self) -> usize {
        self.pretrain.len()
    }

    pub fn pretrain_view(&self) -> Vec<UnlabeledVideo> {
        self.pretrain.iter().map(VideoRecord::to_unlabeled).collect()
    }

    pub fn len(&self) -> usize {
        self.pretrain.len() + self.labeled_train.len() + self.labeled_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `pretrain.jsonl`, `labeled_train.jsonl` and `labeled_test.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_jsonl(&dir.join(split_file(Split::PretrainUnlabeled)), &self.pretrain)?;
        write_jsonl(&dir.join(split_file(Split::LabeledTrain)), &self.labeled_train)?;
        write_jsonl(&dir.join(split_file(Split::LabeledTest)), &self.labeled_test)
    }

    /// Reads the three split files; the pretraining split loses its
    /// annotations on the way in.
    pub fn load(dir: &Path) -> Result<Self> {
        let files = Split::ALL.map(|s| dir.join(split_file(s)));
        if let Some(missing) = files.iter().find(|p| !p.is_file()) {
            return Err(Error::DatasetNotFound(missing.clone()));
        }
        Ok(Dataset::from_splits(read_pretrain_jsonl(&files[0])?, read_jsonl(&files[1])?, read_jsonl(&files[2])?))
    }
}

pub fn split_file(split: Split) -> String {
    format!("{}.jsonl", split.file_stem())
}

/// Generates all three splits. Video `i` (counted across splits in the order
/// pretrain, labeled train, labeled test) draws from stream `i` of the
/// dataset seed, so the output does not depend on the thread count.
pub fn generate_dataset(cfg: &GenConfig, counts: SplitCounts) -> Result<Dataset> {
    let gen = Generator::new(cfg.clone())?;
    let make = |split: Split, offset: usize, count: usize| -> Vec<VideoRecord> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = video_rng(cfg.seed, (offset + i) as u64);
                let id = format!("{}-{:05}", split.file_stem(), i);
                gen.video(id, split, &mut rng)
            })
            .collect()
    };
    let pretrain = make(Split::PretrainUnlabeled, 0, counts.pretrain);
    let labeled_train = make(Split::LabeledTrain, counts.pretrain, counts.labeled_train);
    let labeled_test = make(Split::LabeledTest, counts.pretrain + counts.labeled_train, counts.labeled_test);
    Ok(Dataset { pretrain, labeled_train, labeled_test })
}
