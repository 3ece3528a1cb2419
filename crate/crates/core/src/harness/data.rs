//! Train/validation split loading and per-sample preprocessing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{HeadTargets, Model, SampleInput};
use crate::scene::{Box3D, DatasetReader, PointCloud, ReferringSample, Sensor};
use crate::synth::generate_samples;

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<ReferringSample>,
    pub val: Vec<ReferringSample>,
}

fn read_all(root: &std::path::Path) -> Result<Vec<ReferringSample>> {
    let reader = DatasetReader::open(root)?;
    reader.sample_ids().iter().map(|id| reader.load(id)).collect()
}

/// Load both splits from disk, or generate them: training scenes use
/// indices `0..train_scenes`, validation scenes the indices after that.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    match &cfg.data.train_root {
        Some(root) => Ok(Splits {
            train: read_all(root)?,
            val: match &cfg.data.val_root {
                Some(v) => read_all(v)?,
                None => Vec::new(),
            },
        }),
        None => {
            let train = generate_samples(&cfg.synth_split(false), 0)?;
            let val = if cfg.data.val_scenes == 0 {
                Vec::new()
            } else {
                generate_samples(&cfg.synth_split(true), cfg.data.train_scenes as u64)?
            };
            Ok(Splits { train, val })
        }
    }
}

/// The cloud the model consumes for `sensor`.
pub fn cloud_for(sample: &ReferringSample, sensor: Sensor) -> Result<&PointCloud> {
    if sensor.is_lidar() {
        sample.lidar.as_ref().ok_or_else(|| {
            Error::Validation(format!("sample {} has no LiDAR cloud", sample.sample_id))
        })
    } else {
        Ok(&sample.radar)
    }
}

#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub sample_id: String,
    pub input: SampleInput,
    pub targets: HeadTargets,
    pub referred: Vec<Box3D>,
}

pub fn prepare(model: &Model, sample: &ReferringSample, sensor: Sensor) -> Result<PreparedSample> {
    let referred = sample.referred_boxes();
    Ok(PreparedSample {
        sample_id: sample.sample_id.clone(),
        input: model.prepare(cloud_for(sample, sensor)?, &sample.prompt)?,
        targets: model.targets(&referred),
        referred,
    })
}

pub fn prepare_all(model: &Model, samples: &[ReferringSample], sensor: Sensor) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| prepare(model, s, sensor)).collect()
}

/// Copy of `samples` with the prompts permuted among them by `seed`;
/// clouds and referred boxes stay in place.
pub fn shuffle_prompts(samples: &[ReferringSample], seed: u64) -> Vec<ReferringSample> {
    let mut prompts: Vec<String> = samples.iter().map(|s| s.prompt.clone()).collect();
    prompts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    samples
        .iter()
        .zip(prompts)
        .map(|(s, prompt)| ReferringSample {
            prompt,
            ..s.clone()
        })
        .collect()
}
