//! Deterministic inference over a split and report generation.

use std::collections::BTreeMap;
use std::path::Path;

use super::checkpoint::{load_model, Checkpoint};
use super::data::{prepare_all, PreparedSample};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, evaluate, write_predictions, EvalConfig, EvalReport, Interpolation, IouMode,
    PredictionRecord, SampleBoxes,
};
use crate::model::Model;
use crate::scene::{ClassId, DatasetReader, ReferringSample, Sensor};

pub fn predict_prepared(model: &Model, samples: &[PreparedSample]) -> Result<Vec<PredictionRecord>> {
    samples
        .iter()
        .map(|s| {
            Ok(PredictionRecord {
                sample_id: s.sample_id.clone(),
                boxes: model.predict(&s.input)?,
            })
        })
        .collect()
}

pub fn evaluate_prepared(
    model: &Model,
    samples: &[PreparedSample],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    if samples.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let preds = predict_prepared(model, samples)?;
    let gts: BTreeMap<String, Vec<_>> = samples
        .iter()
        .map(|s| (s.sample_id.clone(), s.referred.clone()))
        .collect();
    Ok((evaluate(&preds, &gts, cfg)?, preds))
}

pub fn evaluate_samples(
    model: &Model,
    samples: &[ReferringSample],
    sensor: Sensor,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    if samples.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    evaluate_prepared(model, &prepare_all(model, samples, sensor)?, cfg)
}

/// Referred-object AP as a fraction: the mean over classes that have
/// ground truth, BEV IoU at `threshold`, 40-point interpolation.
pub fn grounding_ap(preds: &[PredictionRecord], samples: &[PreparedSample], threshold: f64) -> f64 {
    let by_id: BTreeMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let sets: Vec<SampleBoxes> = samples
        .iter()
        .map(|s| SampleBoxes {
            preds: by_id.get(s.sample_id.as_str()).map(|p| p.boxes.clone()).unwrap_or_default(),
            gts: s.referred.clone(),
        })
        .collect();
    let aps: Vec<f64> = ClassId::ALL
        .iter()
        .filter_map(|&c| average_precision(&sets, c, threshold, IouMode::Bev, Interpolation::Forty).ap)
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// `grounding_ap` of `model` on `samples` at BEV IoU 0.5.
pub fn grounding_ap_of(model: &Model, samples: &[ReferringSample], sensor: Sensor) -> Result<f64> {
    let prepared = prepare_all(model, samples, sensor)?;
    let preds = predict_prepared(model, &prepared)?;
    Ok(grounding_ap(&preds, &prepared, 0.5))
}

/// Evaluate a checkpoint on every sample of `dataset`, writing
/// `predictions.jsonl`, `report.json`, and `report.txt` into `out_dir`.
/// When `expected` is given, the checkpoint's model section must match it.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: &Path,
    expected: Option<&crate::model::ModelConfig>,
    eval_cfg: Option<&EvalConfig>,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let (model, meta): (Model, Checkpoint) = load_model(checkpoint)?;
    if let Some(e) = expected {
        meta.check_model_config(e)?;
    }
    let reader = DatasetReader::open(dataset)?;
    let samples: Vec<ReferringSample> = reader
        .sample_ids()
        .iter()
        .map(|id| reader.load(id))
        .collect::<Result<_>>()?;
    let cfg = eval_cfg.unwrap_or(&meta.config.eval);
    let (report, preds) = evaluate_samples(&model, &samples, meta.config.data.sensor, cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_predictions(&dir.join("predictions.jsonl"), &preds)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(dir.join("report.txt"), report.to_table())?;
    }
    Ok(report)
}
