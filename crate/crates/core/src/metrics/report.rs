//! Region- and depth-stratified evaluation of grounding predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, Interpolation, IouMode, SampleBoxes, ScoredBox};
use crate::error::{Error, Result};
use crate::scene::{depth_bucket_of, ClassId, DatasetReader, RegionSpec, TABLE_DEPTH_EDGES};

/// One line of the prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub boxes: Vec<ScoredBox>,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = File::open(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IouThresholds {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for IouThresholds {
    fn default() -> Self {
        IouThresholds {
            car: 0.5,
            pedestrian: 0.25,
            cyclist: 0.25,
        }
    }
}

impl IouThresholds {
    pub fn get(&self, class: ClassId) -> f64 {
        match class {
            ClassId::Car => self.car,
            ClassId::Pedestrian => self.pedestrian,
            ClassId::Cyclist => self.cyclist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: IouThresholds,
    pub regions: Vec<RegionSpec>,
    pub depth_edges: Vec<f64>,
    pub mode: IouMode,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: IouThresholds::default(),
            regions: vec![RegionSpec::eaa(), RegionSpec::dca()],
            depth_edges: TABLE_DEPTH_EDGES.to_vec(),
            mode: IouMode::ThreeD,
            interpolation: Interpolation::Forty,
        }
    }
}

/// Scores are percentages (AP x 100); `None` marks a class without ground
/// truth in the stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: ClassId,
    pub ap: Option<f64>,
    pub aos: Option<f64>,
    pub num_gt: usize,
    pub num_pred: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: String,
    pub classes: Vec<ClassScore>,
    pub map: Option<f64>,
    pub maos: Option<f64>,
}

impl RegionReport {
    pub fn class(&self, class: ClassId) -> &ClassScore {
        &self.classes[class.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub min: f64,
    /// `None` for the open-ended last bucket.
    pub max: Option<f64>,
    pub classes: Vec<ClassScore>,
    pub map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub regions: Vec<RegionReport>,
    pub depth: Vec<DepthReport>,
}

impl EvalReport {
    pub fn region(&self, label: &str) -> Option<&RegionReport> {
        self.regions.iter().find(|r| r.region == label)
    }

    /// Aligned table: one row per region with Car, Pedestrian, Cyclist,
    /// mAP, mAOS; then AP by depth bucket.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10} {:>10} {:>8} {:>8}",
            "Region", "Car", "Pedestrian", "Cyclist", "mAP", "mAOS"
        );
        for r in &self.regions {
            let _ = writeln!(
                s,
                "{:<8} {:>10} {:>10} {:>10} {:>8} {:>8}",
                r.region,
                cell(r.classes[0].ap),
                cell(r.classes[1].ap),
                cell(r.classes[2].ap),
                cell(r.map),
                cell(r.maos)
            );
        }
        if !self.depth.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{:<8} {:>10} {:>10} {:>10} {:>8}",
                "Depth", "Car", "Pedestrian", "Cyclist", "mAP"
            );
            for d in &self.depth {
                let label = match d.max {
                    Some(m) => format!("{}-{}", d.min, m),
                    None => format!("{}+", d.min),
                };
                let _ = writeln!(
                    s,
                    "{:<8} {:>10} {:>10} {:>10} {:>8}",
                    label,
                    cell(d.classes[0].ap),
                    cell(d.classes[1].ap),
                    cell(d.classes[2].ap),
                    cell(d.map)
                );
            }
        }
        s
    }
}

fn mean_present(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn score_classes(samples: &[SampleBoxes], cfg: &EvalConfig) -> Vec<ClassScore> {
    ClassId::ALL
        .iter()
        .map(|&class| {
            let r = average_precision(
                samples,
                class,
                cfg.iou_thresholds.get(class),
                cfg.mode,
                cfg.interpolation,
            );
            ClassScore {
                class,
                ap: r.ap.map(|v| 100.0 * v),
                aos: r.aos.map(|v| 100.0 * v),
                num_gt: r.num_gt,
                num_pred: r.num_pred,
            }
        })
        .collect()
}

/// Evaluate predictions against the referred boxes of each sample. Samples
/// without a prediction record count as empty predictions; records for
/// unknown samples are rejected.
pub fn evaluate(
    preds: &[PredictionRecord],
    gts: &BTreeMap<String, Vec<crate::scene::Box3D>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    for r in &cfg.regions {
        r.validate()?;
    }
    let unknown: BTreeSet<&str> = preds
        .iter()
        .map(|p| p.sample_id.as_str())
        .filter(|id| !gts.contains_key(*id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "predictions for unknown samples: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut by_id: BTreeMap<&str, Vec<ScoredBox>> = BTreeMap::new();
    for p in preds {
        by_id
            .entry(p.sample_id.as_str())
            .or_default()
            .extend(p.boxes.iter().copied());
    }
    let samples: Vec<SampleBoxes> = gts
        .iter()
        .map(|(id, g)| SampleBoxes {
            preds: by_id.get(id.as_str()).cloned().unwrap_or_default(),
            gts: g.clone(),
        })
        .collect();

    let regions = cfg
        .regions
        .iter()
        .map(|region| {
            let filtered: Vec<SampleBoxes> = samples
                .iter()
                .map(|s| SampleBoxes {
                    preds: s.preds.iter().filter(|p| region.contains(&p.bbox)).copied().collect(),
                    gts: s.gts.iter().filter(|g| region.contains(g)).copied().collect(),
                })
                .collect();
            let classes = score_classes(&filtered, cfg);
            RegionReport {
                region: region.name.label().to_string(),
                map: mean_present(classes.iter().map(|c| c.ap)),
                maos: mean_present(classes.iter().map(|c| c.aos)),
                classes,
            }
        })
        .collect();

    let edges = &cfg.depth_edges;
    let mut depth = Vec::new();
    if !edges.is_empty() {
        // Validates the edges once.
        depth_bucket_of(edges[0], edges)?;
        let bucket = |x: f64| depth_bucket_of(x, edges).ok();
        for (bi, &lo) in edges.iter().enumerate() {
            let filtered: Vec<SampleBoxes> = samples
                .iter()
                .map(|s| SampleBoxes {
                    preds: s.preds.iter().filter(|p| bucket(p.bbox.x) == Some(bi)).copied().collect(),
                    gts: s.gts.iter().filter(|g| bucket(g.x) == Some(bi)).copied().collect(),
                })
                .collect();
            let classes = score_classes(&filtered, cfg);
            depth.push(DepthReport {
                min: lo,
                max: edges.get(bi + 1).copied(),
                map: mean_present(classes.iter().map(|c| c.ap)),
                classes,
            });
        }
    }

    Ok(EvalReport {
        num_samples: samples.len(),
        regions,
        depth,
    })
}

/// Load referred boxes for the given ids (all samples when `None`).
pub fn load_ground_truth(
    reader: &DatasetReader,
    ids: Option<&[String]>,
) -> Result<BTreeMap<String, Vec<crate::scene::Box3D>>> {
    let ids: Vec<String> = match ids {
        Some(ids) => ids.to_vec(),
        None => reader.sample_ids(),
    };
    let mut out = BTreeMap::new();
    for id in ids {
        let s = reader.load(&id)?;
        out.insert(id, s.referred_boxes());
    }
    Ok(out)
}

/// Evaluate a prediction dump against the dataset; predictions must name
/// samples present in the dataset, and only those samples are scored.
pub fn evaluate_file(pred_file: &Path, dataset: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let preds = read_predictions(pred_file)?;
    let reader = DatasetReader::open(dataset)?;
    let unknown: Vec<&str> = preds
        .iter()
        .map(|p| p.sample_id.as_str())
        .filter(|id| !reader.contains(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "predictions for unknown samples: {}",
            unknown.join(", ")
        )));
    }
    let ids: Vec<String> = preds
        .iter()
        .map(|p| p.sample_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gts = load_ground_truth(&reader, Some(&ids))?;
    evaluate(&preds, &gts, cfg)
}
