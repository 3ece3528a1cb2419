//! One-axis ablations: every variant trains on the same data with the
//! same seeds and is scored on the same validation split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{load_splits, prepare_all};
use super::eval::{grounding_ap, predict_prepared};
use super::train::{train_on, TrainOptions};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{FusionKind, ModelConfig, NeckKind, TextEncoderKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Fusion,
    Neck,
    TextEncoder,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(AblationAxis::Fusion),
            "neck" => Ok(AblationAxis::Neck),
            "text_encoder" => Ok(AblationAxis::TextEncoder),
            _ => Err(Error::Config(format!("unknown ablation axis {s:?}"))),
        }
    }
}

impl AblationAxis {
    /// `base` with the axis set to `variant`.
    pub fn apply(self, base: &ModelConfig, variant: &str) -> Result<ModelConfig> {
        let mut m = base.clone();
        match self {
            AblationAxis::Fusion => m.fusion = variant.parse::<FusionKind>()?,
            AblationAxis::Neck => m.neck = variant.parse::<NeckKind>()?,
            AblationAxis::TextEncoder => m.text_encoder = variant.parse::<TextEncoderKind>()?,
        }
        Ok(m)
    }

    pub fn all_variants(self) -> Vec<&'static str> {
        match self {
            AblationAxis::Fusion => FusionKind::ALL.iter().map(|k| k.name()).collect(),
            AblationAxis::Neck => NeckKind::ALL.iter().map(|k| k.name()).collect(),
            AblationAxis::TextEncoder => vec!["self_attention", "bi_gru"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Referred-object BEV AP@0.5, as a fraction.
    pub grounding_ap: f64,
    /// Per-region `(label, mAP, mAOS)`, percentages.
    pub regions: Vec<(String, Option<f64>, Option<f64>)>,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["variant".to_string(), "ap_bev50".to_string()];
        if let Some(r) = self.rows.first() {
            for (label, _, _) in &r.regions {
                c.push(format!("{label}_mAP"));
                c.push(format!("{label}_mAOS"));
            }
        }
        c.push("final_loss".to_string());
        c
    }

    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let cols = self.columns();
        let mut s = String::new();
        let _ = write!(s, "{:<18}", cols[0]);
        for c in &cols[1..] {
            let _ = write!(s, " {c:>10}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<18} {:>10.4}", r.variant, r.grounding_ap);
            for (_, map, maos) in &r.regions {
                let _ = write!(s, " {:>10} {:>10}", cell(*map), cell(*maos));
            }
            let _ = writeln!(s, " {:>10.4}", r.final_loss);
        }
        s
    }
}

pub fn ablate(base: &RunConfig, axis: AblationAxis, variants: &[String], out_dir: Option<&Path>) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants given".into()));
    }
    let configs: Vec<RunConfig> = variants
        .iter()
        .map(|v| {
            let cfg = RunConfig {
                model: axis.apply(&base.model, v)?,
                ..base.clone()
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<_>>()?;
    let splits = load_splits(base)?;
    if splits.val.is_empty() {
        return Err(Error::Validation("ablation needs a validation split".into()));
    }
    let mut rows = Vec::new();
    for (v, cfg) in variants.iter().zip(&configs) {
        let dir = out_dir.map(|d| d.join(v));
        let out = train_on(
            cfg,
            &splits.train,
            &splits.val,
            TrainOptions {
                out_dir: dir.as_deref(),
                echo: false,
            },
        )?;
        let val = prepare_all(&out.model, &splits.val, cfg.data.sensor)?;
        let preds = predict_prepared(&out.model, &val)?;
        let gts = val.iter().map(|s| (s.sample_id.clone(), s.referred.clone())).collect();
        let report = evaluate(&preds, &gts, &cfg.eval)?;
        rows.push(AblationRow {
            variant: v.clone(),
            grounding_ap: grounding_ap(&preds, &val, 0.5),
            regions: report.regions.iter().map(|r| (r.region.clone(), r.map, r.maos)).collect(),
            final_loss: out.epochs.last().map_or(f64::NAN, |e| e.loss_total),
        });
    }
    let table = AblationTable { axis, rows };
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
        std::fs::write(d.join("ablation.txt"), table.to_table())?;
    }
    Ok(table)
}
