//! Minibatch training with AdamW, a cosine schedule, global-norm
//! clipping, JSON-line logs, and periodic checkpoints.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{load_splits, prepare_all, PreparedSample};
use super::eval::evaluate_prepared;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Model, Vocab};
use crate::nn::optim::{clip_global_norm, AdamW};
use crate::nn::{Graph, Tensor};
use crate::scene::ReferringSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_hm: f64,
    pub loss_reg: f64,
    /// Mean pre-clip gradient norm over the epoch's steps.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
    /// Validation report after the last epoch, when a validation split
    /// exists.
    pub report: Option<EvalReport>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Checkpoints, `train_log.jsonl`, and `report.json` go here.
    pub out_dir: Option<&'a Path>,
    /// Also echo each log line to stderr.
    pub echo: bool,
}

/// Stream used for the batch order of `epoch`, disjoint from the
/// parameter-init stream.
fn order_rng(init_seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(init_seed);
    r.set_stream(1 + epoch as u64);
    r
}

struct Logger {
    file: Option<File>,
    echo: bool,
}

impl Logger {
    fn line(&mut self, value: &serde_json::Value) -> Result<()> {
        let s = serde_json::to_string(value)?;
        if let Some(f) = &mut self.file {
            writeln!(f, "{s}")?;
        }
        if self.echo {
            eprintln!("{s}");
        }
        Ok(())
    }
}

/// Load or generate the data named by `cfg`, then train.
pub fn train(cfg: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    train_on(cfg, &splits.train, &splits.val, opts)
}

/// Build a fresh model for `train` samples: vocabulary from their prompts,
/// point fields from the configured sensor's cloud.
pub fn init_model(cfg: &RunConfig, train: &[ReferringSample]) -> Result<Model> {
    let first = train
        .first()
        .ok_or_else(|| Error::Validation("training split is empty".into()))?;
    let fields = super::data::cloud_for(first, cfg.data.sensor)?.dim();
    let vocab = Vocab::from_corpus(train.iter().map(|s| s.prompt.as_str()));
    Model::new(cfg.model.clone(), vocab, fields, cfg.init_seed())
}

/// Mean loss and summed gradients of one batch.
fn batch_step(model: &Model, batch: &[&PreparedSample]) -> Result<([f64; 3], Vec<Option<Tensor>>)> {
    let mut grads: Vec<Option<Tensor>> = vec![None; model.store.len()];
    let mut sums = [0.0; 3];
    for s in batch {
        let mut g = Graph::new();
        let l = model.loss(&mut g, &s.input, &s.targets)?;
        sums[0] += g.value(l.total).item();
        sums[1] += g.value(l.heatmap).item();
        sums[2] += g.value(l.regression).item();
        g.backward(l.total).accumulate_into(&mut grads);
    }
    let n = batch.len() as f64;
    for t in grads.iter_mut().flatten() {
        t.scale_in_place(1.0 / n);
    }
    Ok((sums.map(|v| v / n), grads))
}

pub fn train_on(
    cfg: &RunConfig,
    train: &[ReferringSample],
    val: &[ReferringSample],
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = init_model(cfg, train)?;
    let sensor = cfg.data.sensor;
    let train_set = prepare_all(&model, train, sensor)?;
    let val_set = prepare_all(&model, val, sensor)?;

    let mut logger = Logger {
        file: None,
        echo: opts.echo,
    };
    if let Some(dir) = opts.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        logger.file = Some(File::create(dir.join("train_log.jsonl"))?);
    }
    logger.line(&serde_json::json!({
        "event": "start",
        "train_samples": train_set.len(),
        "val_samples": val_set.len(),
        "parameters": model.store.num_scalars(),
        "data_seed": cfg.data_seed(),
        "init_seed": cfg.init_seed(),
    }))?;

    let o = &cfg.optimizer;
    let mut opt = AdamW::new(&model.store, o.adamw());
    let steps_per_epoch = train_set.len().div_ceil(o.batch_size);
    let total_steps = (steps_per_epoch * o.epochs) as f64;
    let mut logs = Vec::with_capacity(o.epochs);
    let mut checkpoint = None;

    for epoch in 0..o.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut order_rng(cfg.init_seed(), epoch));
        let mut sums = [0.0; 3];
        let mut norm_sum = 0.0;
        let mut lr = o.lr;
        for (b, chunk) in order.chunks(o.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_step(&model, &batch)?;
            let finite = loss.iter().all(|v| v.is_finite()) && grads.iter().flatten().all(Tensor::is_finite);
            if !finite {
                let ids: Vec<String> = batch.iter().map(|s| s.sample_id.clone()).collect();
                logger.line(&serde_json::json!({
                    "event": "non_finite_loss",
                    "epoch": epoch,
                    "batch": b,
                    "sample_ids": ids,
                    "loss_total": format!("{}", loss[0]),
                    "loss_hm": format!("{}", loss[1]),
                    "loss_reg": format!("{}", loss[2]),
                }))?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    sample_ids: ids,
                });
            }
            norm_sum += if o.grad_clip > 0.0 {
                clip_global_norm(&mut grads, o.grad_clip)
            } else {
                grads.iter().flatten().map(Tensor::norm_sq).sum::<f64>().sqrt()
            };
            let step = (epoch * steps_per_epoch + b) as f64;
            lr = o.lr_at(step / total_steps);
            opt.step(&mut model.store, &grads, lr);
            for (s, l) in sums.iter_mut().zip(loss) {
                *s += l * batch.len() as f64;
            }
        }
        let n = train_set.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss_total: sums[0] / n,
            loss_hm: sums[1] / n,
            loss_reg: sums[2] / n,
            grad_norm: norm_sum / steps_per_epoch as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        let mut line = serde_json::to_value(&log)?;
        line["event"] = "epoch".into();
        logger.line(&line)?;
        logs.push(log);

        if let Some(dir) = opts.out_dir {
            let last = epoch + 1 == o.epochs;
            let periodic = o.checkpoint_every > 0 && (epoch + 1) % o.checkpoint_every == 0;
            if last || periodic {
                let path = dir.join(format!("checkpoint_epoch{:03}.json", epoch + 1));
                Checkpoint::capture(&model, cfg, epoch + 1).save(&path)?;
                if last {
                    let latest = dir.join("checkpoint.json");
                    std::fs::copy(&path, &latest)?;
                    checkpoint = Some(latest);
                }
            }
        }
    }

    let report = if val_set.is_empty() {
        None
    } else {
        let (report, _) = evaluate_prepared(&model, &val_set, &cfg.eval)?;
        if let Some(dir) = opts.out_dir {
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            std::fs::write(dir.join("report.txt"), report.to_table())?;
        }
        Some(report)
    };
    logger.line(&serde_json::json!({ "event": "done", "epochs": logs.len() }))?;
    Ok(TrainOutcome {
        model,
        epochs: logs,
        checkpoint,
        report,
    })
}
