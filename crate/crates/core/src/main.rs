use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use tradar::harness::{ablate, evaluate_checkpoint, train, AblationAxis, Profile, RunConfig, TrainOptions};
use tradar::metrics::monte_carlo::monte_carlo_iou_bev;
use tradar::metrics::rotated_iou_bev;
use tradar::scene::{Box3D, ClassId, Sensor};
use tradar::synth::generate_dataset_from;
use tradar::{Error, Result};

#[derive(Parser)]
#[command(name = "tradar", version, about = "Radar + text 3D referring expression comprehension")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run config; omitted keys take the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` (and clears any split data/init seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Defaults used when no config file is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: ProfileArg,
    #[arg(long, global = true, value_enum)]
    sensor: Option<SensorArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SensorArg {
    Radar1,
    Radar3,
    Radar5,
    Lidar,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// Val scenes continue after the train split's scene indices.
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Overrides the split's scene count.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Train a model; logs one JSON object per line to stderr.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Where to write predictions and reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score each variant of one axis.
    Ablate {
        #[arg(long)]
        axis: String,
        /// Comma-separated; defaults to every variant of the axis.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare exact BEV IoU against Monte-Carlo estimates on random pairs.
    IouCheck {
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Samples per pair (rounded down to a square).
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 2e-3)]
        tolerance: f64,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::profile(match c.profile {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.data_seed = None;
        cfg.init_seed = None;
    }
    if let Some(s) = c.sensor {
        cfg.set_sensor(match s {
            SensorArg::Radar1 => Sensor::Radar1,
            SensorArg::Radar3 => Sensor::Radar3,
            SensorArg::Radar5 => Sensor::Radar5,
            SensorArg::Lidar => Sensor::Lidar,
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    let class = ClassId::ALL[rng.random_range(0..3)];
    let center = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0];
    let dims = [rng.random_range(0.5..5.0), rng.random_range(0.5..3.0), 1.5];
    Box3D::new(class, center, dims, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).expect("valid random box")
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SynthGen { out, split, scenes } => {
            let cfg = load_config(&cli.common)?;
            let val = matches!(split, Split::Val);
            let mut synth = cfg.synth_split(val);
            if let Some(n) = scenes {
                synth.n_scenes = n;
            }
            // Same scene indices the harness uses, so files match in-memory splits.
            let offset = if val { cfg.data.train_scenes as u64 } else { 0 };
            let ids = generate_dataset_from(&synth, offset, &out)?;
            println!("{}", json!({"written": ids.len(), "out": out}));
        }
        Cmd::Train { out } => {
            let cfg = load_config(&cli.common)?;
            let outcome = train(
                &cfg,
                TrainOptions {
                    out_dir: Some(&out),
                    echo: true,
                },
            )?;
            if let Some(r) = &outcome.report {
                print!("{}", r.to_table());
            }
            println!("{}", json!({"checkpoint": outcome.checkpoint}));
        }
        Cmd::Eval { checkpoint, dataset, out } => {
            // Without --config the checkpoint's own settings are used.
            let expected = match &cli.common.config {
                Some(_) => Some(load_config(&cli.common)?),
                None => None,
            };
            let report = evaluate_checkpoint(
                &checkpoint,
                &dataset,
                expected.as_ref().map(|c| &c.model),
                expected.as_ref().map(|c| &c.eval),
                out.as_deref(),
            )?;
            print!("{}", report.to_table());
        }
        Cmd::Ablate { axis, variants, out } => {
            let cfg = load_config(&cli.common)?;
            let axis: AblationAxis = axis.parse()?;
            let variants = if variants.is_empty() {
                axis.all_variants().into_iter().map(String::from).collect()
            } else {
                variants
            };
            let table = ablate(&cfg, axis, &variants, out.as_deref())?;
            print!("{}", table.to_table());
        }
        Cmd::IouCheck { pairs, samples, tolerance } => {
            let seed = cli.common.seed.unwrap_or(0);
            let side = (samples as f64).sqrt() as usize;
            if side == 0 || pairs == 0 {
                return Err(Error::Config("pairs and samples must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for i in 0..pairs {
                let (a, b) = (random_box(&mut rng), random_box(&mut rng));
                let d = (rotated_iou_bev(&a, &b) - monte_carlo_iou_bev(&a, &b, side, seed ^ i as u64)).abs();
                worst = worst.max(d);
            }
            let pass = worst < tolerance;
            println!("{}", json!({"pairs": pairs, "samples": side * side, "max_abs_diff": worst, "pass": pass}));
            if !pass {
                return Err(Error::Validation(format!("max IoU difference {worst} >= {tolerance}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
