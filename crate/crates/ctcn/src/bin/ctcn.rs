//! Command-line front end. All logic lives in the library; this binary
//! parses arguments, loads config, and prints one-line errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctcn::error::{CtcnError, Result};
use ctcn::network::Variant;
use ctcn::pipeline::{run_eval, run_predict, run_train, EvalMode};
use ctcn::synth::{synth_dataset, SyntheticSpec};
use ctcn::train::{pipeline_gradient_check, RunConfig};

#[derive(Parser)]
#[command(name = "ctcn", about = "Temporal action localization toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Declarative config file: JSON (a full RunConfig) or key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Operator family override: ctcn, tcn or group_tcn:<groups>.
    #[arg(long)]
    variant: Option<String>,
    /// Residual blocks per stage override.
    #[arg(long)]
    depth: Option<usize>,
    /// Temporal random move augmentation.
    #[arg(long, value_parser = parse_on_off)]
    aug_move: Option<bool>,
    /// Random crop augmentation.
    #[arg(long, value_parser = parse_on_off)]
    aug_crop: Option<bool>,
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    if s == "ctcn" {
        return Ok(Variant::Ctcn);
    }
    if s == "tcn" {
        return Ok(Variant::Tcn);
    }
    if let Some(g) = s.strip_prefix("group_tcn:") {
        let g: usize = g
            .parse()
            .map_err(|_| CtcnError::InvalidArgument(format!("bad group count in '{s}'")))?;
        return Ok(Variant::GroupTcn(g));
    }
    Err(CtcnError::InvalidArgument(format!(
        "unknown variant '{s}' (expected ctcn, tcn or group_tcn:<groups>)"
    )))
}

fn apply_kv(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| CtcnError::InvalidArgument(format!("bad value '{value}' for {what}"));
    match key {
        "learning_rate" | "lr" => {
            cfg.optimizer.learning_rate = value.parse().map_err(|_| bad(key))?
        }
        "momentum" => cfg.optimizer.momentum = value.parse().map_err(|_| bad(key))?,
        "weight_decay" => cfg.optimizer.weight_decay = value.parse().map_err(|_| bad(key))?,
        "batch_size" => cfg.optimizer.batch_size = value.parse().map_err(|_| bad(key))?,
        "epochs" => cfg.optimizer.epochs = value.parse().map_err(|_| bad(key))?,
        "lr_drop_epoch" => cfg.optimizer.lr_drop_epoch = value.parse().map_err(|_| bad(key))?,
        "lr_drop_ratio" => cfg.optimizer.lr_drop_ratio = value.parse().map_err(|_| bad(key))?,
        "patience" => cfg.optimizer.patience = value.parse().map_err(|_| bad(key))?,
        "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
        "input_snippets" | "t0" => {
            cfg.network.input_snippets = value.parse().map_err(|_| bad(key))?
        }
        "concepts" => cfg.network.concepts = value.parse().map_err(|_| bad(key))?,
        "num_classes" => cfg.network.num_classes = value.parse().map_err(|_| bad(key))?,
        "anchors_per_cell" => {
            cfg.network.anchors_per_cell = value.parse().map_err(|_| bad(key))?
        }
        "min_scale" => cfg.network.min_scale = value.parse().map_err(|_| bad(key))?,
        "max_scale" => cfg.network.max_scale = value.parse().map_err(|_| bad(key))?,
        "variant" => cfg.network.variant = parse_variant(value)?,
        "depth" => {
            let d: usize = value.parse().map_err(|_| bad(key))?;
            cfg.network.stage_blocks = [d; 4];
        }
        "aug_move" => cfg.aug_move = parse_on_off(value).map_err(CtcnError::InvalidArgument)?,
        "aug_crop" => cfg.aug_crop = parse_on_off(value).map_err(CtcnError::InvalidArgument)?,
        "nms_sigma" => cfg.nms_sigma = value.parse().map_err(|_| bad(key))?,
        "nms_score_floor" => cfg.nms_score_floor = value.parse().map_err(|_| bad(key))?,
        "confidence_floor" => cfg.confidence_floor = value.parse().map_err(|_| bad(key))?,
        "mining_ratio" => cfg.mining_ratio = value.parse().map_err(|_| bad(key))?,
        "preset" => {
            *cfg = match value {
                "desk" => RunConfig::desk_scale(),
                "full" => RunConfig::full_scale(),
                _ => return Err(bad("preset (desk|full)")),
            }
        }
        other => {
            return Err(CtcnError::InvalidArgument(format!(
                "unknown config key '{other}'"
            )))
        }
    }
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk_scale();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            cfg = serde_json::from_str(&text)?;
        } else {
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CtcnError::InvalidArgument(format!(
                        "{}:{}: expected key=value",
                        path.display(),
                        i + 1
                    ))
                })?;
                apply_kv(&mut cfg, k.trim(), v.trim())?;
            }
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &args.variant {
        cfg.network.variant = parse_variant(v)?;
    }
    if let Some(d) = args.depth {
        cfg.network.stage_blocks = [d; 4];
    }
    if let Some(m) = args.aug_move {
        cfg.aug_move = m;
    }
    if let Some(c) = args.aug_crop {
        cfg.aug_crop = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 80)]
        num_videos: usize,
        #[arg(long, default_value_t = 64)]
        snippets: usize,
        #[arg(long, default_value_t = 16)]
        concepts: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Train a model into a run directory.
    Train {
        /// Dataset directory (from `synth`).
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint, config and loss log.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Predict detections for a split with a trained run.
    Predict {
        /// Run directory (from `train`).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Output detections file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a detections file against annotations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Threshold mode: thumos or activitynet.
        #[arg(long, default_value = "activitynet")]
        mode: String,
        /// Output report JSON (the AR-AN CSV lands next to it).
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of the full training objective.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Print the architecture and parameter table of a config.
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            num_videos,
            snippets,
            concepts,
            classes,
        } => {
            let spec = SyntheticSpec {
                num_videos,
                snippets,
                concepts,
                classes,
                ..SyntheticSpec::desk_scale()
            };
            synth_dataset(&spec, seed, &out)?;
            println!("wrote dataset: {}", out.display());
        }
        Command::Train { data, out, config } => {
            let cfg = load_config(&config)?;
            let result = run_train(&cfg, &data, &out)?;
            let last = result.log.last().expect("at least one epoch");
            println!(
                "trained {} epochs (early_stop={}): train {:.4}/{:.4} val {:.4}/{:.4}",
                last.epoch,
                result.stopped_early,
                last.train_cls,
                last.train_loc,
                last.val_cls,
                last.val_loc
            );
        }
        Command::Predict {
            run,
            data,
            split,
            out,
        } => {
            let dets = run_predict(&run, &data, &split, &out)?;
            println!("wrote {} detections: {}", dets.len(), out.display());
        }
        Command::Eval {
            detections,
            annotations,
            mode,
            report,
        } => {
            let mode: EvalMode = mode.parse()?;
            let r = run_eval(&detections, &annotations, mode, &report)?;
            for (t, m) in r.thresholds.iter().zip(&r.map) {
                println!("mAP@{t:.2} = {m:.4}");
            }
            println!("mean mAP = {:.4}", r.mean_map);
        }
        Command::Gradcheck { seed } => {
            let err = pipeline_gradient_check(seed)?;
            println!("max relative error = {err:.3e}");
            if err >= 1e-4 {
                return Err(CtcnError::Training(format!(
                    "gradient check failed: max relative error {err:.3e} >= 1e-4"
                )));
            }
        }
        Command::Inspect { config } => {
            let cfg = load_config(&config)?;
            let net = ctcn::network::build_network(&cfg.network, cfg.seed)?;
            print!("{}", net.summary());
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
