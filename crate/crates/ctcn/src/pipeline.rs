//! High-level run orchestration: train/predict/eval against a dataset
//! directory, with a run directory holding checkpoint, config and logs.
//!
//! Layout of a run directory after training: `model.ckpt` (parameters),
//! `config.json` (the exact `RunConfig`), `loss.csv` (per-epoch losses).

use std::fs;
use std::path::Path;

use crate::checkpoint;
use crate::data::{
    load_split, read_annotations, read_detections, write_ar_an_csv, write_detections,
    write_loss_log, write_report,
};
use crate::error::{CtcnError, Result};
use crate::eval::{evaluate, strict_tiou_grid, Detection, EvalReport};
use crate::network::{build_network, Network};
use crate::predict::predict_split;
use crate::train::{train, RunConfig, TrainResult};

/// Evaluation threshold modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// tIoU thresholds {0.1, 0.2, 0.3, 0.4, 0.5}.
    Thumos,
    /// tIoU thresholds 0.5..=0.95, step 0.05.
    ActivityNet,
}

impl EvalMode {
    pub fn thresholds(&self) -> Vec<f64> {
        match self {
            EvalMode::Thumos => (1..=5).map(|i| 0.1 * i as f64).collect(),
            EvalMode::ActivityNet => strict_tiou_grid(),
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = CtcnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thumos" => Ok(EvalMode::Thumos),
            "activitynet" => Ok(EvalMode::ActivityNet),
            other => Err(CtcnError::InvalidArgument(format!(
                "unknown eval mode '{other}' (expected thumos or activitynet)"
            ))),
        }
    }
}

/// Train on `data_dir` and populate `run_dir`.
pub fn run_train(cfg: &RunConfig, data_dir: &Path, run_dir: &Path) -> Result<TrainResult> {
    let (_, train_videos) = load_split(data_dir, "train")?;
    let (_, val_videos) = load_split(data_dir, "val")?;
    let result = train(cfg, &train_videos, &val_videos)?;
    fs::create_dir_all(run_dir)?;
    checkpoint::save(&run_dir.join("model.ckpt"), result.network.parameters())?;
    fs::write(
        run_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    write_loss_log(&run_dir.join("loss.csv"), &result.log)?;
    Ok(result)
}

/// Rebuild the network of a run directory from its config and checkpoint.
pub fn load_run(run_dir: &Path) -> Result<(RunConfig, Network)> {
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(run_dir.join("config.json"))?)?;
    cfg.validate()?;
    let net = build_network(&cfg.network, cfg.seed)?;
    let loaded = checkpoint::load(&run_dir.join("model.ckpt"))?;
    checkpoint::restore_into(net.parameters(), &loaded)?;
    Ok((cfg, net))
}

/// Predict a whole split and write the detections file.
pub fn run_predict(
    run_dir: &Path,
    data_dir: &Path,
    split: &str,
    out_path: &Path,
) -> Result<Vec<Detection>> {
    let (cfg, net) = load_run(run_dir)?;
    let (_, videos) = load_split(data_dir, split)?;
    let dets = predict_split(&net, &cfg, &videos)?;
    write_detections(out_path, &dets)?;
    Ok(dets)
}

/// Evaluate a detections file against an annotation file; writes the JSON
/// report and the AR-AN CSV next to it.
pub fn run_eval(
    detections_path: &Path,
    annotations_path: &Path,
    mode: EvalMode,
    report_path: &Path,
) -> Result<EvalReport> {
    let dets = read_detections(detections_path)?;
    let ann = read_annotations(annotations_path)?;
    let known: std::collections::BTreeSet<&str> =
        ann.videos.iter().map(|v| v.id.as_str()).collect();
    let unknown: Vec<&str> = {
        let mut u: Vec<&str> = dets
            .iter()
            .map(|d| d.video.as_str())
            .filter(|v| !known.contains(v))
            .collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    if !unknown.is_empty() {
        return Err(CtcnError::InvalidArgument(format!(
            "detections reference unknown video ids: {}",
            unknown.join(", ")
        )));
    }
    let gts = ann.ground_truths()?;
    let report = evaluate(&dets, &gts, &mode.thresholds(), ann.num_classes)?;
    write_report(report_path, &report)?;
    let csv = report_path.with_extension("ar_an.csv");
    write_ar_an_csv(&csv, &report.ar_an)?;
    Ok(report)
}

/// One completed depth-study run.
#[derive(Clone, Debug)]
pub struct DepthStudyRow {
    pub variant: crate::network::Variant,
    pub depth: usize,
    pub val_cls: f64,
    pub val_loc: f64,
}

/// Train every (variant, depth) combination with a shared recipe and
/// collect the final validation losses.
pub fn depth_study(
    base: &RunConfig,
    data_dir: &Path,
    variants: &[crate::network::Variant],
    depths: &[usize],
) -> Result<Vec<DepthStudyRow>> {
    let (_, train_videos) = load_split(data_dir, "train")?;
    let (_, val_videos) = load_split(data_dir, "val")?;
    let mut rows = Vec::new();
    for &variant in variants {
        for &depth in depths {
            let mut cfg = base.clone();
            cfg.network.variant = variant;
            cfg.network.stage_blocks = [depth; 4];
            let result = train(&cfg, &train_videos, &val_videos)?;
            let last = result.log.last().ok_or_else(|| {
                CtcnError::Training("depth study produced an empty loss log".into())
            })?;
            rows.push(DepthStudyRow {
                variant,
                depth,
                val_cls: last.val_cls,
                val_loc: last.val_loc,
            });
        }
    }
    Ok(rows)
}

/// The four-curve CSV: one row per depth, classification and localization
/// validation losses for each variant as columns.
pub fn write_depth_study_csv(path: &Path, rows: &[DepthStudyRow]) -> Result<()> {
    let mut depths: Vec<usize> = rows.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    let mut variants: Vec<crate::network::Variant> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    let mut out = String::from("depth");
    for v in &variants {
        out.push_str(&format!(",{v}_cls,{v}_loc"));
    }
    out.push('\n');
    for d in &depths {
        out.push_str(&d.to_string());
        for v in &variants {
            let r = rows
                .iter()
                .find(|r| r.depth == *d && r.variant == *v)
                .ok_or_else(|| {
                    CtcnError::InvalidArgument(format!(
                        "missing depth-study row for {v} at depth {d}"
                    ))
                })?;
            out.push_str(&format!(",{},{}", r.val_cls, r.val_loc));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, SyntheticSpec};

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::desk_scale();
        cfg.network.concepts = 4;
        cfg.network.stage_potentials = [2, 2, 2, 2];
        cfg.network.pyramid_potentials = 2;
        cfg.optimizer.epochs = 2;
        cfg
    }

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_videos: 10,
            concepts: 4,
            ..SyntheticSpec::desk_scale()
        }
    }

    #[test]
    fn end_to_end_train_predict_eval() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        synth_dataset(&tiny_spec(), 3, &data).unwrap();
        let result = run_train(&tiny_cfg(), &data, &run).unwrap();
        assert_eq!(result.log.len(), 2);
        assert!(run.join("model.ckpt").exists());
        assert!(run.join("config.json").exists());
        assert!(run.join("loss.csv").exists());

        let dets_path = dir.path().join("dets.jsonl");
        run_predict(&run, &data, "val", &dets_path).unwrap();
        assert!(dets_path.exists());

        let report_path = dir.path().join("report.json");
        let report = run_eval(&dets_path, &data.join("val.json"), EvalMode::Thumos, &report_path)
            .unwrap();
        assert_eq!(report.thresholds.len(), 5);
        assert!(report_path.exists());
        assert!(dir.path().join("report.ar_an.csv").exists());
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        synth_dataset(&tiny_spec(), 4, &data).unwrap();
        let result = run_train(&tiny_cfg(), &data, &run).unwrap();
        let (cfg, restored) = load_run(&run).unwrap();
        let (_, videos) = load_split(&data, "val").unwrap();
        let a = predict_split(&result.network, &cfg, &videos).unwrap();
        let b = predict_split(&restored, &cfg, &videos).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.score.to_bits(), y.score.to_bits());
            assert_eq!(x.segment.start.to_bits(), y.segment.start.to_bits());
        }
    }

    #[test]
    fn depth_study_produces_four_curves() {
        use crate::network::Variant;
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        synth_dataset(&tiny_spec(), 6, &data).unwrap();
        let mut cfg = tiny_cfg();
        cfg.optimizer.epochs = 1;
        let rows = depth_study(&cfg, &data, &[Variant::Ctcn, Variant::Tcn], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 4);
        let csv_path = dir.path().join("depth.csv");
        write_depth_study_csv(&csv_path, &rows).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "depth,ctcn_cls,ctcn_loc,tcn_cls,tcn_loc");
        assert_eq!(csv.lines().count(), 3);
        for line in lines {
            assert_eq!(line.split(',').count(), 5);
        }
    }

    #[test]
    fn eval_rejects_unknown_video_ids() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        synth_dataset(&tiny_spec(), 5, &data).unwrap();
        let dets_path = dir.path().join("dets.jsonl");
        std::fs::write(
            &dets_path,
            "{\"video\":\"ghost\",\"label\":1,\"score\":0.5,\"start\":0.1,\"end\":0.2}\n",
        )
        .unwrap();
        let err = run_eval(
            &dets_path,
            &data.join("val.json"),
            EvalMode::Thumos,
            &dir.path().join("r.json"),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("ghost"), "{err}");
    }
}
