//! Depth study: train the concept-wise network and the plain temporal
//! network at two depths under one shared recipe and write the four-curve
//! CSV (classification and localization validation losses per variant).
//!
//! Takes a few minutes; pass an output directory to keep the CSV.

use ctcn::network::Variant;
use ctcn::pipeline::{depth_study, write_depth_study_csv};
use ctcn::synth::{synth_dataset, SyntheticSpec};
use ctcn::train::RunConfig;
use std::path::PathBuf;

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let data = out_dir.join("depth_study_data");
    // Enough videos that the deeper models are limited by architecture, not
    // by memorization of a tiny split.
    let spec = SyntheticSpec {
        num_videos: 500,
        ..SyntheticSpec::desk_scale()
    };
    synth_dataset(&spec, 23, &data).unwrap();

    let mut cfg = RunConfig::desk_scale();
    cfg.optimizer.epochs = 100;
    cfg.optimizer.lr_drop_epoch = 75;
    cfg.optimizer.patience = 100;

    let rows = depth_study(&cfg, &data, &[Variant::Ctcn, Variant::Tcn], &[1, 2]).unwrap();
    for r in &rows {
        println!(
            "{} depth {}: val cls {:.4}, val loc {:.4}",
            r.variant, r.depth, r.val_cls, r.val_loc
        );
    }
    let csv = out_dir.join("depth_study.csv");
    write_depth_study_csv(&csv, &rows).unwrap();
    println!("wrote {}", csv.display());
}
