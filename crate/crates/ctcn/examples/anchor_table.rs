//! Prints the anchor pyramid for the desk and full-scale geometries: cell
//! counts, basic scales, and per-level anchor sizes, plus a quick sweep of
//! how well the default anchors cover segments of different lengths.

use ctcn::anchors::AnchorConfig;
use ctcn::targets::{anchor_segment, tiou, Segment};

fn describe(tag: &str, cfg: &AnchorConfig) {
    println!("{tag}: {} anchors total", cfg.total_anchors());
    for l in cfg.min_scale..=cfg.max_scale {
        let sizes: Vec<String> = (1..=cfg.anchors_per_cell)
            .map(|m| format!("{:.4}", cfg.anchor_size(l, m).unwrap()))
            .collect();
        println!(
            "  P{l}: {:>3} cells, basic size {:.4}, anchor sizes [{}]",
            cfg.cells(l).unwrap(),
            cfg.basic_size(l).unwrap(),
            sizes.join(", ")
        );
    }
}

fn main() {
    let desk = AnchorConfig::new(64, 2, 6, 2).unwrap();
    let full = AnchorConfig::new(512, 2, 9, 7).unwrap();
    describe("desk (t0=64, M=2, P2..P6)", &desk);
    println!();
    describe("full (t0=512, M=7, P2..P9)", &full);

    // Coverage sweep: best achievable tIoU against the default anchors for
    // centered segments of growing length.
    println!("\ncoverage sweep (desk geometry, centered segments):");
    let anchors = desk.enumerate_anchors();
    for len_snippets in [2usize, 4, 8, 16, 32, 48, 64] {
        let len = len_snippets as f64 / 64.0;
        let seg = Segment::new(0.5 - len / 2.0, 0.5 + len / 2.0).unwrap();
        let best = anchors
            .iter()
            .map(|a| tiou(&anchor_segment(a), &seg))
            .fold(0.0, f64::max);
        println!("  length {len_snippets:>2} snippets: best tIoU {best:.3}");
    }
}
