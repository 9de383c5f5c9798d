//! Default anchor segments of the temporal pyramid.
//!
//! All geometry is in normalized video time `[0, 1]`. For a pyramid of
//! scales `l in [min_scale, max_scale]` over `t0 = 2^max_scale` input
//! snippets:
//!
//! - the basic segment size of scale `l` is `s_l = 2^l / t0`, so the
//!   coarsest scale spans the whole video;
//! - the `M` anchors of a cell refine `s_l` over the range
//!   `[2/3 s_l, 4/3 s_l)` in equal steps, except at the coarsest scale
//!   where the range is compressed to `[2/3 s_L, s_L]` (inclusive linear
//!   interpolation) because an action cannot outlast the video;
//! - cell `j` (1-based) of scale `l` is centered at the midpoint of the
//!   `j`-th of `t0 / 2^l` equal pieces of `[0, 1]`.
//!
//! Enumeration order is scale-major (ascending), then cell, then anchor;
//! this is the flat-index bijection used to address prediction maps.

use crate::error::{CtcnError, Result};

/// Geometry of the anchor pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorConfig {
    /// Input snippet count `t0`; must equal `2^max_scale`.
    pub input_snippets: usize,
    pub min_scale: u32,
    pub max_scale: u32,
    /// Anchors per cell, `M`.
    pub anchors_per_cell: usize,
}

/// One default segment: pyramid scale `l`, cell `j`, anchor index `m`
/// (both 1-based), with its default center and length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorSpec {
    pub scale: u32,
    pub cell: usize,
    pub anchor: usize,
    pub default_center: f64,
    pub default_length: f64,
}

impl AnchorConfig {
    pub fn new(
        input_snippets: usize,
        min_scale: u32,
        max_scale: u32,
        anchors_per_cell: usize,
    ) -> Result<Self> {
        if min_scale == 0 || min_scale > max_scale {
            return Err(CtcnError::InvalidArgument(format!(
                "invalid scale range {min_scale}..{max_scale}"
            )));
        }
        if input_snippets != 1usize << max_scale {
            return Err(CtcnError::InvalidArgument(format!(
                "input snippet count {input_snippets} must be 2^max_scale = {}",
                1usize << max_scale
            )));
        }
        if anchors_per_cell == 0 {
            return Err(CtcnError::InvalidArgument("need at least one anchor per cell".into()));
        }
        Ok(AnchorConfig {
            input_snippets,
            min_scale,
            max_scale,
            anchors_per_cell,
        })
    }

    fn check_scale(&self, l: u32) -> Result<()> {
        if l < self.min_scale || l > self.max_scale {
            return Err(CtcnError::InvalidArgument(format!(
                "scale {l} outside [{}, {}]",
                self.min_scale, self.max_scale
            )));
        }
        Ok(())
    }

    /// Number of cells at scale `l`.
    pub fn cells(&self, l: u32) -> Result<usize> {
        self.check_scale(l)?;
        Ok(self.input_snippets >> l)
    }

    /// Basic segment size `s_l = 2^l / t0`.
    pub fn basic_size(&self, l: u32) -> Result<f64> {
        self.check_scale(l)?;
        Ok((1usize << l) as f64 / self.input_snippets as f64)
    }

    /// Default size of the `m`-th anchor at scale `l` (1-based `m`).
    pub fn anchor_size(&self, l: u32, m: usize) -> Result<f64> {
        self.check_scale(l)?;
        let big_m = self.anchors_per_cell;
        if m < 1 || m > big_m {
            return Err(CtcnError::InvalidArgument(format!(
                "anchor index {m} outside 1..={big_m}"
            )));
        }
        let s_l = self.basic_size(l)?;
        let size = if l < self.max_scale {
            (2.0 / 3.0) * s_l + (2.0 * (m as f64 - 1.0) / (3.0 * big_m as f64)) * s_l
        } else if big_m == 1 {
            (2.0 / 3.0) * s_l
        } else {
            // Compressed range [2/3 s_L, s_L], both endpoints included.
            (2.0 / 3.0) * s_l + ((m as f64 - 1.0) / (3.0 * (big_m as f64 - 1.0))) * s_l
        };
        Ok(size.min(1.0))
    }

    /// Default center of cell `j` at scale `l` (1-based `j`).
    pub fn cell_center(&self, l: u32, j: usize) -> Result<f64> {
        let cells = self.cells(l)?;
        if j < 1 || j > cells {
            return Err(CtcnError::InvalidArgument(format!(
                "cell index {j} outside 1..={cells}"
            )));
        }
        Ok((2.0 * j as f64 - 1.0) / (1u64 << (self.max_scale + 1 - l)) as f64)
    }

    /// Total anchor count: `M * sum_l t0 / 2^l`.
    pub fn total_anchors(&self) -> usize {
        (self.min_scale..=self.max_scale)
            .map(|l| self.input_snippets >> l)
            .sum::<usize>()
            * self.anchors_per_cell
    }

    /// Flat index of anchor `(l, j, m)` in enumeration order.
    pub fn flat_index(&self, l: u32, j: usize, m: usize) -> usize {
        let big_m = self.anchors_per_cell;
        let before: usize = (self.min_scale..l)
            .map(|s| (self.input_snippets >> s) * big_m)
            .sum();
        before + (j - 1) * big_m + (m - 1)
    }

    /// The full anchor table in flat-index order.
    pub fn enumerate_anchors(&self) -> Vec<AnchorSpec> {
        let mut out = Vec::with_capacity(self.total_anchors());
        for l in self.min_scale..=self.max_scale {
            let cells = self.input_snippets >> l;
            for j in 1..=cells {
                let center = self.cell_center(l, j).expect("validated cell");
                for m in 1..=self.anchors_per_cell {
                    out.push(AnchorSpec {
                        scale: l,
                        cell: j,
                        anchor: m,
                        default_center: center,
                        default_length: self.anchor_size(l, m).expect("validated anchor"),
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_cfg() -> AnchorConfig {
        AnchorConfig::new(512, 2, 9, 7).unwrap()
    }

    fn toy_cfg() -> AnchorConfig {
        AnchorConfig::new(64, 2, 6, 2).unwrap()
    }

    #[test]
    fn basic_size_examples() {
        let cfg = full_cfg();
        assert_eq!(cfg.basic_size(9).unwrap(), 1.0);
        assert_eq!(cfg.basic_size(2).unwrap(), 4.0 / 512.0);
        assert_eq!(toy_cfg().basic_size(6).unwrap(), 1.0);
        assert!(cfg.basic_size(1).is_err());
        assert!(cfg.basic_size(10).is_err());
    }

    #[test]
    fn anchor_size_examples() {
        let cfg = full_cfg();
        let s5 = cfg.basic_size(5).unwrap();
        assert!((cfg.anchor_size(5, 1).unwrap() - (2.0 / 3.0) * s5).abs() < 1e-15);
        // Degenerate M = 1.
        let one = AnchorConfig::new(64, 2, 6, 1).unwrap();
        assert!((one.anchor_size(4, 1).unwrap() - (2.0 / 3.0) * one.basic_size(4).unwrap()).abs() < 1e-15);
        // Coarsest scale, last anchor hits exactly 1.0.
        assert_eq!(cfg.anchor_size(9, 7).unwrap(), 1.0);
        assert!(cfg.anchor_size(5, 0).is_err());
        assert!(cfg.anchor_size(5, 8).is_err());
    }

    #[test]
    fn cell_center_examples() {
        let cfg = full_cfg();
        assert_eq!(cfg.cell_center(9, 1).unwrap(), 0.5);
        assert_eq!(cfg.cell_center(8, 1).unwrap(), 0.25);
        assert_eq!(cfg.cell_center(8, 2).unwrap(), 0.75);
        assert_eq!(cfg.cell_center(2, 1).unwrap(), 1.0 / 256.0);
        assert!(cfg.cell_center(2, 0).is_err());
        assert!(cfg.cell_center(2, 129).is_err());
    }

    #[test]
    fn anchor_counts() {
        assert_eq!(full_cfg().total_anchors(), 1785); // 7 * 255
        assert_eq!(toy_cfg().total_anchors(), 62); // 2 * 31
        assert_eq!(full_cfg().enumerate_anchors().len(), 1785);
    }

    #[test]
    fn centers_strictly_inside_unit_interval() {
        for a in full_cfg().enumerate_anchors() {
            assert!(a.default_center > 0.0 && a.default_center < 1.0);
            assert!(a.default_length > 0.0 && a.default_length <= 1.0);
        }
    }

    #[test]
    fn flat_index_bijection() {
        let cfg = toy_cfg();
        let anchors = cfg.enumerate_anchors();
        for (i, a) in anchors.iter().enumerate() {
            assert_eq!(cfg.flat_index(a.scale, a.cell, a.anchor), i);
        }
    }

    #[test]
    fn sizes_monotone_in_anchor_and_scale() {
        let cfg = full_cfg();
        for l in 2..=9 {
            for m in 1..cfg.anchors_per_cell {
                assert!(cfg.anchor_size(l, m + 1).unwrap() > cfg.anchor_size(l, m).unwrap());
            }
        }
        for l in 2..9 {
            for m in 1..=cfg.anchors_per_cell {
                assert!(cfg.anchor_size(l + 1, m).unwrap() > cfg.anchor_size(l, m).unwrap());
            }
        }
    }
}
