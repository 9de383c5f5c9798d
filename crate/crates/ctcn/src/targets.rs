//! Anchor matching, offset encoding, and the training losses.
//!
//! An anchor is matched to the ground-truth action with the largest tIoU and
//! counts as positive when that tIoU exceeds 0.5. Positives contribute a
//! cross-entropy term on their matched class and a smooth-L1 term on the
//! `(beta, gamma)` length/center offsets; negatives contribute background
//! cross-entropy, with only the highest-loss negatives kept at a fixed
//! negative:positive ratio (hard negative mining).

use crate::anchors::{AnchorConfig, AnchorSpec};
use crate::error::{CtcnError, Result};
use crate::network::PyramidOutputs;
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-12;

/// A time segment in normalized video time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Segment> {
        if !(0.0..1.0).contains(&start) || !(start..=1.0).contains(&end) || start >= end {
            return Err(CtcnError::InvalidArgument(format!(
                "invalid segment [{start}, {end}]"
            )));
        }
        Ok(Segment { start, end })
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Temporal intersection-over-union of two segments.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Per-anchor matching outcome.
#[derive(Clone, Copy, Debug)]
pub struct AnchorMatch {
    /// Index of the argmax-tIoU ground truth (set whenever any exists).
    pub matched_gt: Option<usize>,
    pub tiou: f64,
    /// Class label; 0 means background.
    pub label: u32,
    pub is_positive: bool,
}

/// Match every anchor to its argmax-tIoU ground truth; positive iff that
/// tIoU exceeds 0.5. Ties break to the lowest ground-truth index. Labels
/// must lie in `1..=num_classes`; an empty ground-truth list yields all
/// negatives.
pub fn match_anchors(
    anchors: &[AnchorSpec],
    gts: &[(Segment, u32)],
    num_classes: usize,
) -> Result<Vec<AnchorMatch>> {
    for &(_, label) in gts {
        if label == 0 || label as usize > num_classes {
            return Err(CtcnError::InvalidArgument(format!(
                "ground-truth label {label} outside 1..={num_classes}"
            )));
        }
    }
    Ok(anchors
        .iter()
        .map(|a| {
            let default = anchor_segment(a);
            let mut best: Option<(usize, f64)> = None;
            for (gi, (seg, _)) in gts.iter().enumerate() {
                let v = tiou(&default, seg);
                let better = match best {
                    None => true,
                    Some((_, bv)) => v > bv,
                };
                if better {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, v)) => {
                    let positive = v > 0.5;
                    AnchorMatch {
                        matched_gt: Some(gi),
                        tiou: v,
                        label: if positive { gts[gi].1 } else { 0 },
                        is_positive: positive,
                    }
                }
                None => AnchorMatch {
                    matched_gt: None,
                    tiou: 0.0,
                    label: 0,
                    is_positive: false,
                },
            }
        })
        .collect())
}

/// The anchor's default segment, clipped to `[0, 1]`.
pub fn anchor_segment(a: &AnchorSpec) -> Segment {
    let half = a.default_length / 2.0;
    Segment {
        start: (a.default_center - half).max(0.0),
        end: (a.default_center + half).min(1.0),
    }
}

/// Regression target of one positive anchor.
#[derive(Clone, Copy, Debug)]
pub struct OffsetTarget {
    /// Flat anchor index (enumeration order).
    pub anchor_index: usize,
    /// `log(w_gt / w_anchor)`
    pub beta: f64,
    /// `(c_gt - c_anchor) / w_anchor`
    pub gamma: f64,
}

/// Offsets that map `anchor` onto `gt` under [`decode`].
pub fn encode(anchor: &AnchorSpec, gt: &Segment) -> (f64, f64) {
    let beta = (gt.length() / anchor.default_length).ln();
    let gamma = (gt.center() - anchor.default_center) / anchor.default_length;
    (beta, gamma)
}

/// Apply predicted offsets to an anchor: length `exp(beta) * w`, center
/// `c + w * gamma`, then clip to `[0, 1]`.
pub fn decode(anchor: &AnchorSpec, beta_hat: f64, gamma_hat: f64) -> Segment {
    let w = beta_hat.exp() * anchor.default_length;
    let c = anchor.default_center + anchor.default_length * gamma_hat;
    let start = (c - w / 2.0).clamp(0.0, 1.0);
    let end = (c + w / 2.0).clamp(0.0, 1.0);
    if end > start {
        Segment { start, end }
    } else {
        // Fully clipped away; keep a degenerate sliver at the boundary.
        let s = start.min(1.0 - 1e-9);
        Segment { start: s, end: s + 1e-9 }
    }
}

/// Regression targets for the positive anchors, in flat-index order.
pub fn build_offset_targets(
    anchors: &[AnchorSpec],
    matches: &[AnchorMatch],
    gts: &[(Segment, u32)],
) -> Vec<OffsetTarget> {
    anchors
        .iter()
        .zip(matches)
        .enumerate()
        .filter(|(_, (_, m))| m.is_positive)
        .map(|(i, (a, m))| {
            let gt = &gts[m.matched_gt.expect("positive anchors carry a match")].0;
            let (beta, gamma) = encode(a, gt);
            OffsetTarget {
                anchor_index: i,
                beta,
                gamma,
            }
        })
        .collect()
}

/// Stable softmax over `A+1` logits.
pub fn class_confidence(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Cross-entropy of one anchor given its class confidences: `-log p[y]`
/// for positives, `-log p[0]` for negatives.
pub fn classification_loss(probs: &[f64], m: &AnchorMatch) -> f64 {
    let idx = if m.is_positive { m.label as usize } else { 0 };
    -(probs[idx].max(LOG_EPS)).ln()
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Smooth-L1 on both offset residuals of one positive anchor.
pub fn localization_loss(beta_hat: f64, gamma_hat: f64, target: &OffsetTarget) -> f64 {
    smooth_l1(beta_hat - target.beta) + smooth_l1(gamma_hat - target.gamma)
}

/// The differentiable loss terms of one video.
pub struct LossTerms {
    pub total: Tensor,
    pub cls: Tensor,
    pub loc: Tensor,
    pub num_positives: usize,
    pub num_mined_negatives: usize,
}

/// Scalar training objective: positive cross-entropy + localization loss,
/// plus background cross-entropy over the `ceil(ratio * positives)`
/// highest-loss negatives (ties broken by flat anchor index). With zero
/// positives, `floor(ratio)` negatives are kept so background-only videos
/// still train. `normalize` divides by `max(1, positives)`.
pub fn total_loss(
    outputs: &PyramidOutputs,
    cfg: &AnchorConfig,
    matches: &[AnchorMatch],
    targets: &[OffsetTarget],
    ratio: f64,
    normalize: bool,
) -> Result<LossTerms> {
    let a1 = outputs.num_classes + 1;
    let big_m = outputs.anchors_per_cell;
    if big_m != cfg.anchors_per_cell {
        return Err(CtcnError::InvalidArgument(
            "anchor count mismatch between outputs and anchor config".into(),
        ));
    }
    let total_anchors = cfg.total_anchors();
    if matches.len() != total_anchors {
        return Err(CtcnError::InvalidArgument(format!(
            "expected {total_anchors} matches, got {}",
            matches.len()
        )));
    }

    // Logits of every anchor, gathered per scale in flat-index order into
    // one [N, A+1] matrix. Channel layout inside a cls map: class a of
    // anchor m lives at channel a*M + (m-1).
    let mut per_scale = Vec::with_capacity(outputs.scales.len());
    for s in &outputs.scales {
        let cells = cfg.cells(s.scale)?;
        let mut idx = Vec::with_capacity(cells * big_m * a1);
        for j in 0..cells {
            for m in 0..big_m {
                for a in 0..a1 {
                    idx.push((a * big_m + m) * cells + j);
                }
            }
        }
        per_scale.push(s.cls.gather(&idx, vec![cells * big_m, a1])?);
    }
    let logits = Tensor::concat0(&per_scale)?;
    let lsm = logits.log_softmax_rows()?;
    let lsm_data = lsm.data();

    // Classification entries: positives on their label, mined negatives on
    // background.
    let positives: Vec<usize> = matches
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_positive)
        .map(|(i, _)| i)
        .collect();
    let mut negatives: Vec<(usize, f64)> = matches
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_positive)
        .map(|(i, _)| (i, -lsm_data[i * a1]))
        .collect();
    negatives.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let keep = if positives.is_empty() {
        ratio.floor().max(0.0) as usize
    } else {
        (ratio * positives.len() as f64).ceil() as usize
    }
    .min(negatives.len());
    let num_mined = keep;

    let mut cls_entries: Vec<usize> = positives
        .iter()
        .map(|&i| i * a1 + matches[i].label as usize)
        .collect();
    cls_entries.extend(negatives[..keep].iter().map(|&(i, _)| i * a1));
    let cls = if cls_entries.is_empty() {
        Tensor::scalar(0.0)
    } else {
        let n = cls_entries.len();
        lsm.gather(&cls_entries, vec![n])?.sum().mul_scalar(-1.0)
    };

    // Localization: gather (beta_hat, gamma_hat) per positive, residual
    // against targets, smooth-L1, sum. Channel layout inside a reg map:
    // beta of anchor m at channel m-1, gamma at channel M + m - 1.
    let loc = if targets.is_empty() {
        Tensor::scalar(0.0)
    } else {
        let mut parts = Vec::new();
        let mut expect = Vec::new();
        let mut offset = 0usize;
        let mut tpos = 0usize;
        for s in &outputs.scales {
            let cells = cfg.cells(s.scale)?;
            let scale_anchors = cells * big_m;
            let mut idx = Vec::new();
            while tpos < targets.len() && targets[tpos].anchor_index < offset + scale_anchors {
                let local = targets[tpos].anchor_index - offset;
                let j = local / big_m;
                let m = local % big_m;
                idx.push(m * cells + j);
                idx.push((big_m + m) * cells + j);
                expect.push(targets[tpos].beta);
                expect.push(targets[tpos].gamma);
                tpos += 1;
            }
            if !idx.is_empty() {
                let n = idx.len();
                parts.push(s.reg.gather(&idx, vec![n])?);
            }
            offset += scale_anchors;
        }
        let preds = Tensor::concat0(&parts)?;
        let target_t = Tensor::leaf(vec![expect.len()], expect)?;
        preds.sub(&target_t)?.smooth_l1().sum()
    };

    let mut total = cls.add(&loc)?;
    if normalize {
        total = total.mul_scalar(1.0 / positives.len().max(1) as f64);
    }
    Ok(LossTerms {
        total,
        cls,
        loc,
        num_positives: positives.len(),
        num_mined_negatives: num_mined,
    })
}
