//! Inference post-processing (per-class Soft-NMS) and metrics: average
//! precision over tIoU thresholds, and the AR-AN proposal-quality curve
//! (average recall versus average number of proposals per video).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CtcnError, Result};
use crate::targets::{tiou, Segment};

/// One scored localization result.
#[derive(Clone, Debug)]
pub struct Detection {
    pub video: String,
    /// Class label `1..=A`.
    pub label: usize,
    pub score: f64,
    pub segment: Segment,
}

/// A ground-truth segment with its class.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub video: String,
    pub label: usize,
    pub segment: Segment,
}

/// Soft-NMS with Gaussian decay over one `(video, class)` group:
/// repeatedly select the highest-scoring detection, then decay every
/// remaining score by `exp(-tIoU^2 / sigma)`; detections falling below
/// `score_floor` are discarded. Output is sorted by final score
/// descending (ties broken by segment start).
pub fn soft_nms(dets: &[Detection], sigma: f64, score_floor: f64) -> Result<Vec<Detection>> {
    if sigma <= 0.0 {
        return Err(CtcnError::InvalidArgument(format!(
            "soft-nms sigma must be positive, got {sigma}"
        )));
    }
    let mut pool: Vec<Detection> = dets.to_vec();
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let best = pool
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.score
                    .total_cmp(&b.score)
                    .then(b.segment.start.total_cmp(&a.segment.start))
            })
            .map(|(i, _)| i)
            .unwrap();
        let keep = pool.swap_remove(best);
        pool.retain_mut(|d| {
            let ov = tiou(&d.segment, &keep.segment);
            d.score *= (-ov * ov / sigma).exp();
            d.score >= score_floor
        });
        out.push(keep);
    }
    Ok(out)
}

/// Soft-NMS applied independently to every `(video, label)` group.
pub fn soft_nms_grouped(
    dets: &[Detection],
    sigma: f64,
    score_floor: f64,
) -> Result<Vec<Detection>> {
    let mut groups: BTreeMap<(String, usize), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups
            .entry((d.video.clone(), d.label))
            .or_default()
            .push(d.clone());
    }
    let mut out = Vec::with_capacity(dets.len());
    for group in groups.values() {
        out.extend(soft_nms(group, sigma, score_floor)?);
    }
    Ok(out)
}

fn sort_for_matching(dets: &mut [Detection]) {
    // Score descending; score ties broken by segment start so AP does not
    // depend on input order.
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.segment.start.total_cmp(&b.segment.start))
            .then(a.segment.end.total_cmp(&b.segment.end))
    });
}

/// Average precision for one class at one tIoU threshold. Detections are
/// greedily matched (in score order) to the highest-tIoU unmatched ground
/// truth of the same video; a match with tIoU >= threshold is a true
/// positive. AP is the area under the precision-recall curve with the
/// all-points precision envelope.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
) -> Result<f64> {
    let mut seen = BTreeSet::new();
    for d in dets {
        let key = (
            d.video.clone(),
            d.label,
            d.segment.start.to_bits(),
            d.segment.end.to_bits(),
        );
        if !seen.insert(key) {
            return Err(CtcnError::InvalidArgument(format!(
                "duplicate detection {} [{}, {}]",
                d.video, d.segment.start, d.segment.end
            )));
        }
    }
    if gts.is_empty() || dets.is_empty() {
        return Ok(0.0);
    }
    let mut dets = dets.to_vec();
    sort_for_matching(&mut dets);

    let mut gt_by_video: BTreeMap<&str, Vec<(&GroundTruth, bool)>> = BTreeMap::new();
    for g in gts {
        gt_by_video.entry(&g.video).or_default().push((g, false));
    }

    let mut tp = vec![false; dets.len()];
    for (i, d) in dets.iter().enumerate() {
        let Some(cands) = gt_by_video.get_mut(d.video.as_str()) else {
            continue;
        };
        let best = cands
            .iter()
            .enumerate()
            .filter(|(_, (_, used))| !used)
            .map(|(j, (g, _))| (j, tiou(&d.segment, &g.segment)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, ov)) = best {
            if ov >= threshold {
                cands[j].1 = true;
                tp[i] = true;
            }
        }
    }

    // Precision/recall at each prefix, then the all-points envelope.
    let total_gt = gts.len() as f64;
    let mut precisions = Vec::with_capacity(dets.len());
    let mut recalls = Vec::with_capacity(dets.len());
    let mut hits = 0usize;
    for (i, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            hits += 1;
        }
        precisions.push(hits as f64 / (i + 1) as f64);
        recalls.push(hits as f64 / total_gt);
    }
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}

/// The full metric bundle: one AP per `(threshold, class)`, the mAP per
/// threshold, their mean, and the AR-AN curve samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// `ap[ti][class - 1]`.
    pub ap: Vec<Vec<f64>>,
    /// Unweighted class mean per threshold.
    pub map: Vec<f64>,
    pub mean_map: f64,
    /// `(average proposals per video, average recall)` samples.
    pub ar_an: Vec<(f64, f64)>,
}

/// AP per class and threshold plus the mAP summaries. `ar_an` is left
/// empty; [`evaluate`] fills it.
pub fn map_report(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
    num_classes: usize,
) -> Result<EvalReport> {
    for d in dets {
        if d.label < 1 || d.label > num_classes {
            return Err(CtcnError::InvalidArgument(format!(
                "detection label {} outside 1..={num_classes}",
                d.label
            )));
        }
    }
    for g in gts {
        if g.label < 1 || g.label > num_classes {
            return Err(CtcnError::InvalidArgument(format!(
                "ground-truth label {} outside 1..={num_classes}",
                g.label
            )));
        }
    }
    let mut ap = Vec::with_capacity(thresholds.len());
    let mut map = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut row = Vec::with_capacity(num_classes);
        for class in 1..=num_classes {
            let d: Vec<Detection> = dets.iter().filter(|d| d.label == class).cloned().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.label == class).cloned().collect();
            row.push(average_precision(&d, &g, thr)?);
        }
        map.push(row.iter().sum::<f64>() / num_classes as f64);
        ap.push(row);
    }
    let mean_map = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        ap,
        map,
        mean_map,
        ar_an: Vec::new(),
    })
}

/// Average recall at each proposal budget. For each AN value a global
/// score cut keeps the top `AN * num_videos` proposals (score ties
/// included); recall is the fraction of ground truths covered by a kept
/// proposal at tIoU >= threshold, averaged over videos (with ground
/// truth) and over `tiou_grid`. Proposals are class-agnostic.
pub fn ar_an_curve(
    proposals: &[Detection],
    gts: &[GroundTruth],
    an_grid: &[f64],
    tiou_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    for w in an_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(CtcnError::InvalidArgument(
                "an_grid must be strictly ascending".into(),
            ));
        }
    }
    let videos: BTreeSet<&str> = gts.iter().map(|g| g.video.as_str()).collect();
    if videos.is_empty() {
        return Ok(an_grid.iter().map(|&an| (an, 0.0)).collect());
    }
    let num_videos = videos.len();
    let mut scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));

    let mut gt_by_video: BTreeMap<&str, Vec<&GroundTruth>> = BTreeMap::new();
    for g in gts {
        gt_by_video.entry(&g.video).or_default().push(g);
    }

    let mut curve = Vec::with_capacity(an_grid.len());
    for &an in an_grid {
        let budget = (an * num_videos as f64).floor() as usize;
        let ar = if budget == 0 || scores.is_empty() {
            0.0
        } else {
            let cut = scores[budget.min(scores.len()) - 1];
            let kept: Vec<&Detection> =
                proposals.iter().filter(|p| p.score >= cut).collect();
            let mut sum = 0.0;
            let mut n = 0usize;
            for (video, vid_gts) in &gt_by_video {
                for &thr in tiou_grid {
                    let matched = vid_gts
                        .iter()
                        .filter(|g| {
                            kept.iter().any(|p| {
                                p.video == *video && tiou(&p.segment, &g.segment) >= thr
                            })
                        })
                        .count();
                    sum += matched as f64 / vid_gts.len() as f64;
                    n += 1;
                }
            }
            sum / n as f64
        };
        curve.push((an, ar));
    }
    Ok(curve)
}

/// Default AN budgets for the AR-AN curve.
pub const DEFAULT_AN_GRID: [f64; 8] = [1.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0];

/// tIoU grid 0.5..=0.95 step 0.05, as used by both the strict mAP mode
/// and the AR-AN curve.
pub fn strict_tiou_grid() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Full report: mAP table plus AR-AN curve (detections reused as
/// class-agnostic proposals).
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
    num_classes: usize,
) -> Result<EvalReport> {
    let mut report = map_report(dets, gts, thresholds, num_classes)?;
    report.ar_an = ar_an_curve(dets, gts, &DEFAULT_AN_GRID, &strict_tiou_grid())?;
    Ok(report)
}
