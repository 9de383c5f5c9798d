//! Training-time augmentations over labeled feature sequences.
//!
//! Both operations work on integer snippet boundaries: annotation
//! endpoints are rounded to the nearest snippet before any feature
//! surgery, and the output labels sit on those quantized boundaries.
//! Given the same rng state the results are fully deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conv::FeatureSequence;
use crate::error::Result;
use crate::targets::Segment;
use crate::tensor::Tensor;

/// A feature sequence with its ground-truth action segments.
#[derive(Clone)]
pub struct LabeledVideo {
    pub id: String,
    pub features: FeatureSequence,
    /// `(segment, label)` pairs, labels `1..=A`, sorted by start.
    pub actions: Vec<(Segment, usize)>,
}

impl LabeledVideo {
    pub fn new(id: &str, features: FeatureSequence, mut actions: Vec<(Segment, usize)>) -> Self {
        actions.sort_by(|a, b| a.0.start.total_cmp(&b.0.start));
        LabeledVideo {
            id: id.to_string(),
            features,
            actions,
        }
    }

    fn columns(&self) -> (usize, usize, Vec<f64>) {
        (
            self.features.concepts(),
            self.features.snippets(),
            self.features.values.data(),
        )
    }
}

/// Round a segment to snippet indices `[qs, qe)`, at least one snippet wide.
fn quantize(seg: &Segment, t: usize) -> (usize, usize) {
    let qs = ((seg.start * t as f64).round() as usize).min(t - 1);
    let qe = ((seg.end * t as f64).round() as usize).clamp(qs + 1, t);
    (qs, qe)
}

/// Gather columns `[from, to)` of a concept-major `[c, t]` buffer.
fn take_columns(data: &[f64], c: usize, t: usize, from: usize, to: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * (to - from));
    for ci in 0..c {
        out.extend_from_slice(&data[ci * t + from..ci * t + to]);
    }
    out
}

/// Rebuild a concept-major `[c, t]` buffer from column blocks, each block
/// itself concept-major.
fn splice_blocks(blocks: &[(usize, &[f64])], c: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * t];
    let mut at = 0usize;
    for &(width, block) in blocks {
        for ci in 0..c {
            out[ci * t + at..ci * t + at + width]
                .copy_from_slice(&block[ci * width..(ci + 1) * width]);
        }
        at += width;
    }
    debug_assert_eq!(at, t);
    out
}

/// Remove every action from the timeline, concatenate the background, and
/// reinsert the actions at random non-overlapping positions. Lengths, label
/// multiset and action feature content are preserved; degenerate inputs
/// (no actions, no background, overlapping quantized actions) pass through.
pub fn random_move(v: &LabeledVideo, rng: &mut ChaCha8Rng) -> Result<LabeledVideo> {
    let (c, t, data) = v.columns();
    if v.actions.is_empty() {
        return Ok(v.clone());
    }
    let spans: Vec<(usize, usize)> = v.actions.iter().map(|(s, _)| quantize(s, t)).collect();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Ok(v.clone());
        }
    }
    let total_action: usize = spans.iter().map(|(a, b)| b - a).sum();
    if total_action >= t {
        return Ok(v.clone());
    }
    let n_bg = t - total_action;

    let action_blocks: Vec<Vec<f64>> = spans
        .iter()
        .map(|&(a, b)| take_columns(&data, c, t, a, b))
        .collect();
    // Background columns in original order, concatenated.
    let mut bg = Vec::with_capacity(c * n_bg);
    for ci in 0..c {
        let mut prev = 0usize;
        for &(a, b) in &spans {
            bg.extend_from_slice(&data[ci * t + prev..ci * t + a]);
            prev = b;
        }
        bg.extend_from_slice(&data[ci * t + prev..ci * t + t]);
    }

    // Insertion points into the background timeline; sorting keeps the
    // original action order so equal offsets stack back-to-back.
    let mut offsets: Vec<usize> = (0..spans.len()).map(|_| rng.gen_range(0..=n_bg)).collect();
    offsets.sort_unstable();

    let bg_width = |from: usize, to: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(c * (to - from));
        for ci in 0..c {
            out.extend_from_slice(&bg[ci * n_bg + from..ci * n_bg + to]);
        }
        out
    };

    let mut blocks: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut actions = Vec::with_capacity(v.actions.len());
    let mut bg_at = 0usize;
    let mut placed = 0usize;
    for (i, &off) in offsets.iter().enumerate() {
        if off > bg_at {
            blocks.push((off - bg_at, bg_width(bg_at, off)));
            bg_at = off;
        }
        let width = spans[i].1 - spans[i].0;
        let start_col = bg_at + placed;
        actions.push((
            Segment::new(start_col as f64 / t as f64, (start_col + width) as f64 / t as f64)?,
            v.actions[i].1,
        ));
        blocks.push((width, action_blocks[i].clone()));
        placed += width;
    }
    if bg_at < n_bg {
        blocks.push((n_bg - bg_at, bg_width(bg_at, n_bg)));
    }
    let refs: Vec<(usize, &[f64])> = blocks.iter().map(|(w, b)| (*w, b.as_slice())).collect();
    let out = splice_blocks(&refs, c, t);
    Ok(LabeledVideo::new(
        &v.id,
        FeatureSequence::new(Tensor::leaf(vec![c, t], out)?)?,
        actions,
    ))
}

/// Deterministic crop to the snippet window `[w0, w1)`: actions keeping
/// less than half of their quantized extent are dropped, survivors are
/// rescaled to the window, features are resized back to the original
/// snippet count by nearest-neighbor. Returns `None` when no action
/// survives.
pub fn crop_to_window(v: &LabeledVideo, w0: usize, w1: usize) -> Result<Option<LabeledVideo>> {
    let (c, t, data) = v.columns();
    if w0 >= w1 || w1 > t {
        return Err(crate::error::CtcnError::InvalidArgument(format!(
            "crop window [{w0}, {w1}) invalid for {t} snippets"
        )));
    }
    let len = w1 - w0;
    let mut actions = Vec::new();
    for (seg, label) in &v.actions {
        let (a, b) = quantize(seg, t);
        let cs = a.max(w0);
        let ce = b.min(w1);
        if ce <= cs || 2 * (ce - cs) < b - a {
            continue;
        }
        actions.push((
            Segment::new(
                (cs - w0) as f64 / len as f64,
                (ce - w0) as f64 / len as f64,
            )?,
            *label,
        ));
    }
    if actions.is_empty() {
        return Ok(None);
    }
    // Nearest-neighbor resize of the window back to t snippets.
    let mut out = vec![0.0; c * t];
    for j in 0..t {
        let src = w0 + (j * len) / t;
        for ci in 0..c {
            out[ci * t + j] = data[ci * t + src];
        }
    }
    Ok(Some(LabeledVideo::new(
        &v.id,
        FeatureSequence::new(Tensor::leaf(vec![c, t], out)?)?,
        actions,
    )))
}

/// Crop a random temporal window via [`crop_to_window`], resampling the
/// window (up to 20 tries) until at least one action survives; falls back
/// to the identity when every try fails or the video has no actions.
pub fn random_crop(v: &LabeledVideo, rng: &mut ChaCha8Rng) -> Result<LabeledVideo> {
    let t = v.features.snippets();
    if v.actions.is_empty() {
        return Ok(v.clone());
    }
    for _ in 0..20 {
        let len = rng.gen_range(1..=t);
        let start = rng.gen_range(0..=t - len);
        if let Some(out) = crop_to_window(v, start, start + len)? {
            return Ok(out);
        }
    }
    Ok(v.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn video(t: usize, actions: Vec<(f64, f64, usize)>) -> LabeledVideo {
        let c = 3;
        // Distinct values per column so feature surgery is traceable.
        let data: Vec<f64> = (0..c)
            .flat_map(|ci| (0..t).map(move |j| (ci * 1000 + j) as f64))
            .collect();
        LabeledVideo::new(
            "v",
            FeatureSequence::new(Tensor::leaf(vec![c, t], data).unwrap()).unwrap(),
            actions
                .into_iter()
                .map(|(s, e, l)| (Segment::new(s, e).unwrap(), l))
                .collect(),
        )
    }

    fn snippet_durations(v: &LabeledVideo, t: usize) -> Vec<usize> {
        let mut d: Vec<usize> = v
            .actions
            .iter()
            .map(|(s, _)| {
                let (a, b) = quantize(s, t);
                b - a
            })
            .collect();
        d.sort_unstable();
        d
    }

    #[test]
    fn move_no_actions_unchanged() {
        let v = video(16, vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = random_move(&v, &mut rng).unwrap();
        assert_eq!(out.features.values.data(), v.features.values.data());
        assert!(out.actions.is_empty());
    }

    #[test]
    fn move_full_video_action_unchanged() {
        let v = video(16, vec![(0.0, 1.0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = random_move(&v, &mut rng).unwrap();
        assert_eq!(out.features.values.data(), v.features.values.data());
    }

    #[test]
    fn move_preserves_durations_labels_and_content() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = 32;
            let n = rng.gen_range(1..=3);
            let mut actions = Vec::new();
            let mut cursor = 0.0;
            for _ in 0..n {
                let s = rng.gen_range(cursor..0.8f64.max(cursor + 0.01));
                let e = rng.gen_range((s + 2.0 / t as f64).min(0.99)..1.0);
                actions.push((s, e, rng.gen_range(1..=3)));
                cursor = e;
                if cursor > 0.75 {
                    break;
                }
            }
            let v = video(t, actions);
            let out = random_move(&v, &mut rng).unwrap();

            assert_eq!(out.features.values.shape(), v.features.values.shape());
            assert_eq!(out.actions.len(), v.actions.len());
            assert_eq!(snippet_durations(&out, t), snippet_durations(&v, t));
            let mut la: Vec<usize> = v.actions.iter().map(|a| a.1).collect();
            let mut lb: Vec<usize> = out.actions.iter().map(|a| a.1).collect();
            la.sort_unstable();
            lb.sort_unstable();
            assert_eq!(la, lb);

            // Non-overlapping and sorted.
            for w in out.actions.windows(2) {
                assert!(w[1].0.start >= w[0].0.end - 1e-12);
            }

            // Action feature content preserved bitwise: compare column sets.
            let data_in = v.features.values.data();
            let data_out = out.features.values.data();
            let c = v.features.concepts();
            let pull = |data: &[f64], acts: &Vec<(Segment, usize)>| -> Vec<u64> {
                let mut cols = Vec::new();
                for (s, _) in acts {
                    let (a, b) = quantize(s, t);
                    for ci in 0..c {
                        for j in a..b {
                            cols.push(data[ci * t + j].to_bits());
                        }
                    }
                }
                cols
            };
            assert_eq!(pull(&data_in, &v.actions), pull(&data_out, &out.actions));

            // Whole-column multiset preserved (background included).
            let mut mi: Vec<u64> = data_in.iter().map(|v| v.to_bits()).collect();
            let mut mo: Vec<u64> = data_out.iter().map(|v| v.to_bits()).collect();
            mi.sort_unstable();
            mo.sort_unstable();
            assert_eq!(mi, mo);
        }
    }

    #[test]
    fn move_is_deterministic() {
        let v = video(32, vec![(0.1, 0.3, 1), (0.5, 0.6, 2)]);
        let a = random_move(&v, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_move(&v, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.features.values.data(), b.features.values.data());
        assert_eq!(a.actions.len(), b.actions.len());
        for (x, y) in a.actions.iter().zip(&b.actions) {
            assert_eq!(x.0.start, y.0.start);
            assert_eq!(x.0.end, y.0.end);
        }
    }

    #[test]
    fn crop_full_window_is_identity() {
        let t = 16;
        let v = video(t, vec![(0.25, 0.75, 1)]);
        let out = crop_to_window(&v, 0, t).unwrap().unwrap();
        assert_eq!(out.features.values.data(), v.features.values.data());
        assert_eq!(out.actions.len(), 1);
        assert_eq!(out.actions[0].0.start, v.actions[0].0.start);
        assert_eq!(out.actions[0].0.end, v.actions[0].0.end);
    }

    #[test]
    fn crop_contained_action_keeps_full_extent() {
        let t = 16;
        let v = video(t, vec![(0.5, 0.75, 2)]);
        // Window [4, 16) contains the quantized action [8, 12) entirely.
        let out = crop_to_window(&v, 4, t).unwrap().unwrap();
        assert_eq!(out.actions.len(), 1);
        let (seg, label) = &out.actions[0];
        assert_eq!(*label, 2);
        assert!((seg.start - 4.0 / 12.0).abs() < 1e-12);
        assert!((seg.end - 8.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn crop_drops_subhalf_and_keeps_half() {
        let t = 16;
        // Quantized action [4, 12): window [10, 16) keeps 2 of 8 -> dropped.
        let v = video(t, vec![(0.25, 0.75, 1)]);
        assert!(crop_to_window(&v, 10, t).unwrap().is_none());
        // Window [8, 16) keeps exactly 4 of 8 -> survives.
        let out = crop_to_window(&v, 8, t).unwrap().unwrap();
        assert_eq!(out.actions.len(), 1);
        assert_eq!(out.actions[0].0.start, 0.0);
        assert_eq!(out.actions[0].0.end, 0.5);
        assert!(crop_to_window(&v, 0, 17).is_err());
    }

    #[test]
    fn crop_survivors_retain_at_least_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut survived = 0;
        for _ in 0..1000 {
            let t = 32;
            let s = rng.gen_range(0.0..0.7);
            let e = rng.gen_range(s + 0.1..1.0);
            let v = video(t, vec![(s, e, 1)]);
            let (a, b) = quantize(&v.actions[0].0, t);
            let len = rng.gen_range(1..=t);
            let w0 = rng.gen_range(0..=t - len);
            let w1 = w0 + len;
            match crop_to_window(&v, w0, w1).unwrap() {
                None => {
                    let inter = b.min(w1).saturating_sub(a.max(w0));
                    assert!(2 * inter < b - a);
                }
                Some(out) => {
                    survived += 1;
                    assert_eq!(out.actions.len(), 1);
                    let seg = &out.actions[0].0;
                    let kept_cols = (seg.length() * len as f64).round();
                    assert!(2.0 * kept_cols >= (b - a) as f64 - 1e-9);
                    assert_eq!(out.features.snippets(), t);
                }
            }
        }
        assert!(survived > 200, "only {survived} windows survived");
    }

    #[test]
    fn random_crop_always_keeps_an_action() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = video(32, vec![(0.1, 0.3, 1), (0.6, 0.9, 2)]);
            let out = random_crop(&v, &mut rng).unwrap();
            assert!(!out.actions.is_empty());
            assert_eq!(out.features.snippets(), 32);
        }
    }

    #[test]
    fn crop_is_deterministic() {
        let v = video(32, vec![(0.2, 0.5, 1)]);
        let a = random_crop(&v, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_crop(&v, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.features.values.data(), b.features.values.data());
    }
}
