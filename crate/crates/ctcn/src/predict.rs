//! Decoding network outputs into scored detections: per-anchor class
//! confidences, offset decode against the default anchor segments,
//! background filtering, then per-class Soft-NMS.

use crate::conv::FeatureSequence;
use crate::error::Result;
use crate::eval::{soft_nms_grouped, Detection};
use crate::network::{ForwardMode, Network, PyramidOutputs};
use crate::targets::{class_confidence, decode};
use crate::train::RunConfig;

/// One decoded anchor prediction before NMS.
#[derive(Clone, Debug)]
pub struct AnchorPrediction {
    pub flat_index: usize,
    /// Softmax over background + classes; index 0 is background.
    pub confidences: Vec<f64>,
    pub beta_hat: f64,
    pub gamma_hat: f64,
}

/// Read every anchor's logits and offsets out of the pyramid maps, in
/// flat-index order.
pub fn decode_outputs(
    outputs: &PyramidOutputs,
    cfg: &crate::anchors::AnchorConfig,
) -> Result<Vec<AnchorPrediction>> {
    let a1 = outputs.num_classes + 1;
    let big_m = outputs.anchors_per_cell;
    let mut preds = Vec::with_capacity(cfg.total_anchors());
    for s in &outputs.scales {
        let cells = cfg.cells(s.scale)?;
        let cls = s.cls.data();
        let reg = s.reg.data();
        for j in 0..cells {
            for m in 0..big_m {
                let logits: Vec<f64> = (0..a1)
                    .map(|a| cls[(a * big_m + m) * cells + j])
                    .collect();
                preds.push(AnchorPrediction {
                    flat_index: cfg.flat_index(s.scale, j + 1, m + 1),
                    confidences: class_confidence(&logits),
                    beta_hat: reg[m * cells + j],
                    gamma_hat: reg[(big_m + m) * cells + j],
                });
            }
        }
    }
    preds.sort_by_key(|p| p.flat_index);
    Ok(preds)
}

/// Full prediction for one video: eval-mode forward pass, decode, drop
/// anchors whose argmax class is background, emit one detection per
/// non-background class with confidence at or above the floor, then
/// per-class Soft-NMS and merge.
pub fn predict_video(
    net: &Network,
    cfg: &RunConfig,
    video_id: &str,
    features: &FeatureSequence,
) -> Result<Vec<Detection>> {
    let acfg = cfg.network.anchor_config()?;
    let anchors = acfg.enumerate_anchors();
    let outputs = net.forward(features, ForwardMode::Eval)?;
    let preds = decode_outputs(&outputs, &acfg)?;

    let mut raw = Vec::new();
    for (anchor, p) in anchors.iter().zip(&preds) {
        let argmax = p
            .confidences
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == 0 {
            continue;
        }
        let segment = decode(anchor, p.beta_hat, p.gamma_hat);
        for (label, &conf) in p.confidences.iter().enumerate().skip(1) {
            if conf >= cfg.confidence_floor {
                raw.push(Detection {
                    video: video_id.to_string(),
                    label,
                    score: conf,
                    segment,
                });
            }
        }
    }
    soft_nms_grouped(&raw, cfg.nms_sigma, cfg.nms_score_floor)
}

/// Predict every video of a labeled split and merge the results.
pub fn predict_split(
    net: &Network,
    cfg: &RunConfig,
    videos: &[crate::augment::LabeledVideo],
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for v in videos {
        out.extend(predict_video(net, cfg, &v.id, &v.features)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::desk_scale();
        cfg.network.concepts = 4;
        cfg.network.stage_potentials = [2, 2, 2, 2];
        cfg.network.pyramid_potentials = 2;
        cfg
    }

    fn rand_features(cfg: &RunConfig, seed: u64) -> FeatureSequence {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.network.concepts * cfg.network.input_snippets;
        FeatureSequence::new(
            crate::tensor::Tensor::leaf(
                vec![cfg.network.concepts, cfg.network.input_snippets],
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zeroed_network_yields_no_detections_at_high_floor() {
        let mut cfg = tiny_cfg();
        cfg.confidence_floor = 0.5;
        let net = build_network(&cfg.network, 1).unwrap();
        for p in net.parameters() {
            p.tensor.set_data(vec![0.0; p.tensor.numel()]).unwrap();
        }
        // Uniform softmax over A+1 = 4 entries gives 0.25 < 0.5, and the
        // background argmax filter also fires on exact ties.
        let dets = predict_video(&net, &cfg, "v", &rand_features(&cfg, 2)).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn decode_covers_every_anchor_once() {
        let cfg = tiny_cfg();
        let net = build_network(&cfg.network, 3).unwrap();
        let acfg = cfg.network.anchor_config().unwrap();
        let outputs = net
            .forward(&rand_features(&cfg, 4), ForwardMode::Eval)
            .unwrap();
        let preds = decode_outputs(&outputs, &acfg).unwrap();
        assert_eq!(preds.len(), acfg.total_anchors());
        for (i, p) in preds.iter().enumerate() {
            assert_eq!(p.flat_index, i);
            let sum: f64 = p.confidences.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_deterministic_and_valid() {
        let cfg = tiny_cfg();
        let net = build_network(&cfg.network, 5).unwrap();
        let f = rand_features(&cfg, 6);
        let a = predict_video(&net, &cfg, "v", &f).unwrap();
        let b = predict_video(&net, &cfg, "v", &f).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.score.to_bits(), y.score.to_bits());
            assert_eq!(x.segment.start, y.segment.start);
        }
        for d in &a {
            assert!(d.label >= 1 && d.label <= cfg.network.num_classes);
            assert!(d.score.is_finite());
            assert!(d.segment.start >= 0.0 && d.segment.end <= 1.0);
        }
    }

    #[test]
    fn shape_mismatch_names_expected_snippets() {
        let cfg = tiny_cfg();
        let net = build_network(&cfg.network, 7).unwrap();
        let wrong = FeatureSequence::new(crate::tensor::Tensor::zeros(vec![
            cfg.network.concepts,
            32,
        ]))
        .unwrap();
        let err = predict_video(&net, &cfg, "v", &wrong).unwrap_err().to_string();
        assert!(err.contains("64"), "{err}");
    }
}
