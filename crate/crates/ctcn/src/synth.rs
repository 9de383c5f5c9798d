//! Synthetic dataset generator: each class gets a fixed random prototype
//! vector over concepts; action snippets are prototype plus noise,
//! background snippets are pure noise. Everything is deterministic from
//! the seed, so two runs write byte-identical files.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::LabeledVideo;
use crate::conv::FeatureSequence;
use crate::data::{
    feature_path, write_annotations, write_features, ActionRecord, Annotations, VideoRecord,
};
use crate::error::{CtcnError, Result};
use crate::targets::Segment;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    /// Snippets per video, `t0`.
    pub snippets: usize,
    pub concepts: usize,
    pub classes: usize,
    /// Inclusive range of actions per video.
    pub actions_per_video: (usize, usize),
    /// Inclusive range of action lengths, in snippets.
    pub action_snippets: (usize, usize),
    /// Noise added on top of a class prototype inside actions.
    pub prototype_noise: f64,
    /// Amplitude of pure-noise background snippets.
    pub background_noise: f64,
}

impl SyntheticSpec {
    /// Matches the desk-scale network preset: 64 snippets, 16 concepts,
    /// 3 classes, action lengths with good anchor overlap.
    pub fn desk_scale() -> SyntheticSpec {
        SyntheticSpec {
            num_videos: 80,
            snippets: 64,
            concepts: 16,
            classes: 3,
            actions_per_video: (1, 2),
            action_snippets: (8, 32),
            prototype_noise: 0.1,
            background_noise: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.snippets == 0 || self.concepts == 0 || self.classes == 0 {
            return Err(CtcnError::InvalidArgument(
                "synthetic spec extents must be positive".into(),
            ));
        }
        let (amin, amax) = self.actions_per_video;
        let (lmin, lmax) = self.action_snippets;
        if amin > amax || lmin > lmax {
            return Err(CtcnError::InvalidArgument(
                "synthetic spec ranges must be min <= max".into(),
            ));
        }
        if amax > 0 && lmin < 2 {
            return Err(CtcnError::InvalidArgument(
                "action length must be at least 2 snippets".into(),
            ));
        }
        if amax * lmax > self.snippets {
            return Err(CtcnError::InvalidArgument(format!(
                "infeasible packing: {amax} actions of up to {lmax} snippets cannot fit in {}",
                self.snippets
            )));
        }
        if self.prototype_noise < 0.0 || self.background_noise < 0.0 {
            return Err(CtcnError::InvalidArgument(
                "noise levels must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The class prototype vectors, `classes x concepts`.
pub fn prototypes(spec: &SyntheticSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.classes)
        .map(|_| (0..spec.concepts).map(|_| normal(&mut rng)).collect())
        .collect()
}

/// Generate all videos. Prototypes are drawn first from the same seed, so
/// `prototypes` returns exactly the vectors used here.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<LabeledVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.concepts).map(|_| normal(&mut rng)).collect())
        .collect();

    let t = spec.snippets;
    let c = spec.concepts;
    let mut videos = Vec::with_capacity(spec.num_videos);
    for vi in 0..spec.num_videos {
        let n = rng.gen_range(spec.actions_per_video.0..=spec.actions_per_video.1);
        let lengths: Vec<usize> = (0..n)
            .map(|_| rng.gen_range(spec.action_snippets.0..=spec.action_snippets.1))
            .collect();
        let total: usize = lengths.iter().sum();
        // Distribute the slack among n+1 gaps via sorted offsets.
        let slack = t - total;
        let mut offsets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=slack)).collect();
        offsets.sort_unstable();

        let mut actions: Vec<(usize, usize, usize)> = Vec::with_capacity(n); // (start, len, label)
        let mut placed = 0usize;
        for (i, &off) in offsets.iter().enumerate() {
            let label = rng.gen_range(1..=spec.classes);
            actions.push((off + placed, lengths[i], label));
            placed += lengths[i];
        }

        let mut data = vec![0.0f64; c * t];
        for ci in 0..c {
            for j in 0..t {
                data[ci * t + j] = spec.background_noise * normal(&mut rng);
            }
        }
        for &(start, len, label) in &actions {
            for ci in 0..c {
                for j in start..start + len {
                    data[ci * t + j] =
                        protos[label - 1][ci] + spec.prototype_noise * normal(&mut rng);
                }
            }
        }

        let segs = actions
            .iter()
            .map(|&(start, len, label)| {
                Ok((
                    Segment::new(start as f64 / t as f64, (start + len) as f64 / t as f64)?,
                    label,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        videos.push(LabeledVideo::new(
            &format!("v{vi:04}"),
            FeatureSequence::new(Tensor::leaf(vec![c, t], data)?)?,
            segs,
        ));
    }
    Ok(videos)
}

/// Deterministic 80/20 split by index: the first 80% of videos train.
pub fn split(videos: &[LabeledVideo]) -> (Vec<LabeledVideo>, Vec<LabeledVideo>) {
    let cut = (videos.len() * 4) / 5;
    (videos[..cut].to_vec(), videos[cut..].to_vec())
}

fn annotations_for(videos: &[LabeledVideo], num_classes: usize) -> Annotations {
    Annotations {
        num_classes,
        videos: videos
            .iter()
            .map(|v| VideoRecord {
                id: v.id.clone(),
                snippets: v.features.snippets(),
                actions: v
                    .actions
                    .iter()
                    .map(|(s, l)| ActionRecord {
                        start: s.start,
                        end: s.end,
                        label: *l,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Write the dataset directory: `train.json`, `val.json` and one CTF1
/// feature file per video under `features/`.
pub fn synth_dataset(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<()> {
    let videos = generate(spec, seed)?;
    fs::create_dir_all(dir.join("features"))?;
    let (train, val) = split(&videos);
    write_annotations(&dir.join("train.json"), &annotations_for(&train, spec.classes))?;
    write_annotations(&dir.join("val.json"), &annotations_for(&val, spec.classes))?;
    for v in &videos {
        write_features(&feature_path(dir, &v.id), &v.features)?;
    }
    Ok(())
}
