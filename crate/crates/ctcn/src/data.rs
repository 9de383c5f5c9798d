//! On-disk formats: CTF1 feature files, annotation JSON, detection JSON
//! lines, evaluation reports and CSV tables.
//!
//! CTF1 layout: magic `CTF1`, u32 LE concept count, u32 LE snippet count,
//! then `c * t` little-endian f32 values, concept-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::LabeledVideo;
use crate::conv::FeatureSequence;
use crate::error::{CtcnError, Result};
use crate::eval::{Detection, EvalReport, GroundTruth};
use crate::targets::Segment;
use crate::tensor::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"CTF1";

pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(features.concepts() as u32).to_le_bytes())?;
    w.write_all(&(features.snippets() as u32).to_le_bytes())?;
    for v in features.values.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(CtcnError::Dataset(format!(
            "{}: bad feature magic {magic:?}",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let c = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let t = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(c * t);
    for _ in 0..c * t {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    FeatureSequence::new(Tensor::leaf(vec![c, t], data)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionRecord {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub snippets: usize,
    pub actions: Vec<ActionRecord>,
}

/// One split's annotation file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Annotations {
    pub num_classes: usize,
    pub videos: Vec<VideoRecord>,
}

impl Annotations {
    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            for a in &v.actions {
                Segment::new(a.start, a.end)?;
                if a.label == 0 || a.label > self.num_classes {
                    return Err(CtcnError::Dataset(format!(
                        "video {}: label {} outside 1..={}",
                        v.id, a.label, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ground_truths(&self) -> Result<Vec<GroundTruth>> {
        self.validate()?;
        let mut out = Vec::new();
        for v in &self.videos {
            for a in &v.actions {
                out.push(GroundTruth {
                    video: v.id.clone(),
                    label: a.label,
                    segment: Segment::new(a.start, a.end)?,
                });
            }
        }
        Ok(out)
    }
}

pub fn write_annotations(path: &Path, ann: &Annotations) -> Result<()> {
    ann.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, ann)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Annotations> {
    let ann: Annotations = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    ann.validate()?;
    Ok(ann)
}

/// Feature file path for one video id inside a dataset directory.
pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("features").join(format!("{id}.ctf"))
}

/// Load every video of a split: annotations plus its feature file.
pub fn load_split(dir: &Path, split: &str) -> Result<(Annotations, Vec<LabeledVideo>)> {
    let ann = read_annotations(&dir.join(format!("{split}.json")))?;
    let mut videos = Vec::with_capacity(ann.videos.len());
    for v in &ann.videos {
        let features = read_features(&feature_path(dir, &v.id))?;
        if features.snippets() != v.snippets {
            return Err(CtcnError::Dataset(format!(
                "video {}: annotation says {} snippets, feature file has {}",
                v.id,
                v.snippets,
                features.snippets()
            )));
        }
        let actions = v
            .actions
            .iter()
            .map(|a| Ok((Segment::new(a.start, a.end)?, a.label)))
            .collect::<Result<Vec<_>>>()?;
        videos.push(LabeledVideo::new(&v.id, features, actions));
    }
    Ok((ann, videos))
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    video: String,
    label: usize,
    score: f64,
    start: f64,
    end: f64,
}

/// JSON lines, one object per detection.
pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in dets {
        let rec = DetectionRecord {
            video: d.video.clone(),
            label: d.label,
            score: d.score,
            start: d.segment.start,
            end: d.segment.end,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| {
            CtcnError::Dataset(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        if !rec.score.is_finite() {
            return Err(CtcnError::Dataset(format!(
                "{}:{}: non-finite score",
                path.display(),
                i + 1
            )));
        }
        out.push(Detection {
            video: rec.video,
            label: rec.label,
            score: rec.score,
            segment: Segment::new(rec.start, rec.end)?,
        });
    }
    Ok(out)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_ar_an_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "an,ar")?;
    for (an, ar) in curve {
        writeln!(w, "{an},{ar}")?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the training loss log (the quantities of the loss curves).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_cls: f64,
    pub train_loc: f64,
    pub val_cls: f64,
    pub val_loc: f64,
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_cls,train_loc,val_cls,val_loc")?;
    for e in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.epoch, e.train_cls, e.train_loc, e.val_cls, e.val_loc
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctf");
        let f = FeatureSequence::new(
            Tensor::leaf(vec![2, 3], vec![1.0, -0.5, 0.25, 3.0, 0.0, -2.0]).unwrap(),
        )
        .unwrap();
        write_features(&path, &f).unwrap();
        let g = read_features(&path).unwrap();
        assert_eq!(g.concepts(), 2);
        assert_eq!(g.snippets(), 3);
        assert_eq!(g.values.data(), f.values.data());
        // Header check: 4 magic + 8 extents + 6 * 4 payload bytes.
        assert_eq!(std::fs::read(&path).unwrap().len(), 4 + 8 + 24);
    }

    #[test]
    fn feature_file_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ctf");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_features(&path).is_err());
    }

    #[test]
    fn annotations_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let ann = Annotations {
            num_classes: 2,
            videos: vec![VideoRecord {
                id: "v0".into(),
                snippets: 64,
                actions: vec![ActionRecord {
                    start: 0.25,
                    end: 0.5,
                    label: 2,
                }],
            }],
        };
        write_annotations(&path, &ann).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back.num_classes, 2);
        assert_eq!(back.videos[0].actions[0].label, 2);

        let bad = Annotations {
            num_classes: 1,
            videos: vec![VideoRecord {
                id: "v0".into(),
                snippets: 64,
                actions: vec![ActionRecord {
                    start: 0.25,
                    end: 0.5,
                    label: 2,
                }],
            }],
        };
        assert!(write_annotations(&dir.path().join("bad.json"), &bad).is_err());
    }

    #[test]
    fn detections_jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.jsonl");
        let dets = vec![
            Detection {
                video: "a".into(),
                label: 1,
                score: 0.75,
                segment: Segment::new(0.1, 0.4).unwrap(),
            },
            Detection {
                video: "b".into(),
                label: 2,
                score: 0.5,
                segment: Segment::new(0.6, 0.9).unwrap(),
            },
        ];
        write_detections(&path, &dets).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"video\":\"a\""));
        let back = read_detections(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].segment.end, 0.9);
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ar_an.csv");
        write_ar_an_csv(&p, &[(1.0, 0.25), (5.0, 0.5)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "an,ar\n1,0.25\n5,0.5\n");

        let p2 = dir.path().join("loss.csv");
        write_loss_log(
            &p2,
            &[EpochLog {
                epoch: 1,
                train_cls: 0.5,
                train_loc: 0.25,
                val_cls: 0.6,
                val_loc: 0.3,
            }],
        )
        .unwrap();
        let text2 = std::fs::read_to_string(&p2).unwrap();
        assert!(text2.starts_with("epoch,train_cls"));
        assert!(text2.contains("1,0.5,0.25,0.6,0.3"));
    }
}
