//! Tracklet datasets: the JSON schema, validation, uniform frame sampling,
//! stratified splitting, and the synthetic scene generator.

pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_generate, SyntheticConfig, SyntheticTask};

/// Pixel bounding box: top-left corner and extent, serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox {
            x: a[0],
            y: a[1],
            w: a[2],
            h: a[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTrack {
    pub class_id: usize,
    pub is_human: bool,
    pub affordance: Option<usize>,
    pub boxes: Vec<BBox>,
    /// Per-frame raw visual vectors, attached from a [`crate::features::VisualSource`].
    pub visual: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub activity: usize,
    pub instances: Vec<InstanceTrack>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    class_id: usize,
    is_human: bool,
    affordance: Option<usize>,
    boxes: Vec<Option<BBox>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    video_id: String,
    width: u32,
    height: u32,
    activity: Option<usize>,
    instances: Vec<RawInstance>,
}

impl VideoSample {
    pub fn frame_count(&self) -> usize {
        self.instances.first().map_or(0, |t| t.boxes.len())
    }

    pub fn human_index(&self) -> Option<usize> {
        self.instances.iter().position(|t| t.is_human)
    }

    pub fn human_flags(&self) -> Vec<bool> {
        self.instances.iter().map(|t| t.is_human).collect()
    }

    /// Checks every structural invariant of a sample.
    pub fn validate(&self) -> Result<()> {
        let id = &self.video_id;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Data(format!("video {id}: image dimensions must be positive")));
        }
        if self.instances.len() < 2 {
            return Err(Error::Data(format!(
                "video {id}: need one human and at least one object, got {} instances",
                self.instances.len()
            )));
        }
        let humans = self.instances.iter().filter(|t| t.is_human).count();
        if humans != 1 {
            return Err(Error::Data(format!(
                "video {id}: exactly one human track required, found {humans}"
            )));
        }
        let frames = self.frame_count();
        if frames == 0 {
            return Err(Error::Data(format!("video {id}: empty tracks")));
        }
        for (m, t) in self.instances.iter().enumerate() {
            if t.boxes.len() != frames {
                return Err(Error::Data(format!(
                    "video {id}: missing box at frame {}, instance {m}",
                    t.boxes.len().min(frames)
                )));
            }
            if let Some(v) = &t.visual {
                if v.len() != frames {
                    return Err(Error::Data(format!(
                        "video {id}: instance {m} has {} visual vectors for {frames} frames",
                        v.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn from_raw(raw: RawSample) -> Result<Self> {
        let id = raw.video_id.clone();
        let activity = raw
            .activity
            .ok_or_else(|| Error::Data(format!("video {id}: missing activity label")))?;
        let frames = raw.instances.iter().map(|i| i.boxes.len()).max().unwrap_or(0);
        let mut instances = Vec::with_capacity(raw.instances.len());
        for (m, inst) in raw.instances.into_iter().enumerate() {
            let mut boxes = Vec::with_capacity(frames);
            for t in 0..frames {
                match inst.boxes.get(t).copied().flatten() {
                    Some(b) => boxes.push(b),
                    None => {
                        return Err(Error::Data(format!(
                            "video {id}: missing box at frame {t}, instance {m}"
                        )))
                    }
                }
            }
            instances.push(InstanceTrack {
                class_id: inst.class_id,
                is_human: inst.is_human,
                affordance: inst.affordance,
                boxes,
                visual: None,
            });
        }
        let s = VideoSample {
            video_id: raw.video_id,
            width: raw.width,
            height: raw.height,
            activity,
            instances,
        };
        s.validate()?;
        Ok(s)
    }

    fn to_raw(&self) -> RawSample {
        RawSample {
            video_id: self.video_id.clone(),
            width: self.width,
            height: self.height,
            activity: Some(self.activity),
            instances: self
                .instances
                .iter()
                .map(|t| RawInstance {
                    class_id: t.class_id,
                    is_human: t.is_human,
                    affordance: t.affordance,
                    boxes: t.boxes.iter().copied().map(Some).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        VideoSample::from_raw(serde_json::from_str(text)?)
    }
}

/// Parses a dataset: either a JSON array of samples or one sample per line.
/// Blank input yields an empty dataset.
pub fn parse_dataset(text: &str) -> Result<Vec<VideoSample>> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        let raws: Vec<RawSample> = serde_json::from_str(trimmed)?;
        return raws.into_iter().map(VideoSample::from_raw).collect();
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(VideoSample::from_json)
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<VideoSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Serializes as JSON lines, one sample per line.
pub fn dataset_to_jsonl(samples: &[VideoSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_json());
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[VideoSample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_jsonl(samples)).map_err(|e| Error::io(path, e))
}

/// Frame indices `floor(i * L / T)` for `i in 0..T`.
pub fn uniform_indices(len: usize, frames: usize) -> Vec<usize> {
    (0..frames).map(|i| i * len / frames).collect()
}

/// Resamples every track (boxes and any visual vectors) to exactly `frames` frames.
pub fn uniform_sample_frames(sample: &VideoSample, frames: usize) -> Result<VideoSample> {
    let len = sample.frame_count();
    if len == 0 {
        return Err(Error::Data(format!("video {}: no frames", sample.video_id)));
    }
    let idx = uniform_indices(len, frames);
    let mut out = sample.clone();
    for t in &mut out.instances {
        t.boxes = idx.iter().map(|&i| t.boxes[i]).collect();
        if let Some(v) = &t.visual {
            t.visual = Some(idx.iter().map(|&i| v[i].clone()).collect());
        }
    }
    Ok(out)
}

/// Class-stratified seeded split: each class contributes
/// `round(ratio * count)` samples to the first part.
pub fn dataset_split(
    dataset: &[VideoSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<VideoSample>, Vec<VideoSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        by_class.entry(s.activity).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} sample(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64 * ratio).round() as usize).clamp(1, idx.len() - 1);
        first.extend_from_slice(&idx[..cut]);
        second.extend_from_slice(&idx[cut..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((
        first.into_iter().map(|i| dataset[i].clone()).collect(),
        second.into_iter().map(|i| dataset[i].clone()).collect(),
    ))
}
