use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{Error, Result};

/// One raw visual vector keyed by video, frame and instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualRecord {
    pub video_id: String,
    pub frame: usize,
    pub instance: usize,
    pub vector: Vec<f64>,
}

/// Precomputed visual feature file: `{"dim": d, "features": [VisualRecord...]}`.
/// Frame indices refer to the clip before uniform sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualFeatureFile {
    pub dim: usize,
    pub features: Vec<VisualRecord>,
}

impl VisualFeatureFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VisualFeatureFile = serde_json::from_str(&text)?;
        for r in &file.features {
            if r.vector.len() != file.dim {
                return Err(Error::Data(format!(
                    "visual vector for ({}, frame {}, instance {}) has length {}, header says {}",
                    r.video_id,
                    r.frame,
                    r.instance,
                    r.vector.len(),
                    file.dim
                )));
            }
        }
        Ok(file)
    }
}

#[derive(Clone, Debug)]
pub enum VisualSource {
    Ingested {
        dim: usize,
        table: HashMap<(String, usize, usize), Vec<f64>>,
    },
    /// Per-class prototype from a seeded unit Gaussian plus per-frame
    /// Gaussian noise of standard deviation `noise`.
    Synthetic { dim: usize, seed: u64, noise: f64 },
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl VisualSource {
    pub fn ingested(file: VisualFeatureFile) -> Self {
        let table = file
            .features
            .into_iter()
            .map(|r| ((r.video_id, r.frame, r.instance), r.vector))
            .collect();
        VisualSource::Ingested {
            dim: file.dim,
            table,
        }
    }

    pub fn synthetic(dim: usize, seed: u64, noise: f64) -> Self {
        VisualSource::Synthetic { dim, seed, noise }
    }

    pub fn dim(&self) -> usize {
        match self {
            VisualSource::Ingested { dim, .. } | VisualSource::Synthetic { dim, .. } => *dim,
        }
    }

    pub fn prototype(&self, class_id: usize) -> Option<Vec<f64>> {
        match self {
            VisualSource::Synthetic { dim, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[
                    b"prototype",
                    &seed.to_le_bytes(),
                    &(class_id as u64).to_le_bytes(),
                ]));
                Some((0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
            VisualSource::Ingested { .. } => None,
        }
    }

    pub fn vector(
        &self,
        video_id: &str,
        frame: usize,
        instance: usize,
        class_id: usize,
    ) -> Result<Vec<f64>> {
        match self {
            VisualSource::Ingested { table, .. } => table
                .get(&(video_id.to_string(), frame, instance))
                .cloned()
                .ok_or_else(|| {
                    Error::Data(format!(
                        "no visual vector for ({video_id}, frame {frame}, instance {instance})"
                    ))
                }),
            VisualSource::Synthetic { seed, noise, .. } => {
                let mut v = self.prototype(class_id).expect("synthetic prototype");
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[
                    b"noise",
                    &seed.to_le_bytes(),
                    video_id.as_bytes(),
                    &(frame as u64).to_le_bytes(),
                    &(instance as u64).to_le_bytes(),
                ]));
                for x in &mut v {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += noise * z;
                }
                Ok(v)
            }
        }
    }

    /// Fills every track's per-frame visual vectors.
    pub fn attach(&self, sample: &mut VideoSample) -> Result<()> {
        for (m, track) in sample.instances.iter_mut().enumerate() {
            let vecs = (0..track.boxes.len())
                .map(|t| self.vector(&sample.video_id, t, m, track.class_id))
                .collect::<Result<Vec<_>>>()?;
            track.visual = Some(vecs);
        }
        Ok(())
    }
}
