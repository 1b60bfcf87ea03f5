//! Per-instance, per-frame input features and the two stream inputs.
//!
//! Node rows are ordered `t * M + m` (frame-major) everywhere. A batch of
//! videos stacks their node rows in order.

pub mod visual;

use rand::Rng;

use crate::config::{ModelDims, StreamSelection};
use crate::data::{uniform_sample_frames, BBox, VideoSample};
use crate::error::{Error, Result};
use crate::layers::{Forward, Linear, LinearBnRelu};
use crate::numkernel::{ParamId, ParamStore, Tensor, Var};

pub use visual::{VisualFeatureFile, VisualRecord, VisualSource};

/// Box center and extent normalized by the image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialQuad {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

impl SpatialQuad {
    /// Clamps the box to the image before normalizing.
    pub fn from_box(b: &BBox, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let x0 = b.x.clamp(0.0, width);
        let x1 = (b.x + b.w).clamp(0.0, width).max(x0);
        let y0 = b.y.clamp(0.0, height);
        let y1 = (b.y + b.h).clamp(0.0, height).max(y0);
        Ok(SpatialQuad {
            x_c: (x0 + x1) / 2.0 / width,
            y_c: (y0 + y1) / 2.0 / height,
            w: (x1 - x0) / width,
            h: (y1 - y0) / height,
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w, self.h]
    }
}

/// A sample resampled to the model's frame count with features ready.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    pub video_id: String,
    pub frames: usize,
    pub instances: usize,
    pub human_flags: Vec<bool>,
    pub class_ids: Vec<usize>,
    /// `frames * instances` quads, frame-major.
    pub quads: Vec<SpatialQuad>,
    /// `frames * instances` rows of raw visual vectors, frame-major.
    pub visual: Option<Tensor>,
    pub activity: usize,
    pub affordances: Vec<Option<usize>>,
}

impl PreparedVideo {
    /// Attaches visual vectors (indexed by original frame), samples
    /// `frames` frames uniformly and normalizes the boxes.
    pub fn prepare(sample: &VideoSample, frames: usize, visual: Option<&VisualSource>) -> Result<Self> {
        sample.validate()?;
        let mut s = sample.clone();
        if let Some(src) = visual {
            if s.instances.iter().any(|t| t.visual.is_none()) {
                src.attach(&mut s)?;
            }
        }
        let s = uniform_sample_frames(&s, frames)?;
        let m = s.instances.len();
        let (w, h) = (f64::from(s.width), f64::from(s.height));
        let mut quads = Vec::with_capacity(frames * m);
        for t in 0..frames {
            for track in &s.instances {
                quads.push(SpatialQuad::from_box(&track.boxes[t], w, h)?);
            }
        }
        let visual = if s.instances.iter().all(|t| t.visual.is_some()) {
            let dim = s.instances[0].visual.as_ref().expect("checked")[0].len();
            let mut rows = Vec::with_capacity(frames * m * dim);
            for t in 0..frames {
                for (mi, track) in s.instances.iter().enumerate() {
                    let v = &track.visual.as_ref().expect("checked")[t];
                    if v.len() != dim {
                        return Err(Error::Data(format!(
                            "video {}: visual vector length {} at frame {t}, instance {mi}; expected {dim}",
                            s.video_id,
                            v.len()
                        )));
                    }
                    rows.extend_from_slice(v);
                }
            }
            Some(Tensor::matrix(frames * m, dim, rows))
        } else {
            None
        };
        Ok(PreparedVideo {
            video_id: s.video_id.clone(),
            frames,
            instances: m,
            human_flags: s.human_flags(),
            class_ids: s.instances.iter().map(|t| t.class_id).collect(),
            quads,
            visual,
            activity: s.activity,
            affordances: s.instances.iter().map(|t| t.affordance).collect(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.frames * self.instances
    }

    pub fn node(&self, t: usize, m: usize) -> usize {
        t * self.instances + m
    }

    pub fn human_index(&self) -> usize {
        self.human_flags.iter().position(|&h| h).expect("validated sample")
    }

    pub fn object_indices(&self) -> Vec<usize> {
        (0..self.instances).filter(|&m| !self.human_flags[m]).collect()
    }

    /// Relabels instances: new instance `i` is old instance `perm[i]`.
    pub fn permute_instances(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.instances);
        let m = self.instances;
        let remap_rows = |src: &[SpatialQuad]| -> Vec<SpatialQuad> {
            (0..self.frames)
                .flat_map(|t| perm.iter().map(move |&p| src[t * m + p]))
                .collect()
        };
        let visual = self.visual.as_ref().map(|v| {
            let d = v.cols();
            let mut rows = Vec::with_capacity(v.len());
            for t in 0..self.frames {
                for &p in perm {
                    rows.extend_from_slice(v.row(t * m + p));
                }
            }
            Tensor::matrix(v.rows(), d, rows)
        });
        PreparedVideo {
            video_id: self.video_id.clone(),
            frames: self.frames,
            instances: m,
            human_flags: perm.iter().map(|&p| self.human_flags[p]).collect(),
            class_ids: perm.iter().map(|&p| self.class_ids[p]).collect(),
            quads: remap_rows(&self.quads),
            visual,
            activity: self.activity,
            affordances: perm.iter().map(|&p| self.affordances[p]).collect(),
        }
    }
}

/// Node features of both streams for a batch of videos, rows stacked.
#[derive(Clone, Copy, Debug)]
pub struct StreamInputs {
    /// `[visual ‖ spatial]` rows.
    pub visual_spatial: Option<Var>,
    /// `[spatial ‖ semantic]` rows.
    pub spatial_semantic: Option<Var>,
}

/// Learnable input encoders shared by both streams.
#[derive(Clone, Debug)]
pub struct FeatureParams {
    pub dims: ModelDims,
    pub object_classes: usize,
    pub spatial1: LinearBnRelu,
    pub spatial2: LinearBnRelu,
    pub semantic: ParamId,
    pub visual: Linear,
}

impl FeatureParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dims: ModelDims,
        object_classes: usize,
        use_norm: bool,
        rng: &mut R,
    ) -> Self {
        let spatial1 =
            LinearBnRelu::new(store, "features.spatial1", 4, dims.spatial_hidden, use_norm, rng);
        let spatial2 = LinearBnRelu::new(
            store,
            "features.spatial2",
            dims.spatial_hidden,
            dims.spatial,
            use_norm,
            rng,
        );
        let semantic = {
            let n = object_classes * dims.semantic;
            let values = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            store.add(
                "features.semantic",
                Tensor::new(vec![object_classes, dims.semantic], values).expect("shape"),
            )
        };
        let visual = Linear::new(store, "features.visual", dims.raw_visual, dims.visual, rng);
        FeatureParams {
            dims,
            object_classes,
            spatial1,
            spatial2,
            semantic,
            visual,
        }
    }

    /// Two-layer encoder over normalized quads.
    pub fn encode_spatial(&self, f: &mut Forward, quads: &[SpatialQuad]) -> Result<Var> {
        let rows: Vec<f64> = quads.iter().flat_map(|q| q.as_array()).collect();
        let x = f.tape.constant(Tensor::matrix(quads.len(), 4, rows));
        let h = self.spatial1.forward(f, x)?;
        self.spatial2.forward(f, h)
    }

    pub fn lookup_semantic(&self, f: &mut Forward, class_ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = class_ids.iter().find(|&&c| c >= self.object_classes) {
            return Err(Error::Index(format!(
                "class id {bad} outside the {}-row semantic table",
                self.object_classes
            )));
        }
        let table = f.tape.param(self.semantic);
        f.tape.gather_rows(table, class_ids)
    }

    pub fn project_visual(&self, f: &mut Forward, raw: Tensor) -> Result<Var> {
        if raw.cols() != self.dims.raw_visual {
            return Err(Error::shape("project_visual", &[self.dims.raw_visual], raw.shape()));
        }
        let x = f.tape.constant(raw);
        self.visual.forward(f, x)
    }

    pub fn assemble(
        &self,
        f: &mut Forward,
        videos: &[&PreparedVideo],
        streams: StreamSelection,
    ) -> Result<StreamInputs> {
        let quads: Vec<SpatialQuad> = videos.iter().flat_map(|v| v.quads.iter().copied()).collect();
        let spatial = self.encode_spatial(f, &quads)?;

        let visual_spatial = if streams.visual() {
            let mut rows = Vec::new();
            let mut n = 0;
            for v in videos {
                let vis = v.visual.as_ref().ok_or_else(|| {
                    Error::Data(format!("video {}: no visual features attached", v.video_id))
                })?;
                rows.extend_from_slice(vis.values());
                n += vis.rows();
                if vis.cols() != self.dims.raw_visual {
                    return Err(Error::shape("assemble", &[self.dims.raw_visual], vis.shape()));
                }
            }
            let vis = self.project_visual(f, Tensor::matrix(n, self.dims.raw_visual, rows))?;
            Some(f.tape.concat_cols(&[vis, spatial])?)
        } else {
            None
        };

        let spatial_semantic = if streams.semantic() {
            let ids: Vec<usize> = videos
                .iter()
                .flat_map(|v| (0..v.frames).flat_map(move |_| v.class_ids.iter().copied()))
                .collect();
            let sem = self.lookup_semantic(f, &ids)?;
            Some(f.tape.concat_cols(&[spatial, sem])?)
        } else {
            None
        };

        Ok(StreamInputs {
            visual_spatial,
            spatial_semantic,
        })
    }
}
