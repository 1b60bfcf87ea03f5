//! The two-stream interaction network, its joint loss and fused predictions.

pub mod birnn;
pub mod stream;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, StreamSelection};
use crate::error::{Error, Result};
use crate::features::{FeatureParams, PreparedVideo};
use crate::graph::AdjacencyExport;
use crate::layers::{Forward, Mode};
use crate::numkernel::{ParamStore, Tensor, Var};

pub use birnn::{BiRnn, Direction, SequenceLayout};
pub use stream::{BatchGraph, GraphEvolve, Head, StreamOutput, StreamParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Visual,
    Semantic,
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(StreamKind::Visual),
            "semantic" => Ok(StreamKind::Semantic),
            other => Err(Error::Config(format!("unknown stream {other:?}"))),
        }
    }
}

/// Loss components of one batch. `total` is exactly
/// `(visual_h + lambda * visual_o) + (semantic_h + lambda * semantic_o)`,
/// with absent terms equal to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub visual_h: f64,
    pub visual_o: f64,
    pub semantic_h: f64,
    pub semantic_o: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn recompose(&self) -> f64 {
        (self.visual_h + self.lambda * self.visual_o) + (self.semantic_h + self.lambda * self.semantic_o)
    }
}

/// Outputs of one batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub graph: BatchGraph,
    pub visual: Option<StreamOutput>,
    pub semantic: Option<StreamOutput>,
}

impl BatchOutput {
    pub fn streams(&self) -> impl Iterator<Item = (StreamKind, &StreamOutput)> {
        [(StreamKind::Visual, &self.visual), (StreamKind::Semantic, &self.semantic)]
            .into_iter()
            .filter_map(|(k, s)| s.as_ref().map(|s| (k, s)))
    }
}

/// Fused class distributions for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub activity: Vec<f64>,
    /// `(instance, distribution)` for every object instance.
    pub affordances: Vec<(usize, Vec<f64>)>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Elementwise mean of two distributions.
pub fn two_stream_fuse(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::shape("two_stream_fuse", &[p.len()], &[q.len()]));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect())
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub store: ParamStore,
    pub features: FeatureParams,
    pub visual: Option<StreamParams>,
    pub semantic: Option<StreamParams>,
}

/// Human distribution per video, then `(instance, distribution)` per object.
type Distributions = (Vec<Vec<f64>>, Vec<Vec<(usize, Vec<f64>)>>);

impl Model {
    /// Builds every parameter from `config.seed`.
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let dims = config.dims;
        let features = FeatureParams::new(&mut store, dims, config.object_classes, config.use_norm, &mut rng);
        let mut stream = |store: &mut ParamStore, prefix: &str, d_in: usize| {
            StreamParams::new(
                store,
                prefix,
                d_in,
                &dims,
                config.activities,
                config.affordances,
                config.use_norm,
                &mut rng,
            )
        };
        let visual = config
            .streams
            .visual()
            .then(|| stream(&mut store, "visual", dims.visual_spatial()));
        let semantic = config
            .streams
            .semantic()
            .then(|| stream(&mut store, "semantic", dims.spatial_semantic()));
        Ok(Model {
            config,
            store,
            features,
            visual,
            semantic,
        })
    }

    /// Copy of this model with only `kind` enabled. Parameters of the other
    /// stream stay in the store but are no longer reached.
    pub fn single_stream(&self, kind: StreamKind) -> Model {
        let mut m = self.clone();
        match kind {
            StreamKind::Visual => {
                m.config.streams = StreamSelection::Visual;
                m.semantic = None;
            }
            StreamKind::Semantic => {
                m.config.streams = StreamSelection::Semantic;
                m.visual = None;
            }
        }
        m
    }

    pub fn stream(&self, kind: StreamKind) -> Option<&StreamParams> {
        match kind {
            StreamKind::Visual => self.visual.as_ref(),
            StreamKind::Semantic => self.semantic.as_ref(),
        }
    }

    /// Checks that a video fits this model's frame count and class tables.
    pub fn check_video(&self, v: &PreparedVideo) -> Result<()> {
        let c = &self.config;
        if v.frames != c.frames {
            return Err(Error::Config(format!(
                "video {} has {} frames, model expects {}",
                v.video_id, v.frames, c.frames
            )));
        }
        if v.activity >= c.activities {
            return Err(Error::Data(format!(
                "video {}: activity {} outside the model's {} classes",
                v.video_id, v.activity, c.activities
            )));
        }
        if let Some(&bad) = v.class_ids.iter().find(|&&k| k >= c.object_classes) {
            return Err(Error::Data(format!(
                "video {}: class id {bad} outside the model's {} object classes",
                v.video_id, c.object_classes
            )));
        }
        if let Some(bad) = v.affordances.iter().flatten().find(|&&a| a >= c.affordances) {
            return Err(Error::Data(format!(
                "video {}: affordance {bad} outside the model's {} classes",
                v.video_id, c.affordances
            )));
        }
        Ok(())
    }

    pub fn forward(&self, f: &mut Forward, videos: &[&PreparedVideo]) -> Result<BatchOutput> {
        if videos.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        for v in videos {
            self.check_video(v)?;
        }
        let flags: Vec<&[bool]> = videos.iter().map(|v| v.human_flags.as_slice()).collect();
        let graph = BatchGraph::new(self.config.frames, &flags)?;
        let inputs = self.features.assemble(f, videos, self.config.streams)?;
        let ablation = self.config.ablation;
        let visual = match (&self.visual, inputs.visual_spatial) {
            (Some(p), Some(x)) => Some(p.forward(f, x, &graph, &ablation)?),
            _ => None,
        };
        let semantic = match (&self.semantic, inputs.spatial_semantic) {
            (Some(p), Some(x)) => Some(p.forward(f, x, &graph, &ablation)?),
            _ => None,
        };
        Ok(BatchOutput {
            graph,
            visual,
            semantic,
        })
    }

    /// Joint cross-entropy over both streams. Object terms cover only the
    /// instances that carry an affordance label.
    pub fn loss(&self, f: &mut Forward, out: &BatchOutput, videos: &[&PreparedVideo]) -> Result<(Var, LossReport)> {
        let lambda = self.config.lambda;
        let activities: Vec<usize> = videos.iter().map(|v| v.activity).collect();
        let mut labeled = Vec::new();
        let mut targets = Vec::new();
        for (i, &(v, m)) in out.graph.object_owner.iter().enumerate() {
            if let Some(a) = videos[v].affordances[m] {
                labeled.push(i);
                targets.push(a);
            }
        }
        let mut report = LossReport {
            lambda,
            ..LossReport::default()
        };
        let mut total: Option<Var> = None;
        for (kind, s) in out.streams() {
            let h = f.tape.cross_entropy(s.human_logits, &activities)?;
            let h_value = f.tape.value(h).values()[0];
            let (term, o_value) = if labeled.is_empty() {
                (h, 0.0)
            } else {
                let rows = f.tape.gather_rows(s.object_logits, &labeled)?;
                let o = f.tape.cross_entropy(rows, &targets)?;
                let o_value = f.tape.value(o).values()[0];
                let weighted = f.tape.scale(o, lambda);
                (f.tape.add(h, weighted)?, o_value)
            };
            match kind {
                StreamKind::Visual => (report.visual_h, report.visual_o) = (h_value, o_value),
                StreamKind::Semantic => (report.semantic_h, report.semantic_o) = (h_value, o_value),
            }
            total = Some(match total {
                None => term,
                Some(t) => f.tape.add(t, term)?,
            });
        }
        let total = total.ok_or_else(|| Error::Config("no stream enabled".into()))?;
        report.total = f.tape.value(total).values()[0];
        Ok((total, report))
    }

    /// Per-stream distributions of one evaluation pass.
    fn stream_distributions(
        f: &Forward,
        s: &StreamOutput,
        graph: &BatchGraph,
        videos: usize,
    ) -> Distributions {
        let h = f.tape.value(s.human_logits);
        let o = f.tape.value(s.object_logits);
        let humans = (0..videos).map(|v| softmax(h.row(v))).collect();
        let mut objects = vec![Vec::new(); videos];
        for (i, &(v, m)) in graph.object_owner.iter().enumerate() {
            objects[v].push((m, softmax(o.row(i))));
        }
        (humans, objects)
    }

    /// Evaluation-mode predictions; with both streams enabled the
    /// probabilities are averaged.
    pub fn predict(&self, videos: &[&PreparedVideo]) -> Result<Vec<Prediction>> {
        let mut f = Forward::new(&self.store, Mode::Eval);
        let out = self.forward(&mut f, videos)?;
        let mut fused: Option<Distributions> = None;
        for (_, s) in out.streams() {
            let (h, o) = Self::stream_distributions(&f, s, &out.graph, videos.len());
            fused = Some(match fused {
                None => (h, o),
                Some((fh, fo)) => {
                    let h = fh
                        .iter()
                        .zip(&h)
                        .map(|(a, b)| two_stream_fuse(a, b))
                        .collect::<Result<Vec<_>>>()?;
                    let o = fo
                        .iter()
                        .zip(&o)
                        .map(|(va, vb)| {
                            va.iter()
                                .zip(vb)
                                .map(|((m, a), (_, b))| Ok((*m, two_stream_fuse(a, b)?)))
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (h, o)
                }
            });
        }
        let (h, o) = fused.ok_or_else(|| Error::Config("no stream enabled".into()))?;
        Ok(videos
            .iter()
            .zip(h.into_iter().zip(o))
            .map(|(v, (activity, affordances))| Prediction {
                video_id: v.video_id.clone(),
                activity,
                affordances,
            })
            .collect())
    }

    /// Evaluation-mode parsed adjacencies of one video. Disabled branches
    /// export as zero matrices.
    pub fn parsed_graph(&self, video: &PreparedVideo, kind: StreamKind) -> Result<AdjacencyExport> {
        if self.stream(kind).is_none() {
            return Err(Error::Config(format!("stream {kind:?} is not enabled in this model")));
        }
        let mut f = Forward::new(&self.store, Mode::Eval);
        let out = self.forward(&mut f, &[video])?;
        let s = match kind {
            StreamKind::Visual => out.visual,
            StreamKind::Semantic => out.semantic,
        }
        .ok_or_else(|| Error::Config(format!("stream {kind:?} produced no output")))?;
        let n = video.nodes();
        let value = |adj: Option<Var>, mask: &crate::numkernel::BoolMatrix| -> Tensor {
            match adj {
                Some(a) => {
                    let t = f.tape.value(a);
                    Tensor::matrix(
                        n,
                        n,
                        (0..n * n)
                            .map(|k| if mask.get(k / n, k % n) { t.values()[k] } else { 0.0 })
                            .collect(),
                    )
                }
                None => Tensor::zeros(&[n, n]),
            }
        };
        let intra = value(s.intra, &out.graph.intra);
        let inter = value(s.inter, &out.graph.inter);
        Ok(AdjacencyExport::new(&video.video_id, video.frames, &video.human_flags, &intra, &inter))
    }
}
