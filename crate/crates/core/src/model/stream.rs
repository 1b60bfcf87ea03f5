//! One stream: temporal enhancement, graph parsing and evolution, temporal
//! fusion and the two readout heads.

use std::rc::Rc;

use rand::Rng;

use crate::config::{Ablation, ModelDims};
use crate::error::{Error, Result};
use crate::graph::{build_dense_masks, pairwise_affinity, uniform_dense_adjacency, AffinityParams};
use crate::layers::{Forward, Linear, LinearBnRelu};
use crate::numkernel::{BoolMatrix, ParamId, ParamStore, Tensor, Var};

use super::birnn::{BiRnn, SequenceLayout};

/// `Z = [A_intra Y W_intra ‖ A_inter Y W_inter]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphEvolve {
    pub w_intra: ParamId,
    pub w_inter: ParamId,
    pub d_in: usize,
    pub d_branch: usize,
}

impl GraphEvolve {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_branch: usize, rng: &mut R) -> Self {
        GraphEvolve {
            w_intra: store.add_uniform(&format!("{name}.w_intra"), &[d_in, d_branch], d_in, rng),
            w_inter: store.add_uniform(&format!("{name}.w_inter"), &[d_in, d_branch], d_in, rng),
            d_in,
            d_branch,
        }
    }

    /// A missing adjacency contributes a zero branch.
    pub fn forward(&self, f: &mut Forward, y: Var, intra: Option<Var>, inter: Option<Var>) -> Result<Var> {
        let rows = f.tape.shape(y)[0];
        if f.tape.shape(y)[1] != self.d_in {
            return Err(Error::shape("graph_evolve", f.tape.shape(y), &[rows, self.d_in]));
        }
        let branch = |f: &mut Forward, adj: Option<Var>, w: ParamId| -> Result<Var> {
            match adj {
                Some(a) => {
                    let ay = f.tape.aggregate(a, y)?;
                    let w = f.tape.param(w);
                    f.tape.matmul(ay, w)
                }
                None => Ok(f.tape.constant(Tensor::zeros(&[rows, self.d_branch]))),
            }
        };
        let zi = branch(f, intra, self.w_intra)?;
        let ze = branch(f, inter, self.w_inter)?;
        f.tape.concat_cols(&[zi, ze])
    }
}

/// `Linear-BN-ReLU-Linear-BN-ReLU-Linear` applied per node per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Head {
    pub hidden1: LinearBnRelu,
    pub hidden2: LinearBnRelu,
    pub out: Linear,
    pub classes: usize,
}

impl Head {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &ModelDims,
        classes: usize,
        use_norm: bool,
        rng: &mut R,
    ) -> Self {
        Head {
            hidden1: LinearBnRelu::new(store, &format!("{name}.l1"), dims.fuse, dims.head_hidden1, use_norm, rng),
            hidden2: LinearBnRelu::new(
                store,
                &format!("{name}.l2"),
                dims.head_hidden1,
                dims.head_hidden2,
                use_norm,
                rng,
            ),
            out: Linear::new(store, &format!("{name}.out"), dims.head_hidden2, classes, rng),
            classes,
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let h = self.hidden1.forward(f, x)?;
        let h = self.hidden2.forward(f, h)?;
        self.out.forward(f, h)
    }
}

/// Graph structure and readout groupings for a batch of videos.
#[derive(Clone, Debug)]
pub struct BatchGraph {
    pub layout: SequenceLayout,
    pub intra: Rc<BoolMatrix>,
    pub inter: Rc<BoolMatrix>,
    pub dense: Rc<BoolMatrix>,
    /// Block-diagonal uniform dense adjacency.
    pub dense_uniform: Tensor,
    /// Per video, its human's rows in frame order.
    pub human_rows: Vec<Vec<usize>>,
    /// Per object instance, its rows in frame order.
    pub object_rows: Vec<Vec<usize>>,
    /// `(video, instance)` of each entry of `object_rows`.
    pub object_owner: Vec<(usize, usize)>,
}

impl BatchGraph {
    pub fn new(frames: usize, human_flags: &[&[bool]]) -> Result<Self> {
        let counts: Vec<usize> = human_flags.iter().map(|h| h.len()).collect();
        let layout = SequenceLayout::new(frames, &counts);
        let n = layout.rows();
        let mut intra = BoolMatrix::new(n, n);
        let mut inter = BoolMatrix::new(n, n);
        let mut dense = BoolMatrix::new(n, n);
        let mut dense_uniform = vec![0.0; n * n];
        let mut human_rows = Vec::new();
        let mut object_rows = Vec::new();
        let mut object_owner = Vec::new();
        for (v, flags) in human_flags.iter().enumerate() {
            let humans = flags.iter().filter(|&&h| h).count();
            if humans != 1 {
                return Err(Error::Config(format!(
                    "video {v} of the batch has {humans} human instances; exactly one is required"
                )));
            }
            let g = build_dense_masks(frames, flags)?;
            let (offset, m) = layout.videos[v];
            let u = uniform_dense_adjacency(&g);
            let local = frames * m;
            for i in 0..local {
                for j in 0..local {
                    let (gi, gj) = (offset + i, offset + j);
                    intra.set(gi, gj, g.intra.get(i, j));
                    inter.set(gi, gj, g.inter.get(i, j));
                    dense.set(gi, gj, g.dense.get(i, j));
                    dense_uniform[gi * n + gj] = u.get(i, j);
                }
            }
            for (k, &h) in flags.iter().enumerate() {
                let rows: Vec<usize> = (0..frames).map(|t| offset + t * m + k).collect();
                if h {
                    human_rows.push(rows);
                } else {
                    object_rows.push(rows);
                    object_owner.push((v, k));
                }
            }
        }
        Ok(BatchGraph {
            layout,
            intra: Rc::new(intra),
            inter: Rc::new(inter),
            dense: Rc::new(dense),
            dense_uniform: Tensor::matrix(n, n, dense_uniform),
            human_rows,
            object_rows,
            object_owner,
        })
    }
}

/// Per-stream outputs of one batch.
#[derive(Clone, Copy, Debug)]
pub struct StreamOutput {
    /// One row per video, per-frame logits averaged over frames.
    pub human_logits: Var,
    /// One row per object instance (see `BatchGraph::object_owner`).
    pub object_logits: Var,
    /// Row-normalized adjacencies actually used by graph evolution.
    pub intra: Option<Var>,
    pub inter: Option<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamParams {
    pub te: BiRnn,
    pub affinity: AffinityParams,
    pub evolve: GraphEvolve,
    pub fuse: BiRnn,
    pub human_head: Head,
    pub object_head: Head,
}

impl StreamParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        dims: &ModelDims,
        activities: usize,
        affordances: usize,
        use_norm: bool,
        rng: &mut R,
    ) -> Self {
        StreamParams {
            te: BiRnn::new(store, &format!("{prefix}.te"), d_in, dims.te_hidden, d_in, true, rng),
            affinity: AffinityParams::new(store, prefix, d_in, dims.attention, rng),
            evolve: GraphEvolve::new(store, &format!("{prefix}.evolve"), d_in, dims.branch(), rng),
            fuse: BiRnn::new(store, &format!("{prefix}.fuse"), dims.evolve, dims.fuse_hidden, dims.fuse, !use_norm, rng),
            human_head: Head::new(store, &format!("{prefix}.head_h"), dims, activities, use_norm, rng),
            object_head: Head::new(store, &format!("{prefix}.head_o"), dims, affordances, use_norm, rng),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var, graph: &BatchGraph, ablation: &Ablation) -> Result<StreamOutput> {
        ablation.validate()?;
        let y = if ablation.no_te {
            x
        } else {
            self.te.forward(f, x, &graph.layout)?
        };

        let (intra, inter) = if ablation.dense_baseline {
            let a = f.tape.constant(graph.dense_uniform.clone());
            (Some(a), Some(a))
        } else {
            let scores = pairwise_affinity(f, y, &self.affinity, &graph.dense)?;
            let intra = if ablation.uses_intra() {
                Some(f.tape.masked_row_softmax(scores, graph.intra.clone())?)
            } else {
                None
            };
            let inter = if ablation.uses_inter() {
                Some(f.tape.masked_row_softmax(scores, graph.inter.clone())?)
            } else {
                None
            };
            (intra, inter)
        };

        let z = self.evolve.forward(f, y, intra, inter)?;
        let z = self.fuse.forward(f, z, &graph.layout)?;

        let human_logits = readout(f, z, &graph.human_rows, &self.human_head)?;
        let object_logits = readout(f, z, &graph.object_rows, &self.object_head)?;
        Ok(StreamOutput {
            human_logits,
            object_logits,
            intra,
            inter,
        })
    }
}

/// Applies `head` to the listed rows and averages each group's logits.
fn readout(f: &mut Forward, z: Var, groups: &[Vec<usize>], head: &Head) -> Result<Var> {
    let rows: Vec<usize> = groups.iter().flatten().copied().collect();
    let x = f.tape.gather_rows(z, &rows)?;
    let logits = head.forward(f, x)?;
    let mut start = 0;
    let local: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            let r = (start..start + g.len()).collect();
            start += g.len();
            r
        })
        .collect();
    f.tape.row_group_mean(logits, &local)
}
