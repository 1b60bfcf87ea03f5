//! Dense human-object graph over `T * M` nodes, attention affinities, and
//! the intra-frame / inter-frame parsed adjacencies.

pub mod export;

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::numkernel::{Activation, BoolMatrix, ParamId, ParamStore, Tensor, Var};

pub use export::{AdjacencyExport, DotOptions};

/// The dense spatio-temporal graph and its frame-split supports.
#[derive(Clone, Debug)]
pub struct DenseGraph {
    pub frames: usize,
    pub instances: usize,
    pub human_flags: Vec<bool>,
    pub dense: Rc<BoolMatrix>,
    pub intra: Rc<BoolMatrix>,
    pub inter: Rc<BoolMatrix>,
}

pub fn node_index(t: usize, m: usize, instances: usize) -> usize {
    t * instances + m
}

impl DenseGraph {
    pub fn nodes(&self) -> usize {
        self.frames * self.instances
    }

    pub fn frame_of(&self, node: usize) -> usize {
        node / self.instances
    }

    pub fn instance_of(&self, node: usize) -> usize {
        node % self.instances
    }

    pub fn is_human_node(&self, node: usize) -> bool {
        self.human_flags[self.instance_of(node)]
    }
}

/// Edges join every human node to every object node in both directions, in
/// the same or any other frame; the intra and inter masks split that set by
/// whether the endpoints share a frame.
pub fn build_dense_masks(frames: usize, human_flags: &[bool]) -> Result<DenseGraph> {
    if frames == 0 {
        return Err(Error::Config("graph needs at least one frame".into()));
    }
    let humans = human_flags.iter().filter(|&&h| h).count();
    if humans == 0 || humans == human_flags.len() {
        return Err(Error::Config(format!(
            "graph needs at least one human and one object instance, got {humans} of {}",
            human_flags.len()
        )));
    }
    let m = human_flags.len();
    let n = frames * m;
    let dense = BoolMatrix::from_fn(n, n, |i, j| human_flags[i % m] != human_flags[j % m]);
    let same_frame = BoolMatrix::from_fn(n, n, |i, j| i / m == j / m);
    let other_frame = BoolMatrix::from_fn(n, n, |i, j| i / m != j / m);
    let intra = dense.and(&same_frame);
    let inter = dense.and(&other_frame);
    Ok(DenseGraph {
        frames,
        instances: m,
        human_flags: human_flags.to_vec(),
        dense: Rc::new(dense),
        intra: Rc::new(intra),
        inter: Rc::new(inter),
    })
}

/// Shared node transform `W` (`d_in x d_att`) and attention vector `a`
/// (`2 d_att x 1`, source half first).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffinityParams {
    pub w: ParamId,
    pub a: ParamId,
    pub d_in: usize,
    pub d_att: usize,
}

impl AffinityParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_att: usize, rng: &mut R) -> Self {
        AffinityParams {
            w: store.add_uniform(&format!("{prefix}.affinity.w"), &[d_in, d_att], d_in, rng),
            a: store.add_uniform(&format!("{prefix}.affinity.a"), &[2 * d_att, 1], 2 * d_att, rng),
            d_in,
            d_att,
        }
    }
}

/// Scores `LeakyReLU(a · [W y_i ‖ W y_j])` for every ordered node pair.
///
/// Entries outside `mask` are computed but carry no meaning; the masked
/// softmax ignores them and passes them zero gradient.
pub fn pairwise_affinity(f: &mut Forward, y: Var, params: &AffinityParams, mask: &BoolMatrix) -> Result<Var> {
    let n = f.tape.value(y).rows();
    if f.tape.value(y).cols() != params.d_in {
        return Err(Error::shape("pairwise_affinity", f.tape.shape(y), &[n, params.d_in]));
    }
    if mask.rows() != n || mask.cols() != n {
        return Err(Error::shape("pairwise_affinity", &[n, n], &[mask.rows(), mask.cols()]));
    }
    let w = f.tape.param(params.w);
    let a = f.tape.param(params.a);
    let projected = f.tape.matmul(y, w)?;
    let a_src = f.tape.slice_rows(a, 0, params.d_att)?;
    let a_dst = f.tape.slice_rows(a, params.d_att, params.d_att)?;
    let src = f.tape.matmul(projected, a_src)?;
    let dst = f.tape.matmul(projected, a_dst)?;
    let raw = f.tape.pairwise_sum(src, dst)?;
    Ok(f.tape.activation(raw, Activation::leaky()))
}

/// Row-normalized adjacencies living on the tape.
#[derive(Clone, Copy, Debug)]
pub struct ParsedAdjacency {
    pub intra: Var,
    pub inter: Var,
}

pub fn parse_adjacency(f: &mut Forward, scores: Var, graph: &DenseGraph) -> Result<ParsedAdjacency> {
    let intra = f.tape.masked_row_softmax(scores, graph.intra.clone())?;
    let inter = f.tape.masked_row_softmax(scores, graph.inter.clone())?;
    Ok(ParsedAdjacency { intra, inter })
}

/// Uniform row normalization over the dense mask (the dense-GCN baseline).
pub fn uniform_dense_adjacency(graph: &DenseGraph) -> Tensor {
    let n = graph.nodes();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let support: Vec<usize> = graph.dense.row_support(i).collect();
        let w = 1.0 / support.len().max(1) as f64;
        for j in support {
            values[i * n + j] = w;
        }
    }
    Tensor::matrix(n, n, values)
}
