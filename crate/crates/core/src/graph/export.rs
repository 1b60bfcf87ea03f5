//! JSON and Graphviz DOT renderings of a parsed graph.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numkernel::Tensor;

/// Parsed adjacencies of one video as dense row-major arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyExport {
    pub video_id: String,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "M")]
    pub instances: usize,
    pub human_flags: Vec<bool>,
    #[serde(rename = "A_intra")]
    pub intra: Vec<f64>,
    #[serde(rename = "A_inter")]
    pub inter: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DotOptions {
    /// Inter-frame edges kept per human node, by descending weight.
    pub top_n: usize,
}

impl Default for DotOptions {
    fn default() -> Self {
        DotOptions { top_n: 3 }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl AdjacencyExport {
    pub fn new(
        video_id: &str,
        frames: usize,
        human_flags: &[bool],
        intra: &Tensor,
        inter: &Tensor,
    ) -> Self {
        AdjacencyExport {
            video_id: video_id.to_string(),
            frames,
            instances: human_flags.len(),
            human_flags: human_flags.to_vec(),
            intra: intra.values().to_vec(),
            inter: inter.values().to_vec(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.frames * self.instances
    }

    fn row<'a>(&self, m: &'a [f64], i: usize) -> &'a [f64] {
        let n = self.nodes();
        &m[i * n..(i + 1) * n]
    }

    pub fn human_nodes(&self) -> Vec<usize> {
        (0..self.nodes())
            .filter(|&i| self.human_flags[i % self.instances])
            .collect()
    }

    /// Highest-weight intra-frame source node into `node` (lowest index on ties).
    pub fn max_intra_source(&self, node: usize) -> Option<(usize, f64)> {
        self.row(&self.intra, node)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .fold(None, |best: Option<(usize, f64)>, (j, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((j, w)),
            })
    }

    /// Up to `n` inter-frame source nodes into `node`, by descending weight.
    pub fn top_inter_sources(&self, node: usize, n: usize) -> Vec<(usize, f64)> {
        let mut edges: Vec<(usize, f64)> = self
            .row(&self.inter, node)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
            .collect();
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        edges.truncate(n);
        edges
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Solid edges: the strongest intra-frame edge into each human node.
    /// Dashed edges: the `top_n` strongest inter-frame edges into it.
    pub fn to_dot(&self, opts: DotOptions) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", escape(&self.video_id));
        out.push_str("  rankdir=LR;\n");
        for i in 0..self.nodes() {
            let (t, m) = (i / self.instances, i % self.instances);
            let human = self.human_flags[m];
            let _ = writeln!(
                out,
                "  n{i} [label=\"t{t} {}{m}\", shape={}];",
                if human { "h" } else { "o" },
                if human { "box" } else { "ellipse" }
            );
        }
        for h in self.human_nodes() {
            if let Some((j, w)) = self.max_intra_source(h) {
                let _ = writeln!(out, "  n{j} -> n{h} [style=solid, label=\"{w:.3}\"];");
            }
            for (j, w) in self.top_inter_sources(h, opts.top_n) {
                let _ = writeln!(out, "  n{j} -> n{h} [style=dashed, label=\"{w:.3}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}
