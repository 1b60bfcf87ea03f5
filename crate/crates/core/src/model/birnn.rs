//! Bidirectional recurrent layer run independently along each entity's
//! sequence of frames.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Forward, Linear};
use crate::numkernel::{Activation, ParamId, ParamStore, Var};

/// Row bookkeeping for a batch of videos that share a frame count.
///
/// Rows are stacked per video, each video frame-major (`t * M + m`). The
/// recurrence instead walks frames, so the layout keeps, for every frame,
/// the rows of every entity in the batch in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub frames: usize,
    /// `(first row, instance count)` per video.
    pub videos: Vec<(usize, usize)>,
    frame_rows: Vec<Vec<usize>>,
    to_stacked: Vec<usize>,
}

impl SequenceLayout {
    pub fn new(frames: usize, instance_counts: &[usize]) -> Self {
        let entities: usize = instance_counts.iter().sum();
        let mut videos = Vec::with_capacity(instance_counts.len());
        let mut frame_rows = vec![Vec::with_capacity(entities); frames];
        let mut to_stacked = vec![0; frames * entities];
        let mut offset = 0;
        let mut entity_offset = 0;
        for &m in instance_counts {
            videos.push((offset, m));
            for (t, rows) in frame_rows.iter_mut().enumerate() {
                for k in 0..m {
                    let row = offset + t * m + k;
                    rows.push(row);
                    to_stacked[row] = t * entities + entity_offset + k;
                }
            }
            offset += frames * m;
            entity_offset += m;
        }
        SequenceLayout {
            frames,
            videos,
            frame_rows,
            to_stacked,
        }
    }

    pub fn rows(&self) -> usize {
        self.to_stacked.len()
    }

    /// Rows of frame `t` across the batch, one per entity.
    pub fn frame_rows(&self, t: usize) -> &[usize] {
        &self.frame_rows[t]
    }

    /// For each layout row, its position once frames are stacked in order.
    pub fn to_stacked(&self) -> &[usize] {
        &self.to_stacked
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Direction {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
}

impl Direction {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        Direction {
            w_x: store.add_uniform(&format!("{name}.w_x"), &[d_in, hidden], d_in, rng),
            w_h: store.add_uniform(&format!("{name}.w_h"), &[hidden, hidden], hidden, rng),
            b_h: store.add_uniform(&format!("{name}.b_h"), &[1, hidden], hidden, rng),
        }
    }
}

/// `h_t = tanh(x_t W_x + h_{t±1} W_h + b_h)` in each direction from zero
/// initial states, then `y_t = [h_fwd ‖ h_bwd] W_y + b_y` with `b_y` optional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiRnn {
    pub forward: Direction,
    pub backward: Direction,
    pub output: Linear,
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl BiRnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        output_bias: bool,
        rng: &mut R,
    ) -> Self {
        let out_name = format!("{name}.out");
        BiRnn {
            forward: Direction::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            backward: Direction::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
            output: if output_bias {
                Linear::new(store, &out_name, 2 * hidden, d_out, rng)
            } else {
                Linear::without_bias(store, &out_name, 2 * hidden, d_out, rng)
            },
            d_in,
            hidden,
            d_out,
        }
    }

    fn run(
        &self,
        f: &mut Forward,
        xw_frames: &[Var],
        dir: &Direction,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let w_h = f.tape.param(dir.w_h);
        let b_h = f.tape.param(dir.b_h);
        let frames = xw_frames.len();
        let mut out: Vec<Option<Var>> = vec![None; frames];
        let mut prev: Option<Var> = None;
        for step in 0..frames {
            let t = if reverse { frames - 1 - step } else { step };
            let mut pre = xw_frames[t];
            if let Some(h) = prev {
                let hw = f.tape.matmul(h, w_h)?;
                pre = f.tape.add(pre, hw)?;
            }
            let pre = f.tape.add_row(pre, b_h)?;
            let h = f.tape.activation(pre, Activation::Tanh);
            out[t] = Some(h);
            prev = Some(h);
        }
        Ok(out.into_iter().map(|h| h.expect("every frame visited")).collect())
    }

    /// Maps layout rows `x` (`layout.rows() x d_in`) to `layout.rows() x d_out`.
    pub fn forward(&self, f: &mut Forward, x: Var, layout: &SequenceLayout) -> Result<Var> {
        let shape = f.tape.shape(x).to_vec();
        if shape != [layout.rows(), self.d_in] {
            return Err(Error::shape("birnn", &shape, &[layout.rows(), self.d_in]));
        }
        let mut hidden_frames = Vec::with_capacity(layout.frames);
        let (mut xf, mut xb) = (Vec::new(), Vec::new());
        let wf = f.tape.param(self.forward.w_x);
        let wb = f.tape.param(self.backward.w_x);
        let xwf = f.tape.matmul(x, wf)?;
        let xwb = f.tape.matmul(x, wb)?;
        for t in 0..layout.frames {
            xf.push(f.tape.gather_rows(xwf, layout.frame_rows(t))?);
            xb.push(f.tape.gather_rows(xwb, layout.frame_rows(t))?);
        }
        let hf = self.run(f, &xf, &self.forward, false)?;
        let hb = self.run(f, &xb, &self.backward, true)?;
        for t in 0..layout.frames {
            hidden_frames.push(f.tape.concat_cols(&[hf[t], hb[t]])?);
        }
        let stacked = f.tape.concat_rows(&hidden_frames)?;
        let h = f.tape.gather_rows(stacked, layout.to_stacked())?;
        self.output.forward(f, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::numkernel::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rnn(store: &mut ParamStore, d: usize) -> BiRnn {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        BiRnn::new(store, "rnn", d, 5, d, true, &mut rng)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn layout_maps_frames() {
        let l = SequenceLayout::new(2, &[2, 3]);
        assert_eq!(l.rows(), 10);
        assert_eq!(l.frame_rows(0), &[0, 1, 4, 5, 6]);
        assert_eq!(l.frame_rows(1), &[2, 3, 7, 8, 9]);
        assert_eq!(l.to_stacked(), &[0, 1, 5, 6, 2, 3, 4, 7, 8, 9]);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut store = ParamStore::new();
        let r = rnn(&mut store, 3);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).values_mut().fill(0.0);
        }
        store.get_mut(r.output.b.unwrap()).values_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let layout = SequenceLayout::new(4, &[2]);
        let mut f = Forward::new(&store, Mode::Eval);
        let x = f.tape.constant(random(8, 3, 1));
        let y = r.forward(&mut f, x, &layout).unwrap();
        for i in 0..8 {
            assert_eq!(f.tape.value(y).row(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn single_frame_and_output_width() {
        let mut store = ParamStore::new();
        let r = rnn(&mut store, 3);
        let layout = SequenceLayout::new(1, &[3]);
        let mut f = Forward::new(&store, Mode::Eval);
        let x = f.tape.constant(random(3, 3, 2));
        let y = r.forward(&mut f, x, &layout).unwrap();
        assert_eq!(f.tape.shape(y), &[3, 3]);
        assert!(f.tape.value(y).all_finite());
    }

    #[test]
    fn entities_are_independent() {
        let mut store = ParamStore::new();
        let r = rnn(&mut store, 3);
        let layout = SequenceLayout::new(3, &[2]);
        let base = random(6, 3, 3);
        let mut changed = base.clone();
        // instance 1 at frames 0..3 lives in rows 1, 3, 5
        for row in [1, 3, 5] {
            for c in 0..3 {
                changed.values_mut()[row * 3 + c] += 0.7;
            }
        }
        let run = |x: Tensor| {
            let mut f = Forward::new(&store, Mode::Eval);
            let xv = f.tape.constant(x);
            let y = r.forward(&mut f, xv, &layout).unwrap();
            f.tape.value(y).clone()
        };
        let (a, b) = (run(base), run(changed));
        for row in [0, 2, 4] {
            assert_eq!(a.row(row), b.row(row));
        }
        for row in [1, 3, 5] {
            assert_ne!(a.row(row), b.row(row));
        }
    }

    #[test]
    fn frame_order_matters() {
        let mut store = ParamStore::new();
        let r = rnn(&mut store, 3);
        let layout = SequenceLayout::new(3, &[1]);
        let x = random(3, 3, 4);
        let mut shuffled = Vec::new();
        for t in [2, 0, 1] {
            shuffled.extend_from_slice(x.row(t));
        }
        let run = |x: Tensor| {
            let mut f = Forward::new(&store, Mode::Eval);
            let xv = f.tape.constant(x);
            let y = r.forward(&mut f, xv, &layout).unwrap();
            f.tape.value(y).clone()
        };
        let a = run(x);
        let b = run(Tensor::matrix(3, 3, shuffled));
        // output at the frame that moved from 0 to 1 must differ
        assert_ne!(a.row(0), b.row(1));
    }
}
