//! Linear and batch-norm building blocks and the forward-pass context.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::{Activation, BatchStats, ParamId, ParamStore, Tape, Tensor, Var};

/// Running-average momentum for batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are collected for update.
    Train,
    /// Running averages are used as constants.
    Eval,
}

/// One forward pass: the tape, the mode, and pending running-stat updates.
pub struct Forward<'p> {
    pub tape: Tape<'p>,
    pub mode: Mode,
    pub(crate) bn_updates: Vec<(BatchNorm, BatchStats)>,
}

impl<'p> Forward<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode) -> Self {
        Forward {
            tape: Tape::new(store),
            mode,
            bn_updates: Vec::new(),
        }
    }

    /// Folds the batch statistics gathered during a training pass into the
    /// running averages of `store`.
    pub fn take_bn_updates(&mut self) -> Vec<(BatchNorm, BatchStats)> {
        std::mem::take(&mut self.bn_updates)
    }
}

pub fn apply_bn_updates(store: &mut ParamStore, updates: &[(BatchNorm, BatchStats)]) {
    for (bn, stats) in updates {
        bn.update_running(store, stats);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(&format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
        let b = Some(store.add_uniform(&format!("{name}.b"), &[1, fan_out], fan_in, rng));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    /// A bias-free layer, used where a batch norm follows and would cancel
    /// any bias exactly.
    pub fn without_bias<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add_uniform(&format!("{name}.w"), &[fan_in, fan_out], fan_in, rng),
            b: None,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.tape.param(self.w);
        let xw = f.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = f.tape.param(b);
                f.tape.add_row(xw, b)
            }
            None => Ok(xw),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let ones = Tensor::new(vec![1, dim], vec![1.0; dim]).expect("shape");
        BatchNorm {
            gamma: store.add(&format!("{name}.gamma"), ones.clone()),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[1, dim])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[1, dim])),
            running_var: store.add_buffer(&format!("{name}.running_var"), ones),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let gamma = f.tape.param(self.gamma);
        let beta = f.tape.param(self.beta);
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.tape.batch_norm(x, gamma, beta, None)?;
                let stats = stats.ok_or_else(|| Error::Contract("missing batch stats".into()))?;
                f.bn_updates.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => {
                let rm = f.tape.param(self.running_mean);
                let rv = f.tape.param(self.running_var);
                let mean = f.tape.value(rm).values().to_vec();
                let var = f.tape.value(rv).values().to_vec();
                Ok(f.tape.batch_norm(x, gamma, beta, Some((&mean, &var)))?.0)
            }
        }
    }

    fn update_running(&self, store: &mut ParamStore, stats: &BatchStats) {
        let blend = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - BN_MOMENTUM) * *d + BN_MOMENTUM * s;
            }
        };
        blend(store.get_mut(self.running_mean).values_mut(), &stats.mean);
        blend(store.get_mut(self.running_var).values_mut(), &stats.var);
    }
}

/// `Linear -> [BatchNorm] -> ReLU`, the repeated unit of the encoders and
/// classifier heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearBnRelu {
    pub linear: Linear,
    pub norm: Option<BatchNorm>,
}

impl LinearBnRelu {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        use_norm: bool,
        rng: &mut R,
    ) -> Self {
        let linear = if use_norm {
            Linear::without_bias(store, name, fan_in, fan_out, rng)
        } else {
            Linear::new(store, name, fan_in, fan_out, rng)
        };
        let norm = use_norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), fan_out));
        LinearBnRelu { linear, norm }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let mut h = self.linear.forward(f, x)?;
        if let Some(bn) = &self.norm {
            h = bn.forward(f, h)?;
        }
        Ok(f.tape.activation(h, Activation::Relu))
    }
}
