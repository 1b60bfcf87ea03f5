//! Central finite-difference verification of reverse-mode gradients over
//! every trainable scalar of a model.

use rayon::prelude::*;

use crate::error::Result;
use crate::features::PreparedVideo;
use crate::layers::{Forward, Mode};
use crate::model::{Model, StreamKind};
use crate::numkernel::ParamId;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    /// Set when the difference at the base step failed and was redone at a
    /// tenth of it; holds the base-step estimate.
    pub coarse_numeric: Option<f64>,
}

/// Whole-tensor comparison: `‖a - n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub param: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub tensors: Vec<TensorCheck>,
    /// Parameter tensors whose relative error reaches the tolerance.
    pub failures: Vec<TensorCheck>,
    pub worst_scalar: Option<ScalarCheck>,
    /// Individual scalars whose relative error reaches the tolerance after
    /// refinement.
    pub scalar_failures: Vec<ScalarCheck>,
    /// Scalars that failed at the base step and were redone at `h / 10`.
    pub refined: Vec<ScalarCheck>,
}

impl GradCheckReport {
    pub fn worst_tensor(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

fn tensor_check(param: &str, scalars: &[ScalarCheck]) -> TensorCheck {
    let norm = |f: fn(&ScalarCheck) -> f64| scalars.iter().map(|c| f(c).powi(2)).sum::<f64>().sqrt();
    let analytic_norm = norm(|c| c.analytic);
    let numeric_norm = norm(|c| c.numeric);
    let diff = norm(|c| c.analytic - c.numeric);
    let scale = analytic_norm.max(numeric_norm);
    TensorCheck {
        param: param.to_string(),
        analytic_norm,
        numeric_norm,
        relative_error: if scale == 0.0 { 0.0 } else { diff / scale },
    }
}

/// Training-mode loss of `videos` under `model`.
pub fn training_loss(model: &Model, videos: &[&PreparedVideo]) -> Result<f64> {
    let mut f = Forward::new(&model.store, Mode::Train);
    let out = model.forward(&mut f, videos)?;
    Ok(model.loss(&mut f, &out, videos)?.1.total)
}

/// Compares the tape gradient of the training loss against
/// `(L(θ + h) - L(θ - h)) / 2h` for every trainable scalar, then per
/// parameter tensor. `floor` bounds the scalar-level denominator.
///
/// A ReLU kink lying within `h` of the evaluation point breaks the central
/// difference for the scalars that cross it. Any scalar failing at `h` is
/// therefore redone once at `h / 10`, and reported in `refined`.
///
/// With both streams enabled, a parameter reached by only one stream is
/// differenced through that stream alone: the other stream's loss term does
/// not depend on it.
pub fn check_gradients(
    model: &Model,
    videos: &[&PreparedVideo],
    h: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let gradients = |m: &Model| -> Result<Vec<Option<Vec<f64>>>> {
        let mut f = Forward::new(&m.store, Mode::Train);
        let out = m.forward(&mut f, videos)?;
        let (loss, _) = m.loss(&mut f, &out, videos)?;
        let grads = f.tape.backward(loss)?;
        let mut dense: Vec<Option<Vec<f64>>> = vec![None; m.store.len()];
        for (id, g) in grads.params() {
            dense[id.index()] = Some(g.to_vec());
        }
        Ok(dense)
    };
    let analytic = gradients(model)?;

    // probes[0] is the full model; a parameter routed to probes[1] or
    // probes[2] is reached by that single stream only.
    let mut probes = vec![model.clone()];
    let mut route = vec![0usize; model.store.len()];
    if model.visual.is_some() && model.semantic.is_some() {
        let single = [StreamKind::Visual, StreamKind::Semantic].map(|k| model.single_stream(k));
        let reached = [gradients(&single[0])?, gradients(&single[1])?];
        for (i, r) in route.iter_mut().enumerate() {
            match (reached[0][i].is_some(), reached[1][i].is_some()) {
                (true, false) => *r = 1,
                (false, true) => *r = 2,
                _ => {}
            }
        }
        probes.extend(single);
    }
    let targets: Vec<(ParamId, usize)> = model
        .store
        .trainable_ids()
        .flat_map(|id| (0..model.store.get(id).len()).map(move |k| (id, k)))
        .collect();

    let chunk = targets.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(1);
    let checks: Vec<ScalarCheck> = targets
        .par_chunks(chunk)
        .map(|part| -> Result<Vec<ScalarCheck>> {
            let mut probes = probes.clone();
            let mut out = Vec::with_capacity(part.len());
            for &(id, k) in part {
                let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[k]);
                let mut check = ScalarCheck {
                    param: model.store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric: 0.0,
                    relative_error: 0.0,
                    coarse_numeric: None,
                };
                for step in [h, h / 10.0] {
                    let numeric = central_difference(&mut probes[route[id.index()]], videos, id, k, step)?;
                    if step != h {
                        check.coarse_numeric = Some(check.numeric);
                    }
                    check.numeric = numeric;
                    check.relative_error = relative_error(a, numeric, floor);
                    if check.relative_error < tolerance {
                        break;
                    }
                }
                out.push(check);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut tensors = Vec::new();
    let mut start = 0;
    while start < checks.len() {
        let name = &checks[start].param;
        let end = start + checks[start..].iter().take_while(|c| &c.param == name).count();
        tensors.push(tensor_check(name, &checks[start..end]));
        start = end;
    }
    let failures = tensors
        .iter()
        .filter(|t| !(t.relative_error < tolerance))
        .cloned()
        .collect();
    let worst_scalar = checks
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .cloned();
    let scalar_failures = checks
        .iter()
        .filter(|c| !(c.relative_error < tolerance))
        .cloned()
        .collect();
    let refined = checks.iter().filter(|c| c.coarse_numeric.is_some()).cloned().collect();
    Ok(GradCheckReport {
        checked: checks.len(),
        tensors,
        failures,
        worst_scalar,
        scalar_failures,
        refined,
    })
}

fn central_difference(
    probe: &mut Model,
    videos: &[&PreparedVideo],
    id: ParamId,
    k: usize,
    h: f64,
) -> Result<f64> {
    let original = probe.store.get(id).values()[k];
    probe.store.get_mut(id).values_mut()[k] = original + h;
    let plus = training_loss(probe, videos);
    probe.store.get_mut(id).values_mut()[k] = original - h;
    let minus = training_loss(probe, videos);
    probe.store.get_mut(id).values_mut()[k] = original;
    Ok((plus? - minus?) / (2.0 * h))
}
