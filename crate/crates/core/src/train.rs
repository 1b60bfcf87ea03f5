//! Minibatch training with Adam, validation-based checkpointing, and
//! parallel evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::features::{PreparedVideo, VisualSource};
use crate::layers::{apply_bn_updates, Forward, Mode};
use crate::metrics::{MetricsReport, VideoTruth};
use crate::model::{LossReport, Model, Prediction};
use crate::numkernel::{AdamState, TensorMap};

pub const CHECKPOINT_FORMAT: &str = "stigpn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Videos scored per evaluation task.
const EVAL_CHUNK: usize = 16;

/// The synthetic visual source implied by a config.
pub fn default_visual_source(config: &Config) -> VisualSource {
    VisualSource::synthetic(config.dims.raw_visual, config.visual_seed, config.visual_noise)
}

/// Resamples and featurizes samples for `config`. Visual vectors come from
/// `visual` when given, else from the config's synthetic source whenever
/// the visual stream is enabled.
pub fn prepare_all(
    samples: &[VideoSample],
    config: &Config,
    visual: Option<&VisualSource>,
) -> Result<Vec<PreparedVideo>> {
    let fallback = default_visual_source(config);
    let source = match visual {
        Some(v) => Some(v),
        None if config.streams.visual() => Some(&fallback),
        None => None,
    };
    if let Some(src) = source {
        if src.dim() != config.dims.raw_visual {
            return Err(Error::Config(format!(
                "visual features have dimension {}, config expects {}",
                src.dim(),
                config.dims.raw_visual
            )));
        }
    }
    samples
        .par_iter()
        .map(|s| PreparedVideo::prepare(s, config.frames, source))
        .collect()
}

pub fn truth_of(v: &PreparedVideo) -> VideoTruth {
    VideoTruth {
        activity: v.activity,
        affordances: v
            .affordances
            .iter()
            .enumerate()
            .filter_map(|(m, a)| a.map(|a| (m, a)))
            .collect(),
    }
}

/// Evaluation-mode predictions, scored concurrently in chunks.
pub fn predict_all(model: &Model, videos: &[PreparedVideo]) -> Result<Vec<Prediction>> {
    let chunks: Vec<Vec<Prediction>> = videos
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&PreparedVideo> = chunk.iter().collect();
            model.predict(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn evaluate(model: &Model, videos: &[PreparedVideo]) -> Result<MetricsReport> {
    let predictions = predict_all(model, videos)?;
    let truth: Vec<VideoTruth> = videos.iter().map(truth_of).collect();
    MetricsReport::evaluate(
        &predictions,
        &truth,
        model.config.activities,
        model.config.affordances,
    )
}

/// Score used for checkpoint selection: the mean of the sub-activity macro
/// F1 and, when objects are labeled, the affordance macro F1.
pub fn selection_score(report: &MetricsReport) -> f64 {
    match &report.affordance {
        Some(a) => (report.activity.macro_f1 + a.macro_f1) / 2.0,
        None => report.activity.macro_f1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over the epoch's minibatches.
    pub loss: LossReport,
    pub val_score: Option<f64>,
}

pub const LOSS_CSV_HEADER: &str =
    "epoch,lr,total,visual_h,visual_lambda_o,semantic_h,semantic_lambda_o,val_macro_f1";

impl EpochLog {
    /// Object columns hold the weighted terms `lambda * L_o`.
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},",
            self.epoch,
            self.learning_rate,
            l.total,
            l.visual_h,
            l.lambda * l.visual_o,
            l.semantic_h,
            l.lambda * l.semantic_o
        );
        if let Some(s) = self.val_score {
            let _ = write!(row, "{s}");
        }
        row
    }
}

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out
}

/// Parameters, configuration and optimizer state at one point of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: Config,
    pub epoch: usize,
    pub best_val_score: Option<f64>,
    pub params: TensorMap,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: &AdamState, epoch: usize, best_val_score: Option<f64>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            epoch,
            best_val_score,
            params: TensorMap::from_tensors(&model.store.to_map()),
            optimizer: optimizer.clone(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = Model::new(self.config.clone())?;
        model.store.load_values(&self.params.to_tensors()?)?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub struct TrainOutcome {
    /// Best validation checkpoint, or the final state without validation data.
    pub best: Checkpoint,
    pub final_model: Model,
    pub log: Vec<EpochLog>,
}

/// One gradient step on `batch`; returns its loss report.
pub fn train_step(model: &mut Model, optimizer: &mut AdamState, batch: &[&PreparedVideo]) -> Result<LossReport> {
    model.store.zero_grad();
    let (grads, report, updates) = {
        let mut f = Forward::new(&model.store, Mode::Train);
        let out = model.forward(&mut f, batch)?;
        let (loss, report) = model.loss(&mut f, &out, batch)?;
        let grads = f.tape.backward(loss)?;
        (grads, report, f.take_bn_updates())
    };
    grads.accumulate_into(&mut model.store)?;
    apply_bn_updates(&mut model.store, &updates);
    optimizer.step(&mut model.store)?;
    Ok(report)
}

fn mean_report(reports: &[LossReport], lambda: f64) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport {
        total: mean(|r| r.total),
        visual_h: mean(|r| r.visual_h),
        visual_o: mean(|r| r.visual_o),
        semantic_h: mean(|r| r.semantic_h),
        semantic_o: mean(|r| r.semantic_o),
        lambda,
    }
}

/// Trains from the config's seed. `on_epoch` sees each epoch's log entry
/// as soon as it is complete.
pub fn train(
    config: &Config,
    train_set: &[PreparedVideo],
    val_set: &[PreparedVideo],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut model = Model::new(config.clone())?;
    let mut optimizer = AdamState::new(config.learning_rate, config.decay_factor, config.decay_interval);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 0..config.epochs {
        optimizer.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut reports = Vec::new();
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedVideo> = idx.iter().map(|&i| &train_set[i]).collect();
            reports.push(train_step(&mut model, &mut optimizer, &batch)?);
        }
        let last = epoch + 1 == config.epochs;
        let val_score = if !val_set.is_empty() && ((epoch + 1) % config.eval_every == 0 || last) {
            Some(selection_score(&evaluate(&model, val_set)?))
        } else {
            None
        };
        if let Some(s) = val_score {
            if best.as_ref().is_none_or(|b| b.best_val_score.is_none_or(|bs| s > bs)) {
                best = Some(Checkpoint::capture(&model, &optimizer, epoch, Some(s)));
            }
        }
        let entry = EpochLog {
            epoch,
            learning_rate: optimizer.effective_lr(),
            loss: mean_report(&reports, config.lambda),
            val_score,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let best = match best {
        Some(b) => b,
        None => Checkpoint::capture(&model, &optimizer, config.epochs.saturating_sub(1), None),
    };
    Ok(TrainOutcome {
        best,
        final_model: model,
        log,
    })
}
