use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stigpn::config::{Config, ConfigFile};
use stigpn::data::synth::{ACTIVITY_NAMES, AFFORDANCE_NAMES};
use stigpn::data::{dataset_split, load_dataset, save_dataset, synth_generate, SyntheticConfig, VideoSample};
use stigpn::features::VisualFeatureFile;
use stigpn::graph::DotOptions;
use stigpn::train::{evaluate, loss_csv, prepare_all, train as run_training, Checkpoint};
use stigpn::VisualSource;

use crate::{EvalArgs, ExportArgs, ModelOverrides, SynthArgs, TrainArgs};

fn resolve_config(o: &ModelOverrides) -> Result<Config> {
    let file = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::default(),
    };
    let mut config = file.resolve(o.preset)?;
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    for name in &o.ablation {
        config.ablation.set_named(name.trim())?;
    }
    if let Some(s) = o.stream {
        config.streams = s;
    }
    if let Some(e) = o.epochs {
        config.epochs = e;
    }
    if o.no_norm {
        config.use_norm = false;
    }
    config.validate()?;
    Ok(config)
}

fn load_samples(path: &Path) -> Result<Vec<VideoSample>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn visual_source(path: Option<&Path>) -> Result<Option<VisualSource>> {
    path.map(|p| {
        VisualFeatureFile::load(p)
            .map(VisualSource::ingested)
            .with_context(|| format!("loading visual features {}", p.display()))
    })
    .transpose()
}

/// Rejects datasets whose labels do not fit the model's class tables.
fn check_class_counts(config: &Config, samples: &[VideoSample]) -> Result<()> {
    for s in samples {
        if s.activity >= config.activities {
            bail!(
                "class-count mismatch: video {} has activity {} but the model has {} activity classes",
                s.video_id,
                s.activity,
                config.activities
            );
        }
        for (m, t) in s.instances.iter().enumerate() {
            if t.class_id >= config.object_classes {
                bail!(
                    "class-count mismatch: video {} instance {m} has class id {} but the model has {} object classes",
                    s.video_id,
                    t.class_id,
                    config.object_classes
                );
            }
            if let Some(a) = t.affordance.filter(|&a| a >= config.affordances) {
                bail!(
                    "class-count mismatch: video {} instance {m} has affordance {a} but the model has {} affordance classes",
                    s.video_id,
                    config.affordances
                );
            }
        }
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_stem().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    checkpoint.with_file_name(name)
}

fn names(count: usize, known: &'static [&'static str]) -> &'static [&'static str] {
    if count == known.len() {
        known
    } else {
        &[]
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a.model)?;
    let samples = load_samples(&a.data)?;
    let (train_samples, val_samples) = match &a.val_data {
        Some(p) => (samples, load_samples(p)?),
        None if config.val_fraction > 0.0 => {
            let (val, tr) = dataset_split(&samples, config.val_fraction, config.seed)?;
            (tr, val)
        }
        None => (samples, Vec::new()),
    };
    check_class_counts(&config, &train_samples)?;
    check_class_counts(&config, &val_samples)?;
    let visual = visual_source(a.visual_features.as_deref())?;
    let tr = prepare_all(&train_samples, &config, visual.as_ref())?;
    let va = prepare_all(&val_samples, &config, visual.as_ref())?;

    let quiet = a.quiet;
    let outcome = run_training(&config, &tr, &va, |e| {
        if !quiet {
            let val = e.val_score.map_or_else(String::new, |s| format!("  val macro F1 {s:.4}"));
            eprintln!("epoch {:>4}  lr {:.3e}  loss {:.5}{val}", e.epoch, e.learning_rate, e.loss.total);
        }
    })?;
    outcome
        .best
        .save(&a.checkpoint)
        .with_context(|| format!("writing checkpoint {}", a.checkpoint.display()))?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.checkpoint));
    write(&log_path, &loss_csv(&outcome.log))?;
    if !quiet {
        eprintln!(
            "saved checkpoint from epoch {} to {} and loss log to {}",
            outcome.best.epoch,
            a.checkpoint.display(),
            log_path.display()
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let model = ck.to_model()?;
    let samples = load_samples(&a.data)?;
    check_class_counts(&model.config, &samples)?;
    let visual = visual_source(a.visual_features.as_deref())?;
    let videos = prepare_all(&samples, &model.config, visual.as_ref())?;
    let report = evaluate(&model, &videos)?;
    if let Some(out) = &a.out {
        write(out, &report.to_json())?;
    }
    print!(
        "{}",
        report.to_table(
            names(model.config.activities, &ACTIVITY_NAMES),
            names(model.config.affordances, &AFFORDANCE_NAMES)
        )
    );
    Ok(())
}

pub fn export_graph(a: ExportArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let model = ck.to_model()?;
    let samples = load_samples(&a.data)?;
    let Some(sample) = samples.iter().find(|s| s.video_id == a.video_id) else {
        bail!("unknown video_id {:?} in {}", a.video_id, a.data.display());
    };
    check_class_counts(&model.config, std::slice::from_ref(sample))?;
    let visual = visual_source(a.visual_features.as_deref())?;
    let video = prepare_all(std::slice::from_ref(sample), &model.config, visual.as_ref())?.remove(0);
    let graph = model.parsed_graph(&video, a.stream)?;
    let dot = graph.to_dot(DotOptions { top_n: a.top_n });
    let dot_path = a.out.with_extension("dot");
    let json_path = a.out.with_extension("json");
    write(&dot_path, &dot)?;
    write(&json_path, &graph.to_json())?;
    eprintln!("wrote {} and {}", dot_path.display(), json_path.display());
    Ok(())
}

pub fn synth_gen(a: SynthArgs) -> Result<()> {
    if a.min_objects == 0 || a.min_objects > a.max_objects {
        bail!("need 1 <= min-objects <= max-objects");
    }
    let cfg = SyntheticConfig {
        task: a.task,
        samples_per_class: a.per_class,
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        clip_frames: a.clip_frames,
        jitter: a.jitter,
        seed: a.seed,
        ..Default::default()
    };
    let samples = synth_generate(&cfg);
    save_dataset(&a.out, &samples).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} videos to {}", samples.len(), a.out.display());
    Ok(())
}
