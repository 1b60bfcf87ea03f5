//! Dimension presets, ablation switches, and the flat JSON run config.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamSelection {
    Visual,
    Semantic,
    Both,
}

impl StreamSelection {
    pub fn visual(self) -> bool {
        matches!(self, StreamSelection::Visual | StreamSelection::Both)
    }

    pub fn semantic(self) -> bool {
        matches!(self, StreamSelection::Semantic | StreamSelection::Both)
    }
}

impl std::str::FromStr for StreamSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(StreamSelection::Visual),
            "semantic" => Ok(StreamSelection::Semantic),
            "both" => Ok(StreamSelection::Both),
            other => Err(Error::Config(format!("unknown stream selection {other:?}"))),
        }
    }
}

/// Stage switches mirroring the ablation variants.
///
/// `no_te` replaces temporal enhancement by identity; `intra_only` and
/// `inter_only` zero the other relation graph; `dense_baseline` runs both
/// graph branches over the uniformly normalized dense human-object mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_te: bool,
    pub intra_only: bool,
    pub inter_only: bool,
    pub dense_baseline: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        let graph_switches = [self.intra_only, self.inter_only, self.dense_baseline]
            .iter()
            .filter(|&&b| b)
            .count();
        if graph_switches > 1 {
            return Err(Error::Config(format!(
                "contradictory ablation flags: {self:?} (intra-only, inter-only and dense-baseline are mutually exclusive)"
            )));
        }
        Ok(())
    }

    pub fn uses_intra(&self) -> bool {
        !self.inter_only
    }

    pub fn uses_inter(&self) -> bool {
        !self.intra_only
    }

    /// Parses one ablation switch name as used on the command line.
    pub fn set_named(&mut self, name: &str) -> Result<()> {
        match name {
            "none" => {}
            "no-te" => self.no_te = true,
            "intra-only" => self.intra_only = true,
            "inter-only" => self.inter_only = true,
            "dense-baseline" => self.dense_baseline = true,
            other => return Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Raw visual vector length (ingested or synthesized).
    pub raw_visual: usize,
    pub visual: usize,
    pub spatial_hidden: usize,
    pub spatial: usize,
    pub semantic: usize,
    pub attention: usize,
    pub te_hidden: usize,
    /// Width of the concatenated graph-evolution output (two equal branches).
    pub evolve: usize,
    pub fuse_hidden: usize,
    pub fuse: usize,
    pub head_hidden1: usize,
    pub head_hidden2: usize,
}

impl ModelDims {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => ModelDims {
                raw_visual: 2048,
                visual: 1024,
                spatial_hidden: 128,
                spatial: 256,
                semantic: 128,
                attention: 256,
                te_hidden: 1024,
                evolve: 1024,
                fuse_hidden: 1024,
                fuse: 2048,
                head_hidden1: 2048,
                head_hidden2: 512,
            },
            Preset::Desk => ModelDims {
                raw_visual: 64,
                visual: 32,
                spatial_hidden: 8,
                spatial: 16,
                semantic: 8,
                attention: 16,
                te_hidden: 32,
                evolve: 32,
                fuse_hidden: 32,
                fuse: 64,
                head_hidden1: 64,
                head_hidden2: 16,
            },
        }
    }

    pub fn visual_spatial(&self) -> usize {
        self.visual + self.spatial
    }

    pub fn spatial_semantic(&self) -> usize {
        self.spatial + self.semantic
    }

    pub fn branch(&self) -> usize {
        self.evolve / 2
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.raw_visual,
            self.visual,
            self.spatial_hidden,
            self.spatial,
            self.semantic,
            self.attention,
            self.te_hidden,
            self.evolve,
            self.fuse_hidden,
            self.fuse,
            self.head_hidden1,
            self.head_hidden2,
        ];
        if all.contains(&0) {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if !self.evolve.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "evolve dimension {} must be even (two concatenated branches)",
                self.evolve
            )));
        }
        Ok(())
    }
}

/// Fully resolved configuration, persisted inside checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Preset,
    pub dims: ModelDims,
    pub frames: usize,
    /// Rows of the semantic embedding table (human class included).
    pub object_classes: usize,
    pub activities: usize,
    pub affordances: usize,
    pub lambda: f64,
    pub use_norm: bool,
    pub ablation: Ablation,
    pub streams: StreamSelection,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub visual_seed: u64,
    pub visual_noise: f64,
    pub eval_every: usize,
}

impl Config {
    pub fn preset(p: Preset) -> Self {
        Config {
            preset: p,
            dims: ModelDims::preset(p),
            frames: 10,
            object_classes: 6,
            activities: 4,
            affordances: 4,
            lambda: 1.0,
            use_norm: true,
            ablation: Ablation::default(),
            streams: StreamSelection::Both,
            learning_rate: 2e-5,
            decay_factor: 0.8,
            decay_interval: 10,
            epochs: 300,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.2,
            visual_seed: 7,
            visual_noise: 0.1,
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.ablation.validate()?;
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.object_classes == 0 || self.activities == 0 || self.affordances == 0 {
            return Err(Error::Config("class counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_factor > 0.0) || self.decay_interval == 0 {
            return Err(Error::Config("invalid optimizer schedule".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// On-disk config: flat keys, every one optional, unknown keys rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub frames: Option<usize>,
    pub object_classes: Option<usize>,
    pub activities: Option<usize>,
    pub affordances: Option<usize>,
    pub lambda: Option<f64>,
    pub use_norm: Option<bool>,
    pub no_te: Option<bool>,
    pub intra_only: Option<bool>,
    pub inter_only: Option<bool>,
    pub dense_baseline: Option<bool>,
    pub streams: Option<StreamSelection>,
    pub learning_rate: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_interval: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub val_fraction: Option<f64>,
    pub visual_seed: Option<u64>,
    pub visual_noise: Option<f64>,
    pub eval_every: Option<usize>,
    pub raw_visual_dim: Option<usize>,
    pub visual_dim: Option<usize>,
    pub spatial_hidden_dim: Option<usize>,
    pub spatial_dim: Option<usize>,
    pub semantic_dim: Option<usize>,
    pub attention_dim: Option<usize>,
    pub te_hidden_dim: Option<usize>,
    pub evolve_dim: Option<usize>,
    pub fuse_hidden_dim: Option<usize>,
    pub fuse_dim: Option<usize>,
    pub head_hidden1_dim: Option<usize>,
    pub head_hidden2_dim: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Applies the file's keys on top of the given preset (or the file's
    /// own `preset` key, which wins).
    pub fn resolve(&self, default_preset: Preset) -> Result<Config> {
        let preset = self.preset.unwrap_or(default_preset);
        let mut c = Config::preset(preset);
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src { c.$($dst).+ = v; })*
            };
        }
        set!(
            frames => frames,
            object_classes => object_classes,
            activities => activities,
            affordances => affordances,
            lambda => lambda,
            use_norm => use_norm,
            no_te => ablation.no_te,
            intra_only => ablation.intra_only,
            inter_only => ablation.inter_only,
            dense_baseline => ablation.dense_baseline,
            streams => streams,
            learning_rate => learning_rate,
            decay_factor => decay_factor,
            decay_interval => decay_interval,
            epochs => epochs,
            batch_size => batch_size,
            seed => seed,
            val_fraction => val_fraction,
            visual_seed => visual_seed,
            visual_noise => visual_noise,
            eval_every => eval_every,
            raw_visual_dim => dims.raw_visual,
            visual_dim => dims.visual,
            spatial_hidden_dim => dims.spatial_hidden,
            spatial_dim => dims.spatial,
            semantic_dim => dims.semantic,
            attention_dim => dims.attention,
            te_hidden_dim => dims.te_hidden,
            evolve_dim => dims.evolve,
            fuse_hidden_dim => dims.fuse_hidden,
            fuse_dim => dims.fuse,
            head_hidden1_dim => dims.head_hidden1,
            head_hidden2_dim => dims.head_hidden2,
        );
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_dimensions() {
        let d = ModelDims::preset(Preset::Paper);
        assert_eq!(d.visual_spatial(), 1280);
        assert_eq!(d.spatial_semantic(), 384);
        assert_eq!(d.evolve, 1024);
        assert_eq!(d.fuse, 2048);
        let c = Config::preset(Preset::Paper);
        assert_eq!((c.epochs, c.learning_rate, c.decay_factor, c.decay_interval), (300, 2e-5, 0.8, 10));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(ConfigFile::parse(r#"{"epochs": 3, "bogus": 1}"#).is_err());
        let c = ConfigFile::parse(r#"{"epochs": 3, "preset": "desk"}"#)
            .unwrap()
            .resolve(Preset::Paper)
            .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.dims, ModelDims::preset(Preset::Desk));
    }

    #[test]
    fn contradictory_ablation_rejected() {
        let f = ConfigFile::parse(r#"{"intra_only": true, "inter_only": true}"#).unwrap();
        assert!(matches!(f.resolve(Preset::Desk), Err(Error::Config(_))));
        let mut a = Ablation::default();
        a.set_named("no-te").unwrap();
        a.set_named("intra-only").unwrap();
        assert!(a.validate().is_ok());
        a.set_named("dense-baseline").unwrap();
        assert!(a.validate().is_err());
    }
}
