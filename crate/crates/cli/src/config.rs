//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys, duplicates and ill-typed values are rejected with
//! the offending line number. [`ExperimentConfig::to_text`] writes every key
//! in canonical order, and reading that snapshot back reproduces the config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cimle_core::datasynth::{generate_palettes, GmmTaskSpec, LayoutTaskSpec};
use cimle_core::imle::DistanceKind;
use cimle_core::{GeneratorSpec, NoiseLayout, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Gmm,
    Layout,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gmm" => Ok(Task::Gmm),
            "layout" => Ok(Task::Layout),
            _ => Err("expected gmm or layout".into()),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Gmm => "gmm",
            Task::Layout => "layout",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub conditions: usize,
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    pub samples_per_condition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub palette_modes: usize,
    pub layouts: usize,
    pub images_per_layout: usize,
    pub noise_std: f64,
    pub dominant_mode_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub data_seed: u64,
    pub out_dir: PathBuf,
    /// Existing dataset to train on instead of synthesising one.
    pub dataset: Option<PathBuf>,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Record elapsed milliseconds in the training log. Off by default so
    /// that reruns produce byte-identical logs.
    pub log_wallclock: bool,
    pub eval_seed: u64,
    pub gmm: GmmParams,
    pub layout: LayoutParams,
    pub generator: GeneratorSpec,
    pub train: TrainConfig,
}

/// Desk-scale defaults for the layout task.
impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            task: Task::Layout,
            seed: 0,
            data_seed: 0,
            out_dir: PathBuf::from("run"),
            dataset: None,
            checkpoint_every: 0,
            log_wallclock: false,
            eval_seed: cimle_core::eval::DEFAULT_EVAL_SEED,
            gmm: GmmParams {
                conditions: 4,
                modes: 3,
                radius: 1.0,
                std: 0.05,
                samples_per_condition: 60,
            },
            layout: LayoutParams {
                height: 16,
                width: 32,
                classes: 6,
                palette_modes: 2,
                layouts: 8,
                images_per_layout: 64,
                noise_std: 0.02,
                dominant_mode_prob: None,
            },
            generator: GeneratorSpec::default(),
            train: TrainConfig {
                epochs: 20,
                batch_size: 32,
                samples_per_example: 10,
                inner_steps: 20,
                inner_batch: 4,
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
        };
        cfg.resolve_shapes();
        cfg
    }
}

struct Entries {
    values: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line),
                message: format!("expected `key = value`, got {trimmed:?}"),
            })?;
            let key = key.trim().to_string();
            if let Some((_, first)) = values.get(&key) {
                return Err(ConfigError {
                    line: Some(line),
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            values.insert(key, (value.trim().to_string(), line));
        }
        Ok(Self { values })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|(_, l)| *l)
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        slot: &mut T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(), ConfigError> {
        if let Some((value, line)) = self.values.remove(key) {
            *slot = parse(&value).map_err(|e| ConfigError {
                line: Some(line),
                message: format!("invalid value {value:?} for `{key}`: {e}"),
            })?;
        }
        Ok(())
    }

    fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.take_with(key, slot, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn take_opt<T: FromStr>(&mut self, key: &str, slot: &mut Option<T>) -> Result<(), ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.take_with(key, slot, |v| {
            if v == "none" {
                Ok(None)
            } else {
                v.parse::<T>().map(Some).map_err(|e| e.to_string())
            }
        })
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Parses and validates. Task-dependent defaults (image size, kernel,
    /// distance) are filled in when the corresponding keys are absent.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut e = Entries::parse(text)?;
        let mut cfg = Self::default();
        e.take("task", &mut cfg.task)?;
        if cfg.task == Task::Gmm {
            cfg.generator.kernel_size = 1;
            cfg.train.distance = DistanceKind::L2;
            cfg.train.batch_size = 240;
            cfg.train.inner_batch = 8;
            cfg.train.inner_steps = 50;
            cfg.train.learning_rate = 0.05;
            cfg.train.epochs = 300;
            cfg.train.samples_per_example = 20;
            cfg.generator.hidden_widths = vec![32, 32];
        }
        let f = &mut cfg;
        e.take("seed", &mut f.seed)?;
        e.take("data_seed", &mut f.data_seed)?;
        e.take_with("out_dir", &mut f.out_dir, |v| Ok(PathBuf::from(v)))?;
        e.take_with("dataset", &mut f.dataset, |v| {
            Ok((v != "none").then(|| PathBuf::from(v)))
        })?;
        e.take("checkpoint_every", &mut f.checkpoint_every)?;
        e.take("log_wallclock", &mut f.log_wallclock)?;
        e.take("eval_seed", &mut f.eval_seed)?;

        e.take("gmm_conditions", &mut f.gmm.conditions)?;
        e.take("gmm_modes", &mut f.gmm.modes)?;
        e.take("gmm_radius", &mut f.gmm.radius)?;
        e.take("gmm_std", &mut f.gmm.std)?;
        e.take("gmm_samples_per_condition", &mut f.gmm.samples_per_condition)?;

        e.take("layout_height", &mut f.layout.height)?;
        e.take("layout_width", &mut f.layout.width)?;
        e.take("layout_classes", &mut f.layout.classes)?;
        e.take("layout_palette_modes", &mut f.layout.palette_modes)?;
        e.take("layout_count", &mut f.layout.layouts)?;
        e.take("layout_images_per_layout", &mut f.layout.images_per_layout)?;
        e.take("layout_noise_std", &mut f.layout.noise_std)?;
        e.take_opt("layout_dominant_mode_prob", &mut f.layout.dominant_mode_prob)?;

        let g = &mut f.generator;
        e.take("noise_channels", &mut g.noise_channels)?;
        e.take("seed_dim", &mut g.seed_dim)?;
        e.take_with("encoder_widths", &mut g.encoder_widths, |v| {
            let w: Vec<usize> = parse_list(v)?;
            <[usize; 2]>::try_from(w).map_err(|_| "expected two widths".to_string())
        })?;
        e.take_with("hidden_widths", &mut g.hidden_widths, parse_list)?;
        e.take("kernel_size", &mut g.kernel_size)?;
        e.take("noise_encoder", &mut g.noise_encoder)?;
        e.take_with("noise_layout", &mut g.noise_layout, |v| match v {
            "per_pixel" => Ok(NoiseLayout::PerPixel),
            "broadcast" => Ok(NoiseLayout::Broadcast),
            _ => Err("expected per_pixel or broadcast".into()),
        })?;
        e.take_opt("coarse_width", &mut g.coarse_width)?;

        let t = &mut f.train;
        e.take("epochs", &mut t.epochs)?;
        e.take("batch_size", &mut t.batch_size)?;
        e.take("samples_per_example", &mut t.samples_per_example)?;
        e.take("inner_steps", &mut t.inner_steps)?;
        e.take("inner_batch", &mut t.inner_batch)?;
        e.take("learning_rate", &mut t.learning_rate)?;
        e.take("rebalance", &mut t.rebalance)?;
        e.take("distance", &mut t.distance)?;
        e.take("extractor_seed", &mut t.extractor_seed)?;
        e.take_with("feature_channels", &mut t.feature_channels, parse_list)?;
        e.take_with("lambda", &mut t.lambda, |v| {
            if v == "none" {
                Ok(None)
            } else {
                parse_list(v).map(Some)
            }
        })?;
        t.seed = f.seed;

        if let Some((key, (_, line))) = e.values.iter().next() {
            return Err(ConfigError {
                line: Some(*line),
                message: format!("unknown key `{key}`"),
            });
        }
        cfg.resolve_shapes();
        cfg.validate_against(&Entries::parse(text)?)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text).map_err(|e| ConfigError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
    }

    /// Image geometry follows from the task.
    fn resolve_shapes(&mut self) {
        let g = &mut self.generator;
        match self.task {
            Task::Gmm => {
                g.input_classes = self.gmm.conditions;
                g.out_channels = 2;
                g.height = 1;
                g.width = 1;
            }
            Task::Layout => {
                g.input_classes = self.layout.classes;
                g.out_channels = 3;
                g.height = self.layout.height;
                g.width = self.layout.width;
            }
        }
    }

    /// Re-seeds the run, keeping the training seed in sync.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_against(&Entries {
            values: BTreeMap::new(),
        })
    }

    fn validate_against(&self, entries: &Entries) -> Result<(), ConfigError> {
        let at = |key: &str, message: String| ConfigError {
            line: entries.line(key),
            message,
        };
        // Core validation messages name the offending field.
        let blame = |message: &str| -> &'static str {
            const KEYS: [&str; 13] = [
                "learning_rate",
                "batch_size",
                "samples_per_example",
                "inner_steps",
                "inner_batch",
                "lambda",
                "noise_channels",
                "seed_dim",
                "encoder_widths",
                "hidden_widths",
                "kernel_size",
                "coarse_width",
                "feature_channels",
            ];
            KEYS.iter().copied().find(|k| message.contains(k)).unwrap_or("task")
        };
        let core = |r: cimle_core::Result<()>| {
            r.map_err(|e| {
                let m = e.to_string();
                at(blame(&m), m)
            })
        };
        core(self.train.validate())?;
        core(self.generator.validate())?;
        if self.dataset.is_none() {
            match self.task {
                Task::Gmm => core(self.gmm_spec().validate())?,
                Task::Layout => {
                    if self.layout.palette_modes == 0 {
                        return Err(at("layout_palette_modes", "layout_palette_modes must be >= 1".into()));
                    }
                    core(self.layout_spec().validate())?
                }
            }
        }
        if self.train.distance == DistanceKind::Perceptual && self.task == Task::Gmm {
            return Err(at("distance", "the gmm task requires distance = l2".into()));
        }
        if self.train.distance == DistanceKind::Perceptual {
            let levels = self.train.feature_channels.len().max(1);
            let factor = 1usize << (levels - 1);
            if !self.generator.height.is_multiple_of(factor) || !self.generator.width.is_multiple_of(factor) {
                return Err(at(
                    "feature_channels",
                    format!(
                        "{} feature levels need image sides divisible by {factor}",
                        self.train.feature_channels.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn gmm_spec(&self) -> GmmTaskSpec {
        GmmTaskSpec::ring(
            self.gmm.conditions,
            self.gmm.modes,
            self.gmm.radius,
            self.gmm.std,
            self.gmm.samples_per_condition,
        )
    }

    pub fn layout_spec(&self) -> LayoutTaskSpec {
        let l = &self.layout;
        LayoutTaskSpec {
            height: l.height,
            width: l.width,
            num_classes: l.classes,
            palettes: generate_palettes(l.classes, l.palette_modes, self.data_seed),
            num_layouts: l.layouts,
            images_per_layout: l.images_per_layout,
            noise_std: l.noise_std,
            dominant_mode_prob: l.dominant_mode_prob,
            layout_seed: self.data_seed,
        }
    }

    /// Every key in canonical order.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let t = &self.train;
        let layout = match g.noise_layout {
            NoiseLayout::PerPixel => "per_pixel",
            NoiseLayout::Broadcast => "broadcast",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("dataset", opt(&self.dataset.as_ref().map(|p| p.display()))),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("log_wallclock", self.log_wallclock.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("gmm_conditions", self.gmm.conditions.to_string()),
            ("gmm_modes", self.gmm.modes.to_string()),
            ("gmm_radius", self.gmm.radius.to_string()),
            ("gmm_std", self.gmm.std.to_string()),
            ("gmm_samples_per_condition", self.gmm.samples_per_condition.to_string()),
            ("layout_height", self.layout.height.to_string()),
            ("layout_width", self.layout.width.to_string()),
            ("layout_classes", self.layout.classes.to_string()),
            ("layout_palette_modes", self.layout.palette_modes.to_string()),
            ("layout_count", self.layout.layouts.to_string()),
            ("layout_images_per_layout", self.layout.images_per_layout.to_string()),
            ("layout_noise_std", self.layout.noise_std.to_string()),
            ("layout_dominant_mode_prob", opt(&self.layout.dominant_mode_prob)),
            ("noise_channels", g.noise_channels.to_string()),
            ("seed_dim", g.seed_dim.to_string()),
            ("encoder_widths", join(&g.encoder_widths)),
            ("hidden_widths", join(&g.hidden_widths)),
            ("kernel_size", g.kernel_size.to_string()),
            ("noise_encoder", g.noise_encoder.to_string()),
            ("noise_layout", layout.to_string()),
            ("coarse_width", opt(&g.coarse_width)),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("samples_per_example", t.samples_per_example.to_string()),
            ("inner_steps", t.inner_steps.to_string()),
            ("inner_batch", t.inner_batch.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("rebalance", t.rebalance.to_string()),
            ("distance", t.distance.to_string()),
            ("extractor_seed", t.extractor_seed.to_string()),
            ("feature_channels", join(&t.feature_channels)),
            ("lambda", t.lambda.as_ref().map_or_else(|| "none".into(), |l| join(l))),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
