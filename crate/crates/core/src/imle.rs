//! IMLE objectives, nearest-sample matching and the conditional training loop.
//!
//! Each epoch draws a batch `S`, generates `m` candidates per example from
//! that example's own layout, keeps the latent of the closest candidate, and
//! then takes `K` plain gradient steps on random sub-batches of matched
//! pairs. The matched outputs are regenerated under the current parameters
//! at every inner step; the matched latents stay fixed for the epoch.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::distance::{calibrate_lambda, FeatureExtractor, LayerWeights, Metric, Perceptual, Target};
use crate::error::{invalid, shape, Error, Result};
use crate::generator::{GeneratorState, Gradient};
use crate::rebalance::{rarity_scores, RarityTable};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Latent, SemanticLayout, Tensor};

const TAG_BATCH: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_INNER: u64 = 3;
const TAG_CALIBRATE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Perceptual,
    L2,
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perceptual" => Ok(DistanceKind::Perceptual),
            "l2" => Ok(DistanceKind::L2),
            other => Err(invalid(format!(
                "unknown distance {other:?} (expected perceptual or l2)"
            ))),
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceKind::Perceptual => "perceptual",
            DistanceKind::L2 => "l2",
        })
    }
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `E`: number of outer iterations, each over one batch.
    pub epochs: usize,
    /// `|S|`.
    pub batch_size: usize,
    /// `m`: candidates generated per example.
    pub samples_per_example: usize,
    /// `K`: gradient steps per epoch.
    pub inner_steps: usize,
    /// `|S̃|`.
    pub inner_batch: usize,
    /// `η`.
    pub learning_rate: f64,
    pub rebalance: bool,
    pub distance: DistanceKind,
    pub seed: u64,
    /// Seed of the training feature extractor.
    pub extractor_seed: u64,
    pub feature_channels: Vec<usize>,
    /// Fixed layer weights; calibrated on the first batch when `None`.
    pub lambda: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    /// Hyperparameters of the large-scale setting: `|S| = 400, m = 10,
    /// K = 10000, |S̃| = 1, η = 1e-5`.
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 400,
            samples_per_example: 10,
            inner_steps: 10_000,
            inner_batch: 1,
            learning_rate: 1e-5,
            rebalance: false,
            distance: DistanceKind::Perceptual,
            seed: 0,
            extractor_seed: 0x5eed_f00d,
            feature_channels: crate::distance::DEFAULT_FEATURE_CHANNELS.to_vec(),
            lambda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("samples_per_example", self.samples_per_example),
            ("inner_steps", self.inner_steps),
            ("inner_batch", self.inner_batch),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.inner_batch > self.batch_size {
            return Err(invalid("inner_batch must not exceed batch_size"));
        }
        if let Some(l) = &self.lambda {
            LayerWeights::new(l.clone())?;
        }
        Ok(())
    }
}

/// The match chosen for one batch slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    /// Dataset index of the example.
    pub example: usize,
    /// Index (0-based) of the selected candidate among the `m`.
    pub sigma: usize,
    /// Latent that produced the selected candidate.
    pub latent: Latent,
    pub distance: f64,
}

/// Index and value of the smallest distance; ties go to the lowest index.
pub fn argmin(distances: &[f64]) -> Result<(usize, f64)> {
    if distances.is_empty() {
        return Err(invalid("cannot match against zero candidates"));
    }
    let mut best = (0, distances[0]);
    for (j, &d) in distances.iter().enumerate() {
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("distance to candidate {j}")));
        }
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best)
}

/// Selects the candidate closest to `target` under `metric`.
pub fn match_candidates(metric: &Metric, target: &Target, candidates: &[ImageTensor]) -> Result<(usize, f64)> {
    let d = candidates
        .iter()
        .map(|c| metric.distance(target, c))
        .collect::<Result<Vec<_>>>()?;
    argmin(&d)
}

/// `(1/n) Σ_i min_j L(T_θ(x_i, z_{i,j}), y_i)`. Example `i` is only compared
/// with candidates generated from its own layout.
pub fn conditional_objective(
    state: &GeneratorState,
    batch: &[(&SemanticLayout, &ImageTensor)],
    noise: &[Vec<Latent>],
    metric: &Metric,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != noise.len() {
        return Err(shape("need one non-empty noise set per example"));
    }
    let mut total = 0.0;
    for ((x, y), zs) in batch.iter().zip(noise) {
        let target = metric.target(y, None)?;
        let candidates = zs.iter().map(|z| state.generate(x, z)).collect::<Result<Vec<_>>>()?;
        total += match_candidates(metric, &target, &candidates)?.1;
    }
    Ok(total / batch.len() as f64)
}

/// `(1/n) Σ_i min_j L(T_θ(z_j), y_i)` with one pool of latents shared by all
/// targets. The unconditional model is the generator fed a fixed layout.
pub fn unconditional_objective(
    state: &GeneratorState,
    layout: &SemanticLayout,
    pool: &[Latent],
    targets: &[ImageTensor],
    metric: &Metric,
) -> Result<f64> {
    if pool.is_empty() || targets.is_empty() {
        return Err(invalid("need at least one latent and one target"));
    }
    let generated = pool
        .iter()
        .map(|z| state.generate(layout, z))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for y in targets {
        let target = metric.target(y, None)?;
        total += match_candidates(metric, &target, &generated)?.1;
    }
    Ok(total / targets.len() as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_matched_distance: f64,
    pub wallclock_ms: u128,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: GeneratorState,
    pub log: Vec<EpochRecord>,
    pub metric: Metric,
    /// Matches of the final epoch.
    pub last_matches: Vec<MatchRecord>,
}

impl TrainOutcome {
    /// Calibrated (or configured) layer weights; empty for squared L2.
    pub fn lambda(&self) -> Vec<f64> {
        match &self.metric {
            Metric::Perceptual(p) => p.lambda.values().to_vec(),
            Metric::L2 => Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    /// Training produced a non-finite value. `state` is the last finite state.
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        state: Box<GeneratorState>,
        source: Error,
    },
}

/// Read-only context shared by all epochs.
struct Plan<'a> {
    dataset: &'a Dataset,
    config: &'a TrainConfig,
    base: Rng,
    table: Option<RarityTable>,
    masks: Vec<Option<Tensor>>,
}

impl Plan<'_> {
    fn batch(&self, epoch: usize) -> Result<Vec<usize>> {
        let mut rng = self.base.derive(&[TAG_BATCH, epoch as u64]);
        match &self.table {
            Some(t) => t.sample_batch(&mut rng, self.config.batch_size),
            None => Ok(rng.choose_distinct(self.dataset.len(), self.config.batch_size)),
        }
    }

    fn target(&self, metric: &Metric, k: usize) -> Result<Target> {
        metric.target(&self.dataset.get(k).image, self.masks[k].as_ref())
    }
}

/// Stream for candidate `j` of batch slot `slot` in `epoch`.
fn noise_rng(base: &Rng, epoch: usize, slot: usize, j: usize) -> Rng {
    base.derive(&[TAG_NOISE, epoch as u64, slot as u64, j as u64])
}

fn check_dataset(state: &GeneratorState, dataset: &Dataset) -> Result<()> {
    let spec = state.spec();
    if dataset.num_classes() != spec.input_classes
        || dataset.image_dims() != (spec.height, spec.width, spec.out_channels)
    {
        return Err(shape(format!(
            "dataset ({} classes, images {:?}) does not fit the generator ({} classes, {}x{}x{})",
            dataset.num_classes(),
            dataset.image_dims(),
            spec.input_classes,
            spec.height,
            spec.width,
            spec.out_channels
        )));
    }
    Ok(())
}

/// Builds the training metric, calibrating `λ` on the first batch against
/// outputs of the initial model when no weights are configured.
fn build_metric(plan: &Plan<'_>, state: &GeneratorState) -> Result<Metric> {
    let cfg = plan.config;
    match cfg.distance {
        DistanceKind::L2 => Ok(Metric::L2),
        DistanceKind::Perceptual => {
            let (h, w, c) = plan.dataset.image_dims();
            let fe = FeatureExtractor::new(cfg.extractor_seed, h, w, c, &cfg.feature_channels)?;
            let lambda = match &cfg.lambda {
                Some(l) => LayerWeights::new(l.clone())?,
                None => {
                    let batch = plan.batch(0)?;
                    let pairs = batch
                        .iter()
                        .enumerate()
                        .map(|(slot, &k)| {
                            let ex = plan.dataset.get(k);
                            let z = state
                                .spec()
                                .sample_latent(&mut plan.base.derive(&[TAG_CALIBRATE, slot as u64]));
                            Ok((ex.image.clone(), state.generate(&ex.layout, &z)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    calibrate_lambda(&fe, &pairs)?
                }
            };
            Ok(Metric::Perceptual(Perceptual::new(fe, lambda)?))
        }
    }
}

/// Runs the conditional IMLE loop from `initial`. `on_epoch` sees every
/// epoch's log record, the state after its inner steps and the training
/// metric.
pub fn train(
    initial: GeneratorState,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &GeneratorState, &Metric),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_dataset(&initial, dataset)?;
    let table = if config.rebalance {
        Some(rarity_scores(dataset)?)
    } else {
        None
    };
    let masks = match (&table, config.distance) {
        (Some(t), DistanceKind::Perceptual) => dataset
            .examples()
            .iter()
            .enumerate()
            .map(|(k, ex)| t.rarity_mask(k, &ex.layout).map(Some))
            .collect::<Result<Vec<_>>>()?,
        _ => vec![None; dataset.len()],
    };
    let plan = Plan {
        dataset,
        config,
        base: Rng::new(config.seed),
        table,
        masks,
    };
    let metric = build_metric(&plan, &initial)?;
    let mut state = initial;
    let mut log = Vec::with_capacity(config.epochs);
    let mut last_matches = Vec::new();
    let started = Instant::now();

    for epoch in 0..config.epochs {
        let diverged = |state: &GeneratorState, source: Error| TrainError::Diverged {
            epoch: epoch + 1,
            state: Box::new(state.clone()),
            source,
        };
        let batch = plan.batch(epoch)?;
        let targets = batch
            .par_iter()
            .map(|&k| plan.target(&metric, k))
            .collect::<Result<Vec<_>>>()?;

        // Matching against the parameters frozen at the start of the epoch.
        let snapshot = &state;
        let matches = batch
            .par_iter()
            .zip(&targets)
            .enumerate()
            .map(|(slot, (&k, target))| {
                let x = &dataset.get(k).layout;
                let mut best: Option<MatchRecord> = None;
                for j in 0..config.samples_per_example {
                    let latent = snapshot
                        .spec()
                        .sample_latent(&mut noise_rng(&plan.base, epoch, slot, j));
                    let y_hat = snapshot.generate(x, &latent)?;
                    let d = metric.distance(target, &y_hat)?;
                    if !d.is_finite() {
                        return Err(Error::NonFinite(format!("distance for example {k}")));
                    }
                    if best.as_ref().is_none_or(|b| d < b.distance) {
                        best = Some(MatchRecord {
                            example: k,
                            sigma: j,
                            latent,
                            distance: d,
                        });
                    }
                }
                Ok(best.expect("m >= 1"))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| diverged(&state, e))?;
        let mean = matches.iter().map(|m| m.distance).sum::<f64>() / matches.len() as f64;

        let mut inner_rng = plan.base.derive(&[TAG_INNER, epoch as u64]);
        let scale = 1.0 / config.inner_batch as f64;
        for _ in 0..config.inner_steps {
            let picks = inner_rng.choose_distinct(matches.len(), config.inner_batch);
            let current = &state;
            let grads = picks
                .par_iter()
                .map(|&s| {
                    let x = &dataset.get(matches[s].example).layout;
                    let trace = current.trace(x, &matches[s].latent)?;
                    let (value, upstream) = metric.distance_and_grad(&targets[s], trace.output())?;
                    if !value.is_finite() {
                        return Err(Error::NonFinite("matched loss".into()));
                    }
                    current.backward_trace(&trace, &upstream)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| diverged(&state, e))?;
            let mut total = Gradient::zeros_like(&state);
            for g in &grads {
                total.add_scaled(scale, g);
            }
            let before = state.clone();
            state
                .apply_update(&total, config.learning_rate)
                .map_err(|e| diverged(&before, e))?;
        }

        let record = EpochRecord {
            epoch: epoch + 1,
            mean_matched_distance: mean,
            wallclock_ms: started.elapsed().as_millis(),
        };
        log::debug!("epoch {} mean matched distance {:.6}", record.epoch, mean);
        on_epoch(&record, &state, &metric);
        log.push(record);
        last_matches = matches;
    }

    Ok(TrainOutcome {
        state,
        log,
        metric,
        last_matches,
    })
}
