//! Evaluation protocols: sample diversity, mode coverage, latent
//! interpolation and fixed-latent style transfer across layouts.

use rayon::prelude::*;

use crate::datasynth::{euclidean, min_pairwise_distance};
use crate::distance::{FeatureExtractor, Metric, Perceptual, DEFAULT_FEATURE_CHANNELS};
use crate::error::{invalid, Result};
use crate::generator::{GeneratorSpec, GeneratorState};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Latent, SemanticLayout};

pub const DEFAULT_PAIRS: usize = 40;
pub const DEFAULT_INPUTS: usize = 100;
/// Seed of the held-out evaluation extractor; differs from the training default.
pub const DEFAULT_EVAL_SEED: u64 = 0xe7a1_5eed;

const TAG_LATENT: u64 = 0x1a7e;

/// The `index`-th latent of the stream named by `seed`. Sampling,
/// interpolation and diversity all draw latents through this.
pub fn latent_for(spec: &GeneratorSpec, seed: u64, index: u64) -> Latent {
    spec.sample_latent(&mut Rng::new(seed).derive(&[TAG_LATENT, index]))
}

/// Perceptual metric with unit-mean layer weights on a frozen extractor
/// seeded independently of training.
pub fn held_out_metric(seed: u64, height: usize, width: usize, channels: usize) -> Result<Metric> {
    let fe = FeatureExtractor::for_resolution(seed, height, width, channels, &DEFAULT_FEATURE_CHANNELS)?;
    Ok(Metric::Perceptual(Perceptual::mean_abs(fe)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub per_input: Vec<f64>,
    pub global_mean: f64,
    pub num_inputs: usize,
    pub pairs_per_input: usize,
    pub metric_seed: u64,
}

impl DiversityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("input_index,mean_pair_distance\n");
        for (i, d) in self.per_input.iter().enumerate() {
            out.push_str(&format!("{i},{d}\n"));
        }
        out.push_str(&format!("mean,{}\n", self.global_mean));
        out
    }
}

/// Latent stream for one diversity input, keyed by the layout's content.
pub fn input_stream(seed: u64, x: &SemanticLayout) -> u64 {
    let mut h = crc32fast::Hasher::new();
    h.update(&(x.height() as u64).to_le_bytes());
    h.update(&(x.width() as u64).to_le_bytes());
    h.update(x.raw_labels());
    Rng::new(seed).derive(&[u64::from(h.finalize())]).next_u64()
}

fn pair_distance(state: &GeneratorState, x: &SemanticLayout, a: &Latent, b: &Latent, metric: &Metric) -> Result<f64> {
    let ya = state.generate(x, a)?;
    let yb = state.generate(x, b)?;
    metric.distance(&metric.target(&ya, None)?, &yb)
}

/// Mean metric distance between paired samples per input, then over inputs.
/// Each input draws its latents from [`input_stream`], so the report does not
/// depend on input order.
pub fn diversity_score(
    state: &GeneratorState,
    inputs: &[SemanticLayout],
    pairs_per_input: usize,
    metric: &Metric,
    seed: u64,
) -> Result<DiversityReport> {
    if pairs_per_input == 0 {
        return Err(invalid("pairs_per_input must be >= 1"));
    }
    if inputs.is_empty() {
        return Err(invalid("diversity needs at least one input"));
    }
    let per_input = inputs
        .par_iter()
        .map(|x| {
            let stream = input_stream(seed, x);
            let mut sum = 0.0;
            for p in 0..pairs_per_input as u64 {
                let a = latent_for(state.spec(), stream, 2 * p);
                let b = latent_for(state.spec(), stream, 2 * p + 1);
                sum += pair_distance(state, x, &a, &b, metric)?;
            }
            Ok(sum / pairs_per_input as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let global_mean = per_input.iter().sum::<f64>() / per_input.len() as f64;
    Ok(DiversityReport {
        num_inputs: per_input.len(),
        per_input,
        global_mean,
        pairs_per_input,
        metric_seed: seed,
    })
}

/// Fraction of `modes` with at least one sample within Euclidean `epsilon`.
pub fn coverage_of_samples(samples: &[Vec<f64>], modes: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    check_epsilon(modes, epsilon)?;
    let hit = modes
        .iter()
        .filter(|m| samples.iter().any(|s| euclidean(s, m) <= epsilon))
        .count();
    Ok(hit as f64 / modes.len() as f64)
}

fn check_epsilon(modes: &[Vec<f64>], epsilon: f64) -> Result<()> {
    if modes.is_empty() {
        return Err(invalid("mode coverage needs at least one mode"));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(invalid("epsilon must be > 0"));
    }
    if modes.len() > 1 && epsilon >= 0.5 * min_pairwise_distance(modes) {
        return Err(invalid(format!("epsilon {epsilon} makes mode balls overlap")));
    }
    Ok(())
}

/// Draws `n` samples for `condition` and measures [`coverage_of_samples`].
pub fn mode_coverage(
    state: &GeneratorState,
    condition: &SemanticLayout,
    true_modes: &[Vec<f64>],
    epsilon: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n == 0 {
        return Err(invalid("mode coverage needs >= 1 sample"));
    }
    check_epsilon(true_modes, epsilon)?;
    let samples = (0..n)
        .map(|_| {
            let z = state.spec().sample_latent(rng);
            Ok(state.generate(condition, &z)?.into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    coverage_of_samples(&samples, true_modes, epsilon)
}

/// Frames along the straight segment from `a` to `b` in latent space, with
/// `α = k / (steps - 1)`. The end frames use `a` and `b` verbatim.
pub fn interpolate(
    state: &GeneratorState,
    x: &SemanticLayout,
    a: &Latent,
    b: &Latent,
    steps: usize,
) -> Result<Vec<ImageTensor>> {
    if steps < 2 {
        return Err(invalid("interpolation needs >= 2 steps"));
    }
    a.lerp(b, 0.5)?;
    (0..steps)
        .into_par_iter()
        .map(|k| {
            let z = match k {
                0 => a.clone(),
                k if k == steps - 1 => b.clone(),
                _ => a.lerp(b, k as f64 / (steps - 1) as f64)?,
            };
            state.generate(x, &z)
        })
        .collect()
}

/// One image per layout, all from the same latent.
pub fn style_consistency(state: &GeneratorState, layouts: &[SemanticLayout], z: &Latent) -> Result<Vec<ImageTensor>> {
    layouts.par_iter().map(|x| state.generate(x, z)).collect()
}
