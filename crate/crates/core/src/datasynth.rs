//! Synthetic datasets with known conditional modes.
//!
//! - The GMM task maps a condition id (a 1x1 one-hot layout) to a point drawn
//!   from one of `k` well-separated Gaussian modes.
//! - The layout task paints banded semantic layouts with one palette colour
//!   per class per image, so appearance modes are consistent within an image.

use crate::dataset::{Dataset, Example, ModeLabel};
use crate::error::{invalid, Result};
use crate::rebalance::Color;
use crate::rng::Rng;
use crate::tensor::{SemanticLayout, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTaskSpec {
    pub num_conditions: usize,
    pub modes_per_condition: usize,
    /// `[condition][mode]` centre in output space.
    pub centres: Vec<Vec<Vec<f64>>>,
    pub std: f64,
    pub samples_per_condition: usize,
}

impl GmmTaskSpec {
    /// Modes evenly spaced on a circle of `radius` in 2-d, rotated by a
    /// different offset for each condition.
    pub fn ring(num_conditions: usize, modes: usize, radius: f64, std: f64, samples_per_condition: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / modes as f64;
        let centres = (0..num_conditions)
            .map(|c| {
                let offset = step * c as f64 / num_conditions.max(1) as f64;
                (0..modes)
                    .map(|j| {
                        let a = offset + step * j as f64;
                        vec![radius * a.cos(), radius * a.sin()]
                    })
                    .collect()
            })
            .collect();
        Self {
            num_conditions,
            modes_per_condition: modes,
            centres,
            std,
            samples_per_condition,
        }
    }

    pub fn dim(&self) -> usize {
        self.centres.first().and_then(|c| c.first()).map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_conditions == 0 || self.samples_per_condition == 0 {
            return Err(invalid("GMM task needs >= 1 condition and >= 1 sample per condition"));
        }
        if self.num_conditions > 256 {
            return Err(invalid("GMM task supports at most 256 conditions"));
        }
        if self.modes_per_condition < 2 {
            return Err(invalid("GMM task needs >= 2 modes per condition"));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(invalid("GMM std must be finite and >= 0"));
        }
        let dim = self.dim();
        if dim == 0 || self.centres.len() != self.num_conditions {
            return Err(invalid("centre table does not match num_conditions"));
        }
        for (c, modes) in self.centres.iter().enumerate() {
            if modes.len() != self.modes_per_condition || modes.iter().any(|m| m.len() != dim) {
                return Err(invalid(format!("condition {c}: centre table has the wrong shape")));
            }
            if min_pairwise_distance(modes) < 6.0 * self.std {
                return Err(invalid(format!("condition {c}: modes closer than 6 std")));
            }
        }
        Ok(())
    }
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min(euclidean(a, b));
        }
    }
    best
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct GmmDataset {
    pub spec: GmmTaskSpec,
    pub dataset: Dataset,
    /// One label per example: its condition (`class`) and true mode.
    pub labels: Vec<ModeLabel>,
}

impl GmmDataset {
    /// The 1x1 one-hot layout of a condition.
    pub fn condition_layout(&self, condition: usize) -> SemanticLayout {
        condition_layout(condition, self.spec.num_conditions)
    }
}

pub fn condition_layout(condition: usize, num_conditions: usize) -> SemanticLayout {
    SemanticLayout::from_labels(1, 1, &[condition], num_conditions).expect("condition id in range")
}

/// Samples are ordered by condition; each picks a mode uniformly.
pub fn gen_gmm_dataset(spec: &GmmTaskSpec, rng: &mut Rng) -> Result<GmmDataset> {
    spec.validate()?;
    let dim = spec.dim();
    let mut examples = Vec::with_capacity(spec.num_conditions * spec.samples_per_condition);
    let mut labels = Vec::with_capacity(examples.capacity());
    for c in 0..spec.num_conditions {
        let layout = condition_layout(c, spec.num_conditions);
        for _ in 0..spec.samples_per_condition {
            let mode = rng.below(spec.modes_per_condition);
            let centre = &spec.centres[c][mode];
            let y: Vec<f64> = centre.iter().map(|m| m + spec.std * rng.normal()).collect();
            labels.push(ModeLabel {
                image: examples.len(),
                class: c,
                mode,
            });
            examples.push(Example {
                layout: layout.clone(),
                image: Tensor::from_vec(1, 1, dim, y)?,
            });
        }
    }
    Ok(GmmDataset {
        spec: spec.clone(),
        dataset: Dataset::new(examples)?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutTaskSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// `[class][mode]` RGB colour.
    pub palettes: Vec<Vec<Color>>,
    pub num_layouts: usize,
    pub images_per_layout: usize,
    pub noise_std: f64,
    /// Probability of palette mode 0 for every class; the other modes share
    /// the rest evenly. `None` draws modes uniformly.
    pub dominant_mode_prob: Option<f64>,
    pub layout_seed: u64,
}

/// Minimum max-norm separation between palette modes of one class.
pub const PALETTE_SEPARATION: f64 = 0.3;

/// `modes` colours per class with pairwise max-norm separation of at least
/// [`PALETTE_SEPARATION`], drawn deterministically from `seed`.
pub fn generate_palettes(num_classes: usize, modes: usize, seed: u64) -> Vec<Vec<Color>> {
    let base = Rng::new(seed).derive(&[0x9a1e]);
    (0..num_classes)
        .map(|class| {
            let mut rng = base.derive(&[class as u64]);
            let mut chosen: Vec<Color> = Vec::with_capacity(modes);
            while chosen.len() < modes {
                let c = [
                    0.05 + 0.9 * rng.uniform(),
                    0.05 + 0.9 * rng.uniform(),
                    0.05 + 0.9 * rng.uniform(),
                ];
                if chosen.iter().all(|o| max_norm(o, &c) >= PALETTE_SEPARATION + 0.05) {
                    chosen.push(c);
                }
            }
            chosen
        })
        .collect()
}

fn max_norm(a: &Color, b: &Color) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl LayoutTaskSpec {
    /// 16x32 layouts, 6 classes with 2 palette modes each, 8 layouts of 64
    /// images.
    pub fn standard(seed: u64) -> Self {
        Self {
            height: 16,
            width: 32,
            num_classes: 6,
            palettes: generate_palettes(6, 2, seed),
            num_layouts: 8,
            images_per_layout: 64,
            noise_std: 0.02,
            dominant_mode_prob: None,
            layout_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("layout resolution must be >= 1x1"));
        }
        if self.height < 2 && self.width < 2 {
            return Err(invalid("layouts need room for two regions"));
        }
        if !(2..=8).contains(&self.num_classes) {
            return Err(invalid("layout task needs 2..=8 classes"));
        }
        if self.palettes.len() != self.num_classes {
            return Err(invalid("one palette per class required"));
        }
        for (class, pal) in self.palettes.iter().enumerate() {
            if pal.is_empty() {
                return Err(invalid(format!("class {class} has an empty palette")));
            }
            if pal.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!("class {class}: palette colours must lie in [0, 1]")));
            }
            for (i, a) in pal.iter().enumerate() {
                for b in &pal[i + 1..] {
                    if max_norm(a, b) < PALETTE_SEPARATION {
                        return Err(invalid(format!("class {class}: palette modes closer than 0.3")));
                    }
                }
            }
        }
        if self.num_layouts == 0 || self.images_per_layout == 0 {
            return Err(invalid("need >= 1 layout and >= 1 image per layout"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std must be finite and >= 0"));
        }
        if let Some(p) = self.dominant_mode_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("dominant_mode_prob must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayoutDataset {
    pub spec: LayoutTaskSpec,
    pub dataset: Dataset,
    /// Procedural layout index of every example.
    pub layout_index: Vec<usize>,
    /// One label per present `(image, class)`.
    pub labels: Vec<ModeLabel>,
}

impl LayoutDataset {
    /// The distinct layouts, in generation order.
    pub fn layouts(&self) -> Vec<SemanticLayout> {
        (0..self.spec.num_layouts)
            .map(|l| self.dataset.get(l * self.spec.images_per_layout).layout.clone())
            .collect()
    }

    /// Palette mode of `class` in image `k`, if present.
    pub fn mode_of(&self, image: usize, class: usize) -> Option<usize> {
        self.labels
            .iter()
            .find(|l| l.image == image && l.class == class)
            .map(|l| l.mode)
    }
}

/// Banded layout: 2 to 4 horizontal or vertical stripes, each a distinct class.
fn procedural_layout(spec: &LayoutTaskSpec, rng: &mut Rng) -> Result<SemanticLayout> {
    let horizontal = if spec.height < 2 {
        false
    } else if spec.width < 2 {
        true
    } else {
        rng.below(2) == 0
    };
    let extent = if horizontal { spec.height } else { spec.width };
    let max_bands = spec.num_classes.min(4).min(extent);
    let bands = 2 + rng.below(max_bands - 1);
    let mut cuts = rng.choose_distinct(extent - 1, bands - 1);
    cuts.iter_mut().for_each(|c| *c += 1);
    cuts.sort_unstable();
    let classes = rng.choose_distinct(spec.num_classes, bands);
    let band_of = |pos: usize| cuts.iter().take_while(|&&c| c <= pos).count();
    let labels: Vec<usize> = (0..spec.height * spec.width)
        .map(|n| {
            let pos = if horizontal { n / spec.width } else { n % spec.width };
            classes[band_of(pos)]
        })
        .collect();
    SemanticLayout::from_labels(spec.height, spec.width, &labels, spec.num_classes)
}

fn draw_mode(rng: &mut Rng, modes: usize, dominant: Option<f64>) -> usize {
    match dominant {
        Some(p) if modes > 1 => {
            if rng.uniform() < p {
                0
            } else {
                1 + rng.below(modes - 1)
            }
        }
        _ => rng.below(modes),
    }
}

/// Examples are ordered by layout, then image. Pixel noise is Gaussian,
/// truncated at 4 std per channel, and the result clamped to `[0, 1]`.
pub fn gen_layout_dataset(spec: &LayoutTaskSpec, rng: &mut Rng) -> Result<LayoutDataset> {
    spec.validate()?;
    let shapes = Rng::new(spec.layout_seed).derive(&[0x1a7]);
    let mut examples = Vec::with_capacity(spec.num_layouts * spec.images_per_layout);
    let mut labels = Vec::new();
    let mut layout_index = Vec::with_capacity(examples.capacity());
    for l in 0..spec.num_layouts {
        let layout = procedural_layout(spec, &mut shapes.derive(&[l as u64]))?;
        for _ in 0..spec.images_per_layout {
            let k = examples.len();
            let modes: Vec<usize> = spec
                .palettes
                .iter()
                .map(|pal| draw_mode(rng, pal.len(), spec.dominant_mode_prob))
                .collect();
            let mut image = Tensor::zeros(spec.height, spec.width, 3);
            for (n, class) in layout.labels().enumerate() {
                let colour = spec.palettes[class][modes[class]];
                for (ch, &base) in colour.iter().enumerate() {
                    let noise = (spec.noise_std * rng.normal()).clamp(-4.0 * spec.noise_std, 4.0 * spec.noise_std);
                    image.data_mut()[3 * n + ch] = (base + noise).clamp(0.0, 1.0);
                }
            }
            for (class, &mode) in modes.iter().enumerate() {
                if layout.contains(class) {
                    labels.push(ModeLabel { image: k, class, mode });
                }
            }
            examples.push(Example {
                layout: layout.clone(),
                image,
            });
            layout_index.push(l);
        }
    }
    Ok(LayoutDataset {
        spec: spec.clone(),
        dataset: Dataset::new(examples)?,
        layout_index,
        labels,
    })
}

/// Index of the palette colour nearest (Euclidean) to `colour`.
pub fn nearest_palette_mode(colour: &Color, palette: &[Color]) -> usize {
    palette
        .iter()
        .enumerate()
        .map(|(i, p)| (i, euclidean(p, colour)))
        .fold(
            (0, f64::INFINITY),
            |best, (i, d)| if d < best.1 { (i, d) } else { best },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rebalance::rarity_scores;

    #[test]
    fn zero_std_samples_sit_on_centres() {
        let spec = GmmTaskSpec::ring(4, 3, 1.0, 0.0, 50);
        let ds = gen_gmm_dataset(&spec, &mut Rng::new(1)).unwrap();
        for (ex, l) in ds.dataset.examples().iter().zip(&ds.labels) {
            assert_eq!(ex.image.data(), spec.centres[l.class][l.mode].as_slice());
            assert_eq!(ex.layout.label(0, 0), l.class);
        }
    }

    // Binomial standard error sqrt(p(1-p)/n) with n = 1e4 draws, p = 1/3.
    #[test]
    fn mode_frequencies_are_uniform() {
        let spec = GmmTaskSpec::ring(1, 3, 1.0, 0.05, 10_000);
        let ds = gen_gmm_dataset(&spec, &mut Rng::new(2)).unwrap();
        let mut counts = [0usize; 3];
        for l in &ds.labels {
            counts[l.mode] += 1;
        }
        let p: f64 = 1.0 / 3.0;
        let se = (p * (1.0 - p) / 10_000.0).sqrt();
        for c in counts {
            assert!((c as f64 / 10_000.0 - p).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn gmm_is_deterministic_and_validated() {
        let spec = GmmTaskSpec::ring(4, 3, 1.0, 0.05, 20);
        let a = gen_gmm_dataset(&spec, &mut Rng::new(3)).unwrap();
        let b = gen_gmm_dataset(&spec, &mut Rng::new(3)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert!(gen_gmm_dataset(&GmmTaskSpec::ring(4, 3, 1.0, 0.5, 20), &mut Rng::new(3)).is_err());
        assert!(gen_gmm_dataset(&GmmTaskSpec::ring(4, 1, 1.0, 0.05, 20), &mut Rng::new(3)).is_err());
    }

    #[test]
    fn mode_balls_are_pure() {
        let spec = GmmTaskSpec::ring(4, 3, 1.0, 0.05, 200);
        let ds = gen_gmm_dataset(&spec, &mut Rng::new(4)).unwrap();
        for (ex, l) in ds.dataset.examples().iter().zip(&ds.labels) {
            for (m, centre) in spec.centres[l.class].iter().enumerate() {
                if euclidean(ex.image.data(), centre) <= 3.0 * spec.std {
                    assert_eq!(m, l.mode);
                }
            }
        }
    }

    #[test]
    fn single_mode_zero_noise_images_repeat() {
        let spec = LayoutTaskSpec {
            num_classes: 2,
            palettes: vec![vec![[0.1, 0.2, 0.3]], vec![[0.9, 0.8, 0.7]]],
            noise_std: 0.0,
            num_layouts: 3,
            images_per_layout: 4,
            ..LayoutTaskSpec::standard(5)
        };
        let ds = gen_layout_dataset(&spec, &mut Rng::new(5)).unwrap();
        for k in 0..ds.dataset.len() {
            let first = ds.layout_index[k] * 4;
            assert_eq!(ds.dataset.get(k).image, ds.dataset.get(first).image);
        }
    }

    #[test]
    fn pixels_stay_near_their_mode_and_layouts_have_two_classes() {
        let spec = LayoutTaskSpec {
            noise_std: 0.05,
            images_per_layout: 8,
            ..LayoutTaskSpec::standard(6)
        };
        let ds = gen_layout_dataset(&spec, &mut Rng::new(6)).unwrap();
        for (k, ex) in ds.dataset.examples().iter().enumerate() {
            assert!(ex.layout.class_areas().iter().filter(|&&a| a > 0).count() >= 2);
            for r in 0..spec.height {
                for c in 0..spec.width {
                    let class = ex.layout.label(r, c);
                    let mode = ds.mode_of(k, class).unwrap();
                    let target = spec.palettes[class][mode];
                    for ch in 0..3 {
                        assert!((ex.image.get(r, c, ch) - target[ch]).abs() <= 4.0 * spec.noise_std + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn palettes_are_separated() {
        for pal in generate_palettes(8, 3, 11) {
            for (i, a) in pal.iter().enumerate() {
                for b in &pal[i + 1..] {
                    assert!(max_norm(a, b) >= PALETTE_SEPARATION);
                }
            }
        }
    }

    #[test]
    fn dominant_mode_is_least_rare() {
        let spec = LayoutTaskSpec {
            dominant_mode_prob: Some(0.9),
            num_layouts: 4,
            images_per_layout: 50,
            ..LayoutTaskSpec::standard(7)
        };
        let ds = gen_layout_dataset(&spec, &mut Rng::new(7)).unwrap();
        let table = rarity_scores(&ds.dataset).unwrap();
        for class in 0..spec.num_classes {
            let (mut common, mut rare) = (Vec::new(), Vec::new());
            for k in 0..ds.dataset.len() {
                match ds.mode_of(k, class) {
                    Some(0) => common.push(table.score(class, k)),
                    Some(_) => rare.push(table.score(class, k)),
                    None => {}
                }
            }
            if common.is_empty() || rare.is_empty() {
                continue;
            }
            let frac = common.len() as f64 / (common.len() + rare.len()) as f64;
            assert!(frac > 0.8, "class {class}: dominant fraction {frac}");
            let max_common = common.iter().copied().fold(0.0, f64::max);
            let min_rare = rare.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(max_common < min_rare, "class {class}");
        }
    }

    #[test]
    fn dataset_file_round_trips() {
        let spec = LayoutTaskSpec {
            num_layouts: 2,
            images_per_layout: 3,
            ..LayoutTaskSpec::standard(8)
        };
        let ds = gen_layout_dataset(&spec, &mut Rng::new(8)).unwrap();
        let mut buf = Vec::new();
        ds.dataset.write(&mut buf).unwrap();
        let back = Dataset::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds.dataset);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.examples()
                .iter()
                .flat_map(|e| e.image.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&back), bits(&ds.dataset));
    }
}
