//! Dataset and loss rebalancing by appearance rarity.
//!
//! For every category the per-image average colour is modelled with an
//! isotropic Gaussian KDE. An image's rarity score for a category is the
//! reciprocal of that density at its own average colour (zero when the
//! category is absent). Training batches are split evenly across the five
//! largest-area categories and filled in proportion to rarity; the loss is
//! weighted per pixel by the normalised rarity of the pixel's category.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{invalid, shape, Result};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, SemanticLayout, Tensor};

pub type Color = [f64; 3];

/// Number of categories that receive a share of each batch.
pub const TOP_CATEGORIES: usize = 5;

/// Lower bound on the KDE bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Mean colour of the pixels of class `class`, or `None` when it is absent.
pub fn average_color(x: &SemanticLayout, y: &ImageTensor, class: usize) -> Result<Option<Color>> {
    if (x.height(), x.width()) != (y.height(), y.width()) || y.channels() != 3 {
        return Err(shape(format!(
            "layout {}x{} vs image {:?}",
            x.height(),
            x.width(),
            y.dims()
        )));
    }
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for (n, label) in x.labels().enumerate() {
        if label == class {
            let px = &y.data()[3 * n..3 * n + 3];
            for (s, v) in sum.iter_mut().zip(px) {
                *s += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some(sum.map(|s| s / count as f64)))
}

/// Isotropic Gaussian kernel density estimate over colours.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    centres: Vec<Color>,
    bandwidth: f64,
}

impl Kde {
    pub fn fit(colors: &[Color], bandwidth: f64) -> Result<Self> {
        if colors.is_empty() {
            return Err(invalid("KDE needs at least one colour"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid(format!("KDE bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Self {
            centres: colors.to_vec(),
            bandwidth,
        })
    }

    /// Fits with [`scott_bandwidth`].
    pub fn fit_scott(colors: &[Color]) -> Result<Self> {
        Self::fit(colors, scott_bandwidth(colors))
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn centres(&self) -> &[Color] {
        &self.centres
    }

    /// `(1/N) Σ_k N(c; c_k, h² I)`.
    pub fn density(&self, c: &Color) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let norm = (2.0 * std::f64::consts::PI * h2).powf(-1.5);
        let sum: f64 = self
            .centres
            .iter()
            .map(|m| {
                let d2: f64 = m.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (-0.5 * d2 / h2).exp()
            })
            .sum();
        norm * sum / self.centres.len() as f64
    }
}

/// Scott's rule for 3-d data, `N^(-1/7) · σ̂` with `σ̂` the mean per-axis
/// sample standard deviation, floored at [`MIN_BANDWIDTH`].
pub fn scott_bandwidth(colors: &[Color]) -> f64 {
    let n = colors.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mut sigma = 0.0;
    for axis in 0..3 {
        let mean = colors.iter().map(|c| c[axis]).sum::<f64>() / n as f64;
        let var = colors.iter().map(|c| (c[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sigma += var.sqrt() / 3.0;
    }
    ((n as f64).powf(-1.0 / 7.0) * sigma).max(MIN_BANDWIDTH)
}

/// Per-category colour statistics, rarity scores and sampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct RarityTable {
    num_images: usize,
    /// `[class][image]` average colour.
    colors: Vec<Vec<Option<Color>>>,
    /// `[class][image]` density `D_p(c_k(p))`; 0 when absent.
    densities: Vec<Vec<f64>>,
    /// `[class][image]` rarity `R_p(k)`.
    scores: Vec<Vec<f64>>,
    kdes: Vec<Option<Kde>>,
    areas: Vec<usize>,
    top: Vec<usize>,
}

/// One row of the rebalancing statistics report.
#[derive(Debug, Clone, PartialEq)]
pub struct RarityRow {
    pub category: usize,
    pub image_index: usize,
    pub color: Color,
    pub density: f64,
    pub rarity: f64,
}

/// Builds the rarity table for a dataset of RGB images.
pub fn rarity_scores(dataset: &Dataset) -> Result<RarityTable> {
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    if dataset.image_dims().2 != 3 {
        return Err(shape("rarity scores need RGB images"));
    }
    let p = dataset.num_classes();
    let n = dataset.len();
    let mut colors = vec![vec![None; n]; p];
    let mut areas = vec![0usize; p];
    for (k, ex) in dataset.examples().iter().enumerate() {
        for (class, a) in ex.layout.class_areas().into_iter().enumerate() {
            areas[class] += a;
            if a > 0 {
                colors[class][k] = average_color(&ex.layout, &ex.image, class)?;
            }
        }
    }
    let mut densities = vec![vec![0.0; n]; p];
    let mut scores = vec![vec![0.0; n]; p];
    let mut kdes = Vec::with_capacity(p);
    for class in 0..p {
        let present: Vec<Color> = colors[class].iter().flatten().copied().collect();
        if present.is_empty() {
            kdes.push(None);
            continue;
        }
        let kde = Kde::fit_scott(&present)?;
        for k in 0..n {
            if let Some(c) = &colors[class][k] {
                let d = kde.density(c);
                densities[class][k] = d;
                scores[class][k] = 1.0 / d;
            }
        }
        kdes.push(Some(kde));
    }
    let mut order: Vec<usize> = (0..p).filter(|&c| areas[c] > 0).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    order.truncate(TOP_CATEGORIES);
    Ok(RarityTable {
        num_images: n,
        colors,
        densities,
        scores,
        kdes,
        areas,
        top: order,
    })
}

impl RarityTable {
    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    /// `R_p(k)`.
    pub fn score(&self, class: usize, image: usize) -> f64 {
        self.scores[class][image]
    }

    pub fn scores(&self, class: usize) -> &[f64] {
        &self.scores[class]
    }

    pub fn color(&self, class: usize, image: usize) -> Option<Color> {
        self.colors[class][image]
    }

    pub fn density(&self, class: usize, image: usize) -> f64 {
        self.densities[class][image]
    }

    pub fn kde(&self, class: usize) -> Option<&Kde> {
        self.kdes[class].as_ref()
    }

    /// Total pixel area of each class over the dataset.
    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    /// Up to five categories with the largest total area, largest first.
    pub fn top_categories(&self) -> &[usize] {
        &self.top
    }

    /// Multiplies every score of one category by `factor`.
    pub fn scale_category(&mut self, class: usize, factor: f64) {
        for s in &mut self.scores[class] {
            *s *= factor;
        }
    }

    /// `(category, draws)` per portion: equal shares, remainder to the
    /// largest-area category.
    pub fn portions(&self, batch_size: usize) -> Vec<(usize, usize)> {
        let n = self.top.len();
        let base = batch_size / n;
        let rem = batch_size % n;
        self.top
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, base + if i == 0 { rem } else { 0 }))
            .collect()
    }

    /// Rarity-weighted batch of image indices, portion by portion. Within
    /// category `p`'s portion image `k` is drawn with probability
    /// `R_p(k) / Σ R_p`. Draws are with replacement.
    pub fn sample_batch(&self, rng: &mut Rng, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size < TOP_CATEGORIES {
            return Err(invalid(format!(
                "batch size must be >= {TOP_CATEGORIES}, got {batch_size}"
            )));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for (class, count) in self.portions(batch_size) {
            let weights = &self.scores[class];
            let uniform = weights.iter().all(|&w| w <= 0.0);
            if uniform {
                log::warn!("category {class} has no positive rarity scores; sampling its portion uniformly");
            }
            for _ in 0..count {
                let k = if uniform {
                    rng.below(self.num_images)
                } else {
                    rng.weighted(weights).expect("positive weights")
                };
                batch.push(k);
            }
        }
        Ok(batch)
    }

    /// Normalised rarity mask `M̂^k` for image `k` with layout `x`: each
    /// pixel carries its category's score, divided by the image maximum.
    pub fn rarity_mask(&self, image: usize, x: &SemanticLayout) -> Result<Tensor> {
        if x.num_classes() != self.num_classes() {
            return Err(shape("layout class count does not match the rarity table"));
        }
        let raw: Vec<f64> = x.labels().map(|p| self.scores[p][image]).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        let data = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            log::warn!("image {image} has no positive rarity; using an all-ones mask");
            vec![1.0; raw.len()]
        };
        Tensor::from_vec(x.height(), x.width(), 1, data)
    }

    /// One row per present `(category, image)`, ordered by category then image.
    pub fn rows(&self) -> Vec<RarityRow> {
        let mut rows = Vec::new();
        for (class, per_image) in self.colors.iter().enumerate() {
            for (k, c) in per_image.iter().enumerate() {
                if let Some(color) = c {
                    rows.push(RarityRow {
                        category: class,
                        image_index: k,
                        color: *color,
                        density: self.densities[class][k],
                        rarity: self.scores[class][k],
                    });
                }
            }
        }
        rows
    }

    /// CSV with header `category,image_index,avg_r,avg_g,avg_b,density,rarity`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,image_index,avg_r,avg_g,avg_b,density,rarity\n");
        for r in self.rows() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.category, r.image_index, r.color[0], r.color[1], r.color[2], r.density, r.rarity
            );
        }
        s
    }
}
