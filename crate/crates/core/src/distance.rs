//! Distances between images: a multi-scale feature L1 distance with per-layer
//! weights and optional per-pixel weighting, and plain squared L2.
//!
//! The feature pyramid is a frozen stack of randomly initialised 3x3
//! convolutions with `tanh`, separated by 2x average pooling. Its filters are
//! a pure function of the extractor seed.

use crate::error::{invalid, shape, Result};
use crate::nn::{self, Activation, Conv, ConvStack, StackTrace};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Tensor};

pub const DEFAULT_FEATURE_CHANNELS: [usize; 5] = [8, 12, 16, 16, 16];

/// Frozen feature pyramid `Φ_1 … Φ_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    height: usize,
    width: usize,
    in_channels: usize,
    levels: Vec<ConvStack>,
    params: Vec<Vec<f64>>,
}

struct ExtractTrace {
    levels: Vec<StackTrace>,
}

impl FeatureExtractor {
    /// One level per entry of `channels`; level `i` runs at resolution
    /// `(height, width) / 2^i`, so both must be divisible by `2^(l-1)`.
    pub fn new(seed: u64, height: usize, width: usize, in_channels: usize, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(invalid("feature extractor needs >= 1 level, each with >= 1 channel"));
        }
        if height == 0 || width == 0 || in_channels == 0 {
            return Err(invalid("feature extractor dimensions must be >= 1"));
        }
        let factor = 1usize << (channels.len() - 1);
        if !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
            return Err(invalid(format!(
                "{height}x{width} is not divisible by {factor} as {} levels require",
                channels.len()
            )));
        }
        let mut rng = Rng::new(seed).derive(&[0xfea7]);
        let mut levels = Vec::with_capacity(channels.len());
        let mut params = Vec::with_capacity(channels.len());
        let mut cin = in_channels;
        for &c in channels {
            let conv = Conv::new(cin, c, 3);
            let std = 1.0 / (conv.fan_in() as f64).sqrt();
            let mut p: Vec<f64> = (0..conv.weight_count()).map(|_| std * rng.normal()).collect();
            p.extend((0..c).map(|_| 0.1 * rng.normal()));
            levels.push(ConvStack {
                layers: vec![conv],
                hidden: Activation::Tanh,
                last: Activation::Tanh,
            });
            params.push(p);
            cin = c;
        }
        Ok(Self {
            seed,
            height,
            width,
            in_channels,
            levels,
            params,
        })
    }

    /// Five-level extractor with [`DEFAULT_FEATURE_CHANNELS`].
    pub fn standard(seed: u64, height: usize, width: usize) -> Result<Self> {
        Self::new(seed, height, width, 3, &DEFAULT_FEATURE_CHANNELS)
    }

    /// Like [`FeatureExtractor::new`] but drops trailing levels the
    /// resolution cannot be pooled down to.
    pub fn for_resolution(
        seed: u64,
        height: usize,
        width: usize,
        in_channels: usize,
        channels: &[usize],
    ) -> Result<Self> {
        let mut levels = channels.len().max(1);
        while levels > 1 && (!height.is_multiple_of(1 << (levels - 1)) || !width.is_multiple_of(1 << (levels - 1))) {
            levels -= 1;
        }
        Self::new(
            seed,
            height,
            width,
            in_channels,
            &channels[..levels.min(channels.len())],
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.levels.len()
    }

    /// `(height, width, channels)` of `Φ_i`.
    pub fn layer_shape(&self, i: usize) -> (usize, usize, usize) {
        (self.height >> i, self.width >> i, self.levels[i].layers[0].out_channels)
    }

    fn check_input(&self, y: &Tensor) -> Result<()> {
        if y.dims() != (self.height, self.width, self.in_channels) {
            return Err(shape(format!(
                "image {:?} does not match extractor ({}, {}, {})",
                y.dims(),
                self.height,
                self.width,
                self.in_channels
            )));
        }
        y.ensure_finite("distance input")
    }

    fn trace(&self, y: &Tensor) -> ExtractTrace {
        let mut levels = Vec::with_capacity(self.levels.len());
        let mut input = y.clone();
        for (i, (stack, p)) in self.levels.iter().zip(&self.params).enumerate() {
            if i > 0 {
                input = nn::avg_pool2(&input);
            }
            let t = stack.trace(p, &input);
            input = t.output().clone();
            levels.push(t);
        }
        ExtractTrace { levels }
    }

    /// Feature maps `Φ_1(y) … Φ_l(y)`.
    pub fn extract(&self, y: &ImageTensor) -> Result<Vec<Tensor>> {
        self.check_input(y)?;
        Ok(self.trace(y).levels.into_iter().map(StackTrace::into_output).collect())
    }

    /// Back-propagates per-level feature gradients to the input image.
    fn backward(&self, trace: &ExtractTrace, grads: &[Tensor]) -> Tensor {
        let mut carry: Option<Tensor> = None;
        for i in (0..self.levels.len()).rev() {
            let mut g = grads[i].clone();
            if let Some(c) = carry.take() {
                g.axpy(1.0, &nn::avg_pool2_backward(&c));
            }
            let mut scratch = vec![0.0; self.params[i].len()];
            carry = Some(self.levels[i].backward(&self.params[i], &trace.levels[i], &g, &mut scratch));
        }
        carry.expect("at least one level")
    }

    /// Area-averaged copies of a `H×W×1` mask at every level's resolution.
    pub fn mask_pyramid(&self, mask: &Tensor) -> Result<MaskPyramid> {
        if mask.dims() != (self.height, self.width, 1) {
            return Err(shape(format!(
                "mask {:?} must be ({}, {}, 1)",
                mask.dims(),
                self.height,
                self.width
            )));
        }
        if mask.data().iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(invalid("mask entries must lie in (0, 1]"));
        }
        let mut levels = vec![mask.clone()];
        for _ in 1..self.levels.len() {
            let next = nn::avg_pool2(levels.last().expect("non-empty"));
            levels.push(next);
        }
        Ok(MaskPyramid(levels))
    }
}

/// A normalised rarity mask downsampled to each feature level.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid(Vec<Tensor>);

impl MaskPyramid {
    pub fn level(&self, i: usize) -> &Tensor {
        &self.0[i]
    }
}

/// Positive per-layer weights `λ_1 … λ_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights(Vec<f64>);

impl LayerWeights {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("layer weights must be non-empty, finite and > 0"));
        }
        Ok(Self(lambda))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `Σ_c |a - b|` at each pixel, weighted by `mask` when present. Both
/// branches sum per pixel first, so an all-ones mask reproduces the
/// unmasked value exactly.
fn masked_l1(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> f64 {
    let c = a.channels();
    let pixel = |(pa, pb): (&[f64], &[f64])| pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let pairs = a.data().chunks_exact(c).zip(b.data().chunks_exact(c));
    match mask {
        None => pairs.map(pixel).sum(),
        Some(m) => pairs.zip(m.data()).map(|(p, &w)| w * pixel(p)).sum(),
    }
}

/// Per-layer `‖M_i ∘ (Φ_i(y) − Φ_i(ŷ))‖_1` without the `λ` weights.
pub fn layer_differences(
    fe: &FeatureExtractor,
    y: &ImageTensor,
    y_hat: &ImageTensor,
    mask: Option<&MaskPyramid>,
) -> Result<Vec<f64>> {
    let fy = fe.extract(y)?;
    let fh = fe.extract(y_hat)?;
    Ok(fy
        .iter()
        .zip(&fh)
        .enumerate()
        .map(|(i, (a, b))| masked_l1(a, b, mask.map(|m| m.level(i))))
        .collect())
}

/// `Σ_i λ_i ‖M_i ∘ (Φ_i(y) − Φ_i(ŷ))‖_1`.
pub fn perceptual_distance(
    fe: &FeatureExtractor,
    lambda: &LayerWeights,
    y: &ImageTensor,
    y_hat: &ImageTensor,
    mask: Option<&MaskPyramid>,
) -> Result<f64> {
    if lambda.values().len() != fe.num_layers() {
        return Err(shape(format!(
            "{} layer weights for {} layers",
            lambda.values().len(),
            fe.num_layers()
        )));
    }
    let diffs = layer_differences(fe, y, y_hat, mask)?;
    Ok(diffs.iter().zip(lambda.values()).map(|(d, l)| l * d).sum())
}

/// `λ_i = 1 / mean_pairs ‖Φ_i(y) − Φ_i(ŷ)‖_1`, so each layer contributes
/// equally on the calibration set.
pub fn calibrate_lambda(fe: &FeatureExtractor, pairs: &[(ImageTensor, ImageTensor)]) -> Result<LayerWeights> {
    if pairs.is_empty() {
        return Err(invalid("calibration needs at least one pair"));
    }
    let mut sums = vec![0.0; fe.num_layers()];
    for (y, y_hat) in pairs {
        for (s, d) in sums.iter_mut().zip(layer_differences(fe, y, y_hat, None)?) {
            *s += d;
        }
    }
    let n = pairs.len() as f64;
    let lambda = sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mean = s / n;
            if mean > 0.0 {
                Ok(1.0 / mean)
            } else {
                Err(invalid(format!(
                    "layer {i} has zero mean difference on the calibration set"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LayerWeights::new(lambda)
}

/// Squared Euclidean distance.
pub fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_shape(b, "l2 distance")?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Feature L1 distance bundled with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceptual {
    pub extractor: FeatureExtractor,
    pub lambda: LayerWeights,
}

impl Perceptual {
    pub fn new(extractor: FeatureExtractor, lambda: LayerWeights) -> Result<Self> {
        if lambda.values().len() != extractor.num_layers() {
            return Err(shape("layer weight count does not match extractor"));
        }
        Ok(Self { extractor, lambda })
    }

    /// Extractor with `λ_i = 1 / |Φ_i|`, i.e. a sum of per-layer mean
    /// absolute feature differences. Used as a held-out evaluation metric.
    pub fn mean_abs(extractor: FeatureExtractor) -> Self {
        let lambda = (0..extractor.num_layers())
            .map(|i| {
                let (h, w, c) = extractor.layer_shape(i);
                1.0 / (h * w * c) as f64
            })
            .collect();
        Self {
            extractor,
            lambda: LayerWeights(lambda),
        }
    }

    pub fn distance(&self, y: &ImageTensor, y_hat: &ImageTensor) -> Result<f64> {
        perceptual_distance(&self.extractor, &self.lambda, y, y_hat, None)
    }
}

/// The distance `L(·,·)` used by matching and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    L2,
    Perceptual(Perceptual),
}

/// A ground-truth image with its features precomputed.
#[derive(Debug, Clone)]
pub struct Target {
    image: ImageTensor,
    features: Option<Vec<Tensor>>,
    mask: Option<MaskPyramid>,
}

impl Target {
    pub fn image(&self) -> &ImageTensor {
        &self.image
    }
}

impl Metric {
    /// Prepares a target. `mask` is applied by the perceptual distance only.
    pub fn target(&self, y: &ImageTensor, mask: Option<&Tensor>) -> Result<Target> {
        y.ensure_finite("distance target")?;
        match self {
            Metric::L2 => Ok(Target {
                image: y.clone(),
                features: None,
                mask: None,
            }),
            Metric::Perceptual(p) => Ok(Target {
                image: y.clone(),
                features: Some(p.extractor.extract(y)?),
                mask: mask.map(|m| p.extractor.mask_pyramid(m)).transpose()?,
            }),
        }
    }

    pub fn distance(&self, target: &Target, y_hat: &ImageTensor) -> Result<f64> {
        y_hat.ensure_finite("generated image")?;
        match self {
            Metric::L2 => l2_distance(&target.image, y_hat),
            Metric::Perceptual(p) => {
                let fy = target.features.as_ref().expect("perceptual target has features");
                let fh = p.extractor.extract(y_hat)?;
                Ok(fy
                    .iter()
                    .zip(&fh)
                    .zip(p.lambda.values())
                    .enumerate()
                    .map(|(i, ((a, b), l))| l * masked_l1(a, b, target.mask.as_ref().map(|m| m.level(i))))
                    .sum())
            }
        }
    }

    /// Distance and its gradient with respect to `y_hat`. The L1 subgradient
    /// is taken as 0 where features tie.
    pub fn distance_and_grad(&self, target: &Target, y_hat: &ImageTensor) -> Result<(f64, ImageTensor)> {
        y_hat.ensure_finite("generated image")?;
        match self {
            Metric::L2 => {
                target.image.check_shape(y_hat, "l2 distance")?;
                let mut g = y_hat.clone();
                let mut value = 0.0;
                for (gv, &t) in g.data_mut().iter_mut().zip(target.image.data()) {
                    let d = *gv - t;
                    value += d * d;
                    *gv = 2.0 * d;
                }
                Ok((value, g))
            }
            Metric::Perceptual(p) => {
                let fe = &p.extractor;
                fe.check_input(y_hat)?;
                let fy = target.features.as_ref().expect("perceptual target has features");
                let trace = fe.trace(y_hat);
                let mut value = 0.0;
                let mut grads = Vec::with_capacity(fy.len());
                for (i, (a, lvl)) in fy.iter().zip(&trace.levels).enumerate() {
                    let b = lvl.output();
                    let lam = p.lambda.values()[i];
                    let c = b.channels();
                    let mask = target.mask.as_ref().map(|m| m.level(i));
                    let mut g = Tensor::zeros(b.height(), b.width(), c);
                    for (px, ((pa, pb), pg)) in a
                        .data()
                        .chunks_exact(c)
                        .zip(b.data().chunks_exact(c))
                        .zip(g.data_mut().chunks_exact_mut(c))
                        .enumerate()
                    {
                        let w = lam * mask.map_or(1.0, |m| m.data()[px]);
                        for ((&ya, &yb), gv) in pa.iter().zip(pb).zip(pg.iter_mut()) {
                            let d = yb - ya;
                            value += w * d.abs();
                            *gv = if d > 0.0 {
                                w
                            } else if d < 0.0 {
                                -w
                            } else {
                                0.0
                            };
                        }
                    }
                    grads.push(g);
                }
                Ok((value, fe.backward(&trace, &grads)))
            }
        }
    }
}

impl From<Perceptual> for Metric {
    fn from(p: Perceptual) -> Self {
        Metric::Perceptual(p)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::L2 => f.write_str("l2"),
            Metric::Perceptual(_) => f.write_str("perceptual"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn image(rng: &mut Rng, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.uniform()).collect()).unwrap()
    }

    fn small_fe(seed: u64) -> FeatureExtractor {
        FeatureExtractor::new(seed, 8, 8, 3, &[4, 5, 6]).unwrap()
    }

    #[test]
    fn extractor_shapes_and_determinism() {
        let fe = FeatureExtractor::standard(7, 16, 32).unwrap();
        let y = image(&mut Rng::new(1), 16, 32);
        let f = fe.extract(&y).unwrap();
        let expected = [(16, 32, 8), (8, 16, 12), (4, 8, 16), (2, 4, 16), (1, 2, 16)];
        for (i, (t, e)) in f.iter().zip(expected).enumerate() {
            assert_eq!(t.dims(), e);
            assert_eq!(fe.layer_shape(i), e);
        }
        assert_eq!(f, FeatureExtractor::standard(7, 16, 32).unwrap().extract(&y).unwrap());
        assert!(FeatureExtractor::standard(7, 12, 32).is_err());
    }

    #[test]
    fn one_pixel_change_changes_features() {
        let fe = small_fe(3);
        let mut rng = Rng::new(2);
        let y = image(&mut rng, 8, 8);
        let mut y2 = y.clone();
        y2.set(5, 2, 1, y.get(5, 2, 1) + 0.01);
        assert_ne!(fe.extract(&y).unwrap(), fe.extract(&y2).unwrap());
    }

    #[test]
    fn identity_and_all_ones_mask() {
        let fe = small_fe(4);
        let mut rng = Rng::new(3);
        let lam = LayerWeights::new(vec![1.0, 2.0, 0.5]).unwrap();
        let y = image(&mut rng, 8, 8);
        let y2 = image(&mut rng, 8, 8);
        assert_eq!(perceptual_distance(&fe, &lam, &y, &y, None).unwrap(), 0.0);
        let ones = fe.mask_pyramid(&Tensor::filled(8, 8, 1, 1.0)).unwrap();
        assert_eq!(
            perceptual_distance(&fe, &lam, &y, &y2, Some(&ones)).unwrap(),
            perceptual_distance(&fe, &lam, &y, &y2, None).unwrap()
        );
    }

    // Straight-line re-implementation: explicit per-layer feature loops.
    #[test]
    fn matches_scalar_oracle() {
        let fe = small_fe(5);
        let mut rng = Rng::new(4);
        let lam = LayerWeights::new(vec![0.3, 1.7, 2.2]).unwrap();
        let y = image(&mut rng, 8, 8);
        let y2 = image(&mut rng, 8, 8);
        let fa = fe.extract(&y).unwrap();
        let fb = fe.extract(&y2).unwrap();
        let mut oracle = 0.0;
        for i in 0..3 {
            let mut layer = 0.0;
            let (h, w, c) = fe.layer_shape(i);
            for r in 0..h {
                for col in 0..w {
                    for ch in 0..c {
                        layer += (fa[i].get(r, col, ch) - fb[i].get(r, col, ch)).abs();
                    }
                }
            }
            oracle += lam.values()[i] * layer;
        }
        let got = perceptual_distance(&fe, &lam, &y, &y2, None).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn calibration_rule() {
        let fe = small_fe(6);
        let mut rng = Rng::new(5);
        let pairs: Vec<_> = (0..4).map(|_| (image(&mut rng, 8, 8), image(&mut rng, 8, 8))).collect();
        let lam = calibrate_lambda(&fe, &pairs).unwrap();
        let mut contrib = vec![0.0; 3];
        for (a, b) in &pairs {
            for (c, (d, l)) in contrib
                .iter_mut()
                .zip(layer_differences(&fe, a, b, None).unwrap().iter().zip(lam.values()))
            {
                *c += l * d / 4.0;
            }
        }
        for c in &contrib {
            assert!((c - contrib[0]).abs() / contrib[0] < 1e-10);
        }
        let same = image(&mut rng, 8, 8);
        assert!(calibrate_lambda(&fe, &[(same.clone(), same)]).is_err());
        assert!(calibrate_lambda(&fe, &[]).is_err());
    }

    #[test]
    fn calibration_arithmetic() {
        // With single-layer differences 2.0 and 4.0 the rule gives (0.5, 0.25).
        let sums = [2.0f64, 4.0];
        let lam: Vec<f64> = sums.iter().map(|s| 1.0 / s).collect();
        assert_eq!(lam, vec![0.5, 0.25]);
    }

    #[test]
    fn l2_examples() {
        let a = Tensor::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(l2_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        assert!(l2_distance(&a, &Tensor::zeros(1, 2, 1)).is_err());
        let mut rng = Rng::new(6);
        let x = image(&mut rng, 3, 4);
        let y = image(&mut rng, 3, 4);
        let mut oracle = 0.0;
        for i in 0..x.data().len() {
            let d = x.data()[i] - y.data()[i];
            oracle += d * d;
        }
        assert!((l2_distance(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let fe = small_fe(7);
        let mut y = Tensor::filled(8, 8, 3, 0.5);
        y.set(0, 0, 0, f64::NAN);
        let lam = LayerWeights::ones(3);
        assert!(matches!(
            perceptual_distance(&fe, &lam, &y, &y, None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let fe = small_fe(8);
        let mut rng = Rng::new(9);
        let p = Perceptual::new(fe.clone(), LayerWeights::new(vec![1.0, 0.7, 1.3]).unwrap()).unwrap();
        let metric = Metric::Perceptual(p);
        let y = image(&mut rng, 8, 8);
        let y_hat = image(&mut rng, 8, 8);
        let mask = Tensor::from_vec(8, 8, 1, (0..64).map(|_| 0.1 + 0.9 * rng.uniform()).collect()).unwrap();
        for m in [None, Some(&mask)] {
            let t = metric.target(&y, m).unwrap();
            let (v, g) = metric.distance_and_grad(&t, &y_hat).unwrap();
            assert!((v - metric.distance(&t, &y_hat).unwrap()).abs() < 1e-12);
            let h = 1e-6;
            for i in 0..y_hat.data().len() {
                let mut a = y_hat.clone();
                let mut b = y_hat.clone();
                a.data_mut()[i] += h;
                b.data_mut()[i] -= h;
                let fd = (metric.distance(&t, &a).unwrap() - metric.distance(&t, &b).unwrap()) / (2.0 * h);
                let an = g.data()[i];
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-4,
                    "{i}: {fd} vs {an}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn metric_axioms_and_mask_monotonicity(seed in any::<u64>()) {
            let fe = small_fe(11);
            let mut rng = Rng::new(seed);
            let lam = LayerWeights::new(vec![0.5, 1.0, 2.0]).unwrap();
            let a = image(&mut rng, 8, 8);
            let b = image(&mut rng, 8, 8);
            let d_ab = perceptual_distance(&fe, &lam, &a, &b, None).unwrap();
            let d_ba = perceptual_distance(&fe, &lam, &b, &a, None).unwrap();
            prop_assert!(d_ab >= 0.0);
            prop_assert!((d_ab - d_ba).abs() <= 1e-12 * d_ab.max(1.0));
            prop_assert_eq!(perceptual_distance(&fe, &lam, &a, &a, None).unwrap(), 0.0);
            let l_ab = l2_distance(&a, &b).unwrap();
            prop_assert!(l_ab >= 0.0);
            prop_assert_eq!(l_ab, l2_distance(&b, &a).unwrap());
            prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
            let mask = Tensor::from_vec(8, 8, 1, (0..64).map(|_| 1.0 - rng.uniform()).collect()).unwrap();
            let pyr = fe.mask_pyramid(&mask).unwrap();
            prop_assert!(perceptual_distance(&fe, &lam, &a, &b, Some(&pyr)).unwrap() <= d_ab);
        }
    }
}
