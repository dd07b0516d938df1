//! Value types shared by every module: dense HWC tensors, one-hot semantic
//! layouts and latent noise.

use crate::error::{invalid, shape, Error, Result};
use crate::rng::Rng;

/// Dense row-major `height × width × channels` tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// An RGB (or generally `channels`-valued) image. Dataset images lie in
/// `[0, 1]`; generated images are only required to be finite.
pub type ImageTensor = Tensor;

/// Full-resolution noise that is concatenated to the layout channels.
pub type NoiseField = Tensor;

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Channel vector of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Channel-wise concatenation `[self | other]`.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * channels);
        for (a, b) in self
            .data
            .chunks_exact(self.channels.max(1))
            .zip(other.data.chunks_exact(other.channels.max(1)))
        {
            data.extend_from_slice(&a[..self.channels]);
            data.extend_from_slice(&b[..other.channels]);
        }
        Tensor::from_vec(self.height, self.width, channels, data)
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): first `left` channels, rest.
    pub fn split_channels(&self, left: usize) -> (Tensor, Tensor) {
        let right = self.channels - left;
        let mut a = Vec::with_capacity(self.height * self.width * left);
        let mut b = Vec::with_capacity(self.height * self.width * right);
        for px in self.data.chunks_exact(self.channels) {
            a.extend_from_slice(&px[..left]);
            b.extend_from_slice(&px[left..]);
        }
        (
            Tensor {
                height: self.height,
                width: self.width,
                channels: left,
                data: a,
            },
            Tensor {
                height: self.height,
                width: self.width,
                channels: right,
                data: b,
            },
        )
    }

    /// `self + scale * other`, elementwise.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with every entry clamped to `[0, 1]`.
    pub fn clamped_unit(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// One-hot encoded semantic layout: exactly one active class per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLayout {
    labels: Vec<u8>,
    one_hot: Tensor,
}

impl SemanticLayout {
    /// Builds the one-hot encoding of a row-major label map.
    pub fn from_labels(height: usize, width: usize, labels: &[usize], num_classes: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("layout must be at least 1x1"));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(invalid(format!("num_classes must be in 1..=256, got {num_classes}")));
        }
        if labels.len() != height * width {
            return Err(shape(format!("{} labels for a {height}x{width} layout", labels.len())));
        }
        let mut one_hot = Tensor::zeros(height, width, num_classes);
        let mut ids = Vec::with_capacity(labels.len());
        for (n, &id) in labels.iter().enumerate() {
            if id >= num_classes {
                return Err(Error::ClassOutOfRange {
                    row: n / width,
                    col: n % width,
                    id,
                    num_classes,
                });
            }
            one_hot.data[n * num_classes + id] = 1.0;
            ids.push(id as u8);
        }
        Ok(Self { labels: ids, one_hot })
    }

    pub fn height(&self) -> usize {
        self.one_hot.height
    }

    pub fn width(&self) -> usize {
        self.one_hot.width
    }

    pub fn num_classes(&self) -> usize {
        self.one_hot.channels
    }

    /// Class id at `(row, col)`.
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width() + col] as usize
    }

    /// Class ids as stored, one byte per pixel in row-major order.
    pub fn raw_labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    /// The `H×W×P` one-hot tensor.
    pub fn one_hot(&self) -> &Tensor {
        &self.one_hot
    }

    /// Recovers the label map by per-pixel argmax over the one-hot vector.
    pub fn argmax_decode(&self) -> Vec<usize> {
        self.one_hot
            .data
            .chunks_exact(self.num_classes())
            .map(|px| {
                px.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (p, &v)| if v > best.1 { (p, v) } else { best },
                    )
                    .0
            })
            .collect()
    }

    /// Pixel count per class.
    pub fn class_areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.num_classes()];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    pub fn contains(&self, class: usize) -> bool {
        self.labels.iter().any(|&l| l as usize == class)
    }
}

/// One-hot encodes a label map given as rows.
pub fn one_hot_encode(label_map: &[Vec<usize>], num_classes: usize) -> Result<SemanticLayout> {
    let height = label_map.len();
    let width = label_map.first().map_or(0, Vec::len);
    if label_map.iter().any(|row| row.len() != width) {
        return Err(shape("ragged label map"));
    }
    let flat: Vec<usize> = label_map.iter().flatten().copied().collect();
    SemanticLayout::from_labels(height, width, &flat, num_classes)
}

/// Low-dimensional latent vector fed to the noise encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSeed(Vec<f64>);

impl NoiseSeed {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("noise seed must have dim >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("noise seed".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &NoiseSeed, alpha: f64) -> Result<NoiseSeed> {
        if self.dim() != other.dim() {
            return Err(shape(format!("seed dims {} vs {}", self.dim(), other.dim())));
        }
        Ok(NoiseSeed(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                .collect(),
        ))
    }
}

/// Draws `z̃ ~ N(0, I)` of dimension `dim`.
pub fn sample_noise_seed(rng: &mut Rng, dim: usize) -> Result<NoiseSeed> {
    if dim == 0 {
        return Err(invalid("noise seed must have dim >= 1"));
    }
    Ok(NoiseSeed(rng.normals(dim)))
}

/// How a raw (un-encoded) noise field is laid out spatially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseLayout {
    /// Independent draw at every pixel and channel.
    #[default]
    PerPixel,
    /// One draw per channel, repeated at every pixel.
    Broadcast,
}

/// Draws a raw noise field `z ~ N(0, I)`.
pub fn sample_noise_field(
    rng: &mut Rng,
    height: usize,
    width: usize,
    channels: usize,
    layout: NoiseLayout,
) -> Result<NoiseField> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(invalid("noise field dimensions must be >= 1"));
    }
    match layout {
        NoiseLayout::PerPixel => Tensor::from_vec(height, width, channels, rng.normals(height * width * channels)),
        NoiseLayout::Broadcast => {
            let per_channel = rng.normals(channels);
            let data = (0..height * width).flat_map(|_| per_channel.iter().copied()).collect();
            Tensor::from_vec(height, width, channels, data)
        }
    }
}

/// The generator's latent input: either a seed for the noise encoder or a
/// raw noise field when the encoder is disabled.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Seed(NoiseSeed),
    Field(NoiseField),
}

impl Latent {
    pub fn lerp(&self, other: &Latent, alpha: f64) -> Result<Latent> {
        match (self, other) {
            (Latent::Seed(a), Latent::Seed(b)) => Ok(Latent::Seed(a.lerp(b, alpha)?)),
            (Latent::Field(a), Latent::Field(b)) => {
                a.check_shape(b, "latent interpolation")?;
                Ok(Latent::Field(Tensor {
                    height: a.height,
                    width: a.width,
                    channels: a.channels,
                    data: a
                        .data
                        .iter()
                        .zip(&b.data)
                        .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                        .collect(),
                }))
            }
            _ => Err(shape("cannot interpolate a seed with a noise field")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn one_hot_single_pixel() {
        let x = one_hot_encode(&[vec![2]], 3).unwrap();
        assert_eq!(x.one_hot().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_two_pixels() {
        let x = one_hot_encode(&[vec![0, 1]], 2).unwrap();
        assert_eq!(x.one_hot().pixel(0, 0), &[1.0, 0.0]);
        assert_eq!(x.one_hot().pixel(0, 1), &[0.0, 1.0]);
    }

    #[test]
    fn one_hot_rejects_bad_id_with_coordinate() {
        let err = one_hot_encode(&[vec![0, 1], vec![5, 2]], 4).unwrap_err();
        match err {
            Error::ClassOutOfRange { row, col, id, .. } => assert_eq!((row, col, id), (1, 0, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seed_dim_zero_is_rejected() {
        assert!(sample_noise_seed(&mut Rng::new(1), 0).is_err());
        assert!(sample_noise_field(&mut Rng::new(1), 2, 2, 0, NoiseLayout::PerPixel).is_err());
    }

    #[test]
    fn noise_is_replayable() {
        let mut rng = Rng::new(17);
        let a = sample_noise_seed(&mut rng, 4).unwrap();
        let b = sample_noise_seed(&mut rng, 4).unwrap();
        assert_ne!(a, b);
        let again = sample_noise_seed(&mut Rng::new(17), 4).unwrap();
        assert_eq!(a, again);
    }

    // Standard error of the mean is 1/sqrt(1e5) ~ 0.0032 and of the variance
    // sqrt(2/1e5) ~ 0.0045, so 0.02 sits beyond 4 sigma for both.
    #[test]
    fn noise_moments() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_noise_seed(&mut rng, 1).unwrap().values()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn broadcast_field_is_constant_per_channel() {
        let z = sample_noise_field(&mut Rng::new(4), 3, 5, 2, NoiseLayout::Broadcast).unwrap();
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(z.pixel(r, c), z.pixel(0, 0));
            }
        }
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::from_vec(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(1, 2, 1, vec![5., 6.]).unwrap();
        let ab = a.concat_channels(&b).unwrap();
        assert_eq!(ab.data(), &[1., 2., 5., 3., 4., 6.]);
        let (a2, b2) = ab.split_channels(2);
        assert_eq!((a2, b2), (a, b));
    }

    proptest! {
        #[test]
        fn argmax_decode_inverts_one_hot(
            (h, w, p, labels) in (1usize..6, 1usize..6, 1usize..9).prop_flat_map(|(h, w, p)| {
                (Just(h), Just(w), Just(p), proptest::collection::vec(0..p, h * w))
            })
        ) {
            let x = SemanticLayout::from_labels(h, w, &labels, p).unwrap();
            prop_assert_eq!(x.argmax_decode(), labels);
            for px in x.one_hot().data().chunks(p) {
                prop_assert_eq!(px.iter().filter(|&&v| v == 1.0).count(), 1);
                prop_assert_eq!(px.iter().filter(|&&v| v == 0.0).count(), p - 1);
            }
        }
    }
}
