//! The implicit model `T_θ(x, z)`.
//!
//! Layout channels and noise channels are concatenated and pushed through a
//! stack of same-padded convolutions with leaky-rectifier activations and an
//! affine output layer. An optional coarse branch processes the input at half
//! resolution and feeds its upsampled features back into the full-resolution
//! stack. When the noise encoder is enabled, the noise channels are produced
//! by a 3-layer convolutional net from the layout and a low-dimensional seed
//! broadcast to every pixel.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use crate::error::{invalid, shape, Error, Result};
use crate::nn::{self, Activation, Conv, ConvStack, StackTrace, LEAKY_SLOPE};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Latent, NoiseField, NoiseLayout, NoiseSeed, SemanticLayout, Tensor};

/// Architecture hyperparameters. Fully determines the parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub input_classes: usize,
    /// Number of noise channels `C_z` concatenated to the layout.
    pub noise_channels: usize,
    /// Dimension of the encoder seed `z̃`.
    pub seed_dim: usize,
    pub encoder_widths: [usize; 2],
    pub hidden_widths: Vec<usize>,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    /// 1 or 3.
    pub kernel_size: usize,
    pub noise_encoder: bool,
    /// Layout of raw noise when the encoder is disabled.
    pub noise_layout: NoiseLayout,
    /// Width of the half-resolution refinement branch, if any.
    pub coarse_width: Option<usize>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_classes: 4,
            noise_channels: 10,
            seed_dim: 4,
            encoder_widths: [8, 8],
            hidden_widths: vec![16, 16],
            out_channels: 3,
            height: 16,
            width: 32,
            kernel_size: 3,
            noise_encoder: true,
            noise_layout: NoiseLayout::PerPixel,
            coarse_width: None,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_classes", self.input_classes),
            ("noise_channels", self.noise_channels),
            ("seed_dim", self.seed_dim),
            ("encoder_widths[0]", self.encoder_widths[0]),
            ("encoder_widths[1]", self.encoder_widths[1]),
            ("out_channels", self.out_channels),
            ("height", self.height),
            ("width", self.width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(format!("{name} must be >= 1")));
            }
        }
        if let Some(i) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(invalid(format!("hidden_widths entry {i} must be >= 1")));
        }
        if self.input_classes > 256 {
            return Err(invalid("input_classes must be <= 256"));
        }
        if self.kernel_size != 1 && self.kernel_size != 3 {
            return Err(invalid(format!("kernel_size must be 1 or 3, got {}", self.kernel_size)));
        }
        if let Some(cw) = self.coarse_width {
            if cw == 0 {
                return Err(invalid("coarse_width must be >= 1"));
            }
            if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
                return Err(invalid("coarse_width needs even height and width"));
            }
        }
        Ok(())
    }

    fn lrelu() -> Activation {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    fn encoder(&self) -> ConvStack {
        let k = self.kernel_size;
        let [e1, e2] = self.encoder_widths;
        ConvStack {
            layers: vec![
                Conv::new(self.input_classes + self.seed_dim, e1, k),
                Conv::new(e1, e2, k),
                Conv::new(e2, self.noise_channels, k),
            ],
            hidden: Self::lrelu(),
            last: Activation::Identity,
        }
    }

    fn coarse(&self) -> Option<ConvStack> {
        self.coarse_width.map(|cw| ConvStack {
            layers: vec![Conv::new(
                self.input_classes + self.noise_channels,
                cw,
                self.kernel_size,
            )],
            hidden: Self::lrelu(),
            last: Self::lrelu(),
        })
    }

    fn main(&self) -> ConvStack {
        let mut cin = self.input_classes + self.noise_channels + self.coarse_width.unwrap_or(0);
        let mut layers = Vec::with_capacity(self.hidden_widths.len() + 1);
        for &w in &self.hidden_widths {
            layers.push(Conv::new(cin, w, self.kernel_size));
            cin = w;
        }
        layers.push(Conv::new(cin, self.out_channels, self.kernel_size));
        ConvStack {
            layers,
            hidden: Self::lrelu(),
            last: Activation::Identity,
        }
    }

    /// Length of `theta`: coarse branch (if any) then the main stack.
    pub fn main_param_count(&self) -> usize {
        self.coarse().map_or(0, |c| c.param_count()) + self.main().param_count()
    }

    /// Length of `theta_e`; zero when the encoder is disabled.
    pub fn encoder_param_count(&self) -> usize {
        if self.noise_encoder {
            self.encoder().param_count()
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.main_param_count() + self.encoder_param_count()
    }

    /// Draws the latent input for one sample.
    pub fn sample_latent(&self, rng: &mut Rng) -> Latent {
        if self.noise_encoder {
            Latent::Seed(NoiseSeed::new(rng.normals(self.seed_dim)).expect("seed_dim >= 1"))
        } else {
            Latent::Field(
                crate::tensor::sample_noise_field(rng, self.height, self.width, self.noise_channels, self.noise_layout)
                    .expect("validated dims"),
            )
        }
    }
}

/// Parameters `θ` of the main net and `θ_e` of the noise encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    spec: GeneratorSpec,
    theta: Vec<f64>,
    theta_e: Vec<f64>,
}

/// Reverse-mode gradient of a scalar through the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub theta_e: Vec<f64>,
    /// Gradient w.r.t. `z̃` when the latent was a seed.
    pub seed: Option<Vec<f64>>,
    /// Gradient w.r.t. the noise field fed to the main net (`z` or `z′`).
    pub field: NoiseField,
}

impl Gradient {
    pub fn zeros_like(state: &GeneratorState) -> Self {
        Self {
            theta: vec![0.0; state.theta.len()],
            theta_e: vec![0.0; state.theta_e.len()],
            seed: None,
            field: Tensor::zeros(state.spec.height, state.spec.width, state.spec.noise_channels),
        }
    }

    /// `self += scale * other` over the parameter parts.
    pub fn add_scaled(&mut self, scale: f64, other: &Gradient) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += scale * b;
        }
        for (a, b) in self.theta_e.iter_mut().zip(&other.theta_e) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.theta_e).all(|v| v.is_finite())
    }
}

struct EncoderTrace {
    seed: NoiseSeed,
    trace: StackTrace,
}

/// Intermediate values of one forward pass, consumed by
/// [`GeneratorState::backward_trace`].
pub struct ForwardTrace {
    encoder: Option<EncoderTrace>,
    coarse: Option<StackTrace>,
    main: StackTrace,
    field_channels: usize,
}

impl ForwardTrace {
    pub fn output(&self) -> &ImageTensor {
        self.main.output()
    }

    pub fn into_output(self) -> ImageTensor {
        self.main.into_output()
    }
}

impl GeneratorState {
    /// Fan-in scaled normal weights and zero biases, deterministic in `rng`.
    pub fn init(spec: GeneratorSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut theta = vec![0.0; spec.main_param_count()];
        let mut theta_e = vec![0.0; spec.encoder_param_count()];
        let mut offset = 0;
        if let Some(coarse) = spec.coarse() {
            let n = coarse.param_count();
            coarse.init(rng, &mut theta[..n]);
            offset = n;
        }
        spec.main().init(rng, &mut theta[offset..]);
        if spec.noise_encoder {
            spec.encoder().init(rng, &mut theta_e);
        }
        Ok(Self { spec, theta, theta_e })
    }

    pub fn from_parts(spec: GeneratorSpec, theta: Vec<f64>, theta_e: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.main_param_count() || theta_e.len() != spec.encoder_param_count() {
            return Err(shape(format!(
                "parameter lengths ({}, {}) do not match spec ({}, {})",
                theta.len(),
                theta_e.len(),
                spec.main_param_count(),
                spec.encoder_param_count()
            )));
        }
        if theta.iter().chain(&theta_e).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator parameters".into()));
        }
        Ok(Self { spec, theta, theta_e })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_e(&self) -> &[f64] {
        &self.theta_e
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn theta_e_mut(&mut self) -> &mut [f64] {
        &mut self.theta_e
    }

    fn check_layout(&self, x: &SemanticLayout) -> Result<()> {
        if (x.height(), x.width(), x.num_classes()) != (self.spec.height, self.spec.width, self.spec.input_classes) {
            return Err(shape(format!(
                "layout {}x{}x{} does not match generator {}x{}x{}",
                x.height(),
                x.width(),
                x.num_classes(),
                self.spec.height,
                self.spec.width,
                self.spec.input_classes
            )));
        }
        Ok(())
    }

    fn encoder_input(&self, x: &SemanticLayout, seed: &NoiseSeed) -> Result<Tensor> {
        if !self.spec.noise_encoder {
            return Err(invalid("generator has no noise encoder"));
        }
        self.check_layout(x)?;
        if seed.dim() != self.spec.seed_dim {
            return Err(shape(format!(
                "seed dim {} but generator expects {}",
                seed.dim(),
                self.spec.seed_dim
            )));
        }
        x.one_hot()
            .concat_channels(&nn::broadcast(seed.values(), self.spec.height, self.spec.width))
    }

    /// Maps `(x, z̃)` to a full-size noise field `z′`.
    pub fn noise_encode(&self, x: &SemanticLayout, seed: &NoiseSeed) -> Result<NoiseField> {
        let input = self.encoder_input(x, seed)?;
        Ok(self.spec.encoder().forward(&self.theta_e, &input))
    }

    /// Gradients of `⟨upstream, z′⟩` w.r.t. `θ_e` and `z̃`.
    pub fn noise_encode_backward(
        &self,
        x: &SemanticLayout,
        seed: &NoiseSeed,
        upstream: &NoiseField,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = self.encoder_input(x, seed)?;
        let enc = self.spec.encoder();
        let trace = enc.trace(&self.theta_e, &input);
        upstream.check_shape(trace.output(), "encoder upstream gradient")?;
        let mut g = vec![0.0; self.theta_e.len()];
        let gin = enc.backward(&self.theta_e, &trace, upstream, &mut g);
        let (_, g_seed) = gin.split_channels(self.spec.input_classes);
        Ok((g, nn::broadcast_backward(&g_seed)))
    }

    /// `T_θ(x, z)` for an explicit noise field.
    pub fn forward(&self, x: &SemanticLayout, z: &NoiseField) -> Result<ImageTensor> {
        Ok(self.trace_field(x, z, None)?.into_output())
    }

    /// Generates from a latent, running the encoder when the latent is a seed.
    pub fn generate(&self, x: &SemanticLayout, latent: &Latent) -> Result<ImageTensor> {
        Ok(self.trace(x, latent)?.into_output())
    }

    pub fn trace(&self, x: &SemanticLayout, latent: &Latent) -> Result<ForwardTrace> {
        match latent {
            Latent::Field(z) => {
                if self.spec.noise_encoder {
                    return Err(invalid("generator expects a noise seed, got a noise field"));
                }
                self.trace_field(x, z, None)
            }
            Latent::Seed(seed) => {
                let input = self.encoder_input(x, seed)?;
                let trace = self.spec.encoder().trace(&self.theta_e, &input);
                let z = trace.output().clone();
                self.trace_field(
                    x,
                    &z,
                    Some(EncoderTrace {
                        seed: seed.clone(),
                        trace,
                    }),
                )
            }
        }
    }

    fn trace_field(&self, x: &SemanticLayout, z: &NoiseField, encoder: Option<EncoderTrace>) -> Result<ForwardTrace> {
        self.check_layout(x)?;
        if (z.height(), z.width(), z.channels()) != (self.spec.height, self.spec.width, self.spec.noise_channels) {
            return Err(shape(format!(
                "noise field {:?} does not match generator ({}, {}, {})",
                z.dims(),
                self.spec.height,
                self.spec.width,
                self.spec.noise_channels
            )));
        }
        let base = x.one_hot().concat_channels(z)?;
        let (coarse, main_input, offset) = match self.spec.coarse() {
            Some(stack) => {
                let n = stack.param_count();
                let t = stack.trace(&self.theta[..n], &nn::avg_pool2(&base));
                let up = nn::upsample2(t.output());
                let input = base.concat_channels(&up)?;
                (Some(t), input, n)
            }
            None => (None, base, 0),
        };
        let main = self.spec.main().trace(&self.theta[offset..], &main_input);
        main.output().ensure_finite("generator output")?;
        Ok(ForwardTrace {
            encoder,
            coarse,
            main,
            field_channels: self.spec.noise_channels,
        })
    }

    /// Exact gradient of `⟨upstream, T_θ(x, z)⟩` from a stored trace.
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &ImageTensor) -> Result<Gradient> {
        upstream.check_shape(trace.output(), "upstream gradient")?;
        let mut grad = Gradient::zeros_like(self);
        let classes = self.spec.input_classes;
        let offset = self.spec.coarse().map_or(0, |c| c.param_count());
        let main = self.spec.main();
        let g_main_in = main.backward(&self.theta[offset..], &trace.main, upstream, &mut grad.theta[offset..]);
        let g_base = match (&trace.coarse, self.spec.coarse()) {
            (Some(t), Some(stack)) => {
                let (mut g_base, g_up) = g_main_in.split_channels(classes + trace.field_channels);
                let g_coarse_out = nn::upsample2_backward(&g_up);
                let g_pooled = stack.backward(&self.theta[..offset], t, &g_coarse_out, &mut grad.theta[..offset]);
                g_base.axpy(1.0, &nn::avg_pool2_backward(&g_pooled));
                g_base
            }
            _ => g_main_in,
        };
        let (_, g_field) = g_base.split_channels(classes);
        if let Some(enc) = &trace.encoder {
            let stack = self.spec.encoder();
            let g_in = stack.backward(&self.theta_e, &enc.trace, &g_field, &mut grad.theta_e);
            let (_, g_seed) = g_in.split_channels(classes);
            let g_seed = nn::broadcast_backward(&g_seed);
            debug_assert_eq!(g_seed.len(), enc.seed.dim());
            grad.seed = Some(g_seed);
        }
        grad.field = g_field;
        Ok(grad)
    }

    /// Gradient of `⟨upstream, T_θ(x, latent)⟩` over `θ`, `θ_e` and the latent.
    pub fn backward(&self, x: &SemanticLayout, latent: &Latent, upstream: &ImageTensor) -> Result<Gradient> {
        let trace = self.trace(x, latent)?;
        self.backward_trace(&trace, upstream)
    }

    /// Plain gradient-descent step `θ ← θ − η∇θ` on both parameter vectors.
    /// Leaves the state untouched on error.
    pub fn apply_update(&mut self, gradient: &Gradient, learning_rate: f64) -> Result<()> {
        if gradient.theta.len() != self.theta.len() || gradient.theta_e.len() != self.theta_e.len() {
            return Err(shape("gradient length does not match parameters"));
        }
        if !gradient.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if !learning_rate.is_finite() {
            return Err(Error::NonFinite("learning rate".into()));
        }
        for (p, g) in self.theta.iter_mut().zip(&gradient.theta) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.theta_e.iter_mut().zip(&gradient.theta_e) {
            *p -= learning_rate * g;
        }
        Ok(())
    }
}
