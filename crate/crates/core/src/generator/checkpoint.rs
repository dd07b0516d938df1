//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CIMLckpt"  u32 version
//! spec:       u32 input_classes, noise_channels, seed_dim, encoder_w1, encoder_w2,
//!             out_channels, height, width, kernel_size, noise_encoder (0/1),
//!             noise_layout (0 per-pixel, 1 broadcast), coarse_width (0 = none),
//!             n_hidden, n_hidden × u32 widths
//! metric:     u64 extractor_seed, u32 n_lambda, n_lambda × f64
//! payload:    u64 len(theta), f64..., u64 len(theta_e), f64...
//! trailer:    u32 CRC-32 of every preceding byte
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, GeneratorState};
use crate::tensor::NoiseLayout;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CIMLckpt";
const VERSION: u32 = 1;

/// A generator state together with the distance settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: GeneratorState,
    pub extractor_seed: u64,
    /// Empty when training used the squared-L2 distance.
    pub lambda: Vec<f64>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_reals(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let spec = ckpt.state.spec();
    let mut buf = Vec::with_capacity(64 + 8 * spec.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        spec.input_classes,
        spec.noise_channels,
        spec.seed_dim,
        spec.encoder_widths[0],
        spec.encoder_widths[1],
        spec.out_channels,
        spec.height,
        spec.width,
        spec.kernel_size,
        spec.noise_encoder as usize,
        match spec.noise_layout {
            NoiseLayout::PerPixel => 0,
            NoiseLayout::Broadcast => 1,
        },
        spec.coarse_width.unwrap_or(0),
        spec.hidden_widths.len(),
    ] {
        put_u32(&mut buf, v)?;
    }
    for &w in &spec.hidden_widths {
        put_u32(&mut buf, w)?;
    }
    buf.extend_from_slice(&ckpt.extractor_seed.to_le_bytes());
    put_u32(&mut buf, ckpt.lambda.len())?;
    for v in &ckpt.lambda {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_reals(&mut buf, ckpt.state.theta());
    put_reals(&mut buf, ckpt.state.theta_e());
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Corrupt("checkpoint truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() / 8 {
            return Err(Error::Corrupt("checkpoint payload length exceeds file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corrupt("checkpoint CRC mismatch".into()));
    }
    let mut cur = Cursor { bytes: &body[8..] };
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let mut f = [0usize; 13];
    for v in f.iter_mut() {
        *v = cur.u32()?;
    }
    let hidden_widths = (0..f[12]).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let spec = GeneratorSpec {
        input_classes: f[0],
        noise_channels: f[1],
        seed_dim: f[2],
        encoder_widths: [f[3], f[4]],
        out_channels: f[5],
        height: f[6],
        width: f[7],
        kernel_size: f[8],
        noise_encoder: f[9] != 0,
        noise_layout: if f[10] == 0 {
            NoiseLayout::PerPixel
        } else {
            NoiseLayout::Broadcast
        },
        coarse_width: if f[11] == 0 { None } else { Some(f[11]) },
        hidden_widths,
    };
    let extractor_seed = cur.u64()?;
    let n_lambda = cur.u32()?;
    let lambda = (0..n_lambda).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let theta = cur.reals()?;
    let theta_e = cur.reals()?;
    if !cur.bytes.is_empty() {
        return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
    }
    let state = GeneratorState::from_parts(spec, theta, theta_e).map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        state,
        extractor_seed,
        lambda,
    })
}
