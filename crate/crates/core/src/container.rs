//! Binary container and image export.
//!
//! A record is the 5-byte magic `CIML1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then the row-major payload. Rank-2
//! records are label maps with one `u8` class id per pixel; every other rank
//! holds little-endian `f64` reals. Files may hold any number of records
//! back to back.

use std::io::{self, Read, Write};

use crate::error::{invalid, Error, Result};
use crate::tensor::{SemanticLayout, Tensor};

pub const MAGIC: &[u8; 5] = b"CIML1";

/// A decoded container record.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    LabelMap {
        height: usize,
        width: usize,
        labels: Vec<u8>,
    },
    Reals {
        dims: Vec<usize>,
        data: Vec<f64>,
    },
}

impl Record {
    pub fn into_layout(self, num_classes: usize) -> Result<SemanticLayout> {
        match self {
            Record::LabelMap { height, width, labels } => {
                let ids: Vec<usize> = labels.into_iter().map(usize::from).collect();
                SemanticLayout::from_labels(height, width, &ids, num_classes)
            }
            Record::Reals { .. } => Err(Error::Corrupt("expected a label map record".into())),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor> {
        match self {
            Record::Reals { dims, data } if dims.len() == 3 => Tensor::from_vec(dims[0], dims[1], dims[2], data),
            _ => Err(Error::Corrupt("expected a rank-3 tensor record".into())),
        }
    }
}

fn write_header<W: Write>(out: &mut W, dims: &[usize]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| invalid(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_layout<W: Write>(out: &mut W, layout: &SemanticLayout) -> Result<()> {
    write_header(out, &[layout.height(), layout.width()])?;
    let bytes: Vec<u8> = layout.labels().map(|l| l as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn write_tensor<W: Write>(out: &mut W, tensor: &Tensor) -> Result<()> {
    write_header(out, &[tensor.height(), tensor.width(), tensor.channels()])?;
    write_reals(out, tensor.data())
}

pub fn write_vector<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    write_header(out, &[values.len()])?;
    write_reals(out, values)
}

fn write_reals<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corrupt("truncated record".into())
    } else {
        Error::Io(e)
    }
}

/// Reads the next record, or `None` at a clean end of input.
pub fn read_record<R: Read>(input: &mut R) -> Result<Option<Record>> {
    let mut magic = [0u8; 5];
    let mut filled = 0;
    while filled < magic.len() {
        let n = input.read(&mut magic[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled == 0 {
        return Ok(None);
    }
    if filled < magic.len() || &magic != MAGIC {
        return Err(Error::Corrupt("bad container magic".into()));
    }
    let rank = read_u32(input)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Corrupt(format!("unsupported rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u32(input).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Corrupt("record size overflows".into()))?;
    if rank == 2 {
        let mut labels = vec![0u8; count];
        input.read_exact(&mut labels).map_err(truncated)?;
        Ok(Some(Record::LabelMap {
            height: dims[0],
            width: dims[1],
            labels,
        }))
    } else {
        let mut bytes = vec![
            0u8;
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Corrupt("record too large".into()))?
        ];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Some(Record::Reals { dims, data }))
    }
}

/// Writes a P6 PPM. Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn write_ppm<W: Write>(out: &mut W, image: &Tensor) -> Result<()> {
    if image.channels() != 3 {
        return Err(invalid(format!(
            "PPM export needs 3 channels, got {}",
            image.channels()
        )));
    }
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Tiles images row-major into a grid with `columns` per row (default:
/// `ceil(sqrt(n))`), separated by a one-pixel white border.
pub fn mosaic(images: &[Tensor], columns: Option<usize>) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| invalid("mosaic of zero images"))?;
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(invalid("mosaic images must share a shape"));
    }
    let n = images.len();
    let cols = columns.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (h, w, c) = first.dims();
    let border = 1;
    let mut out = Tensor::filled(rows * (h + border) + border, cols * (w + border) + border, c, 1.0);
    for (idx, im) in images.iter().enumerate() {
        let top = border + (idx / cols) * (h + border);
        let left = border + (idx % cols) * (w + border);
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    out.set(top + r, left + col, ch, im.get(r, col, ch));
                }
            }
        }
    }
    Ok(out)
}
