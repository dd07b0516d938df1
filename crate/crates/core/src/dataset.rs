//! Paired `(layout, image)` datasets and their on-disk form.
//!
//! A dataset file is a sequence of container records: a rank-1 real record
//! holding `[num_classes]`, then one label map and one image record per
//! example. Ground-truth mode labels live in a sidecar CSV with columns
//! `image_index,class,mode_id`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::container::{read_record, write_layout, write_tensor, write_vector, Record};
use crate::error::{invalid, shape, Error, Result};
use crate::tensor::{ImageTensor, SemanticLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub layout: SemanticLayout,
    pub image: ImageTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    examples: Vec<Example>,
}

impl Dataset {
    /// All layouts must share one shape and class count, all images one shape.
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let first = examples.first().ok_or_else(|| invalid("dataset is empty"))?;
        let num_classes = first.layout.num_classes();
        let layout_dims = (first.layout.height(), first.layout.width());
        let image_dims = first.image.dims();
        for (k, ex) in examples.iter().enumerate() {
            if ex.layout.num_classes() != num_classes
                || (ex.layout.height(), ex.layout.width()) != layout_dims
                || ex.image.dims() != image_dims
            {
                return Err(shape(format!("example {k} does not match the shape of example 0")));
            }
            if (ex.image.height(), ex.image.width()) != layout_dims {
                return Err(shape(format!("example {k}: image and layout resolution differ")));
            }
        }
        Ok(Self { num_classes, examples })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, k: usize) -> &Example {
        &self.examples[k]
    }

    /// `(height, width, channels)` of the images.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        self.examples[0].image.dims()
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        write_vector(out, &[self.num_classes as f64])?;
        for ex in &self.examples {
            write_layout(out, &ex.layout)?;
            write_tensor(out, &ex.image)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let num_classes = match read_record(input)? {
            Some(Record::Reals { dims, data }) if dims == [1] && data[0] >= 1.0 && data[0].fract() == 0.0 => {
                data[0] as usize
            }
            _ => return Err(Error::Corrupt("dataset header record missing".into())),
        };
        let mut examples = Vec::new();
        while let Some(rec) = read_record(input)? {
            let layout = rec.into_layout(num_classes)?;
            let image = read_record(input)?
                .ok_or_else(|| Error::Corrupt("layout without image".into()))?
                .into_tensor()?;
            examples.push(Example { layout, image });
        }
        if examples.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        Self::new(examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

/// Ground-truth mode of one class in one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ModeLabel {
    pub image: usize,
    pub class: usize,
    pub mode: usize,
}

/// Sidecar path for a dataset file: `<path>.meta.csv`.
pub fn metadata_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".meta.csv");
    PathBuf::from(s)
}

pub fn write_metadata<W: Write>(out: &mut W, labels: &[ModeLabel]) -> Result<()> {
    writeln!(out, "image_index,class,mode_id")?;
    for l in labels {
        writeln!(out, "{},{},{}", l.image, l.class, l.mode)?;
    }
    Ok(())
}

pub fn read_metadata<R: Read>(input: R) -> Result<Vec<ModeLabel>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "image_index,class,mode_id" => {}
        _ => return Err(Error::Corrupt("metadata header missing".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Corrupt(format!("metadata line {}: bad integer {s:?}", n + 2)))
        };
        if fields.len() != 3 {
            return Err(Error::Corrupt(format!("metadata line {}: expected 3 fields", n + 2)));
        }
        out.push(ModeLabel {
            image: parse(fields[0])?,
            class: parse(fields[1])?,
            mode: parse(fields[2])?,
        });
    }
    Ok(out)
}
