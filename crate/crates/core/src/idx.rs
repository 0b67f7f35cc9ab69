//! IDX binary ingestion (the MNIST container format).
//!
//! An images file starts with big-endian magic `0x00000803` followed by three
//! big-endian u32 dimensions (count, rows, cols) and `count·rows·cols` bytes
//! of pixel data; a labels file uses magic `0x00000801`, one dimension, and
//! one byte per label. Pixels are scaled to [0,1] on load.

use std::path::Path;

use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct BigEndianReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> BigEndianReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BigEndianReader { bytes, offset: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.offset, message: message.into() }
    }

    fn u32(&mut self) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(self.fail("truncated while reading a 4-byte field"));
        }
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&self.bytes[self.offset..self.offset + 4]);
        self.offset += 4;
        Ok(u32::from_be_bytes(buf))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated: need {n} data bytes, {} remain",
                self.bytes.len() - self.offset
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn done(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.offset)));
        }
        Ok(())
    }
}

/// Parse an images file into a row-per-image matrix with entries in [0,1].
pub fn read_idx_images(path: &Path) -> Result<Matrix> {
    let raw = std::fs::read(path)?;
    let mut r = BigEndianReader::new(&raw);
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.fail("zero image dimensions"));
    }
    let pixels = r.bytes(count * rows * cols)?;
    r.done()?;
    let data: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Matrix::from_vec(count, rows * cols, data)
}

/// Parse a labels file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let raw = std::fs::read(path)?;
    let mut r = BigEndianReader::new(&raw);
    let magic = r.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = r.u32()? as usize;
    let bytes = r.bytes(count)?;
    r.done()?;
    Ok(bytes.iter().map(|&b| b as usize).collect())
}

/// Load an images/labels file pair as one split of examples.
pub fn load_idx(images: &Path, labels: &Path) -> Result<SplitData> {
    let inputs = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if inputs.rows() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} images but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    SplitData::new(inputs, labels)
}

/// Write a matrix of [0,1] values as an images file (each image one row of
/// `rows`×`cols` pixels). Inverse of [`read_idx_images`] for byte-valued data.
pub fn write_idx_images(path: &Path, inputs: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != inputs.cols() {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} image shape does not match {} columns",
            inputs.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + inputs.rows() * inputs.cols());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(inputs.rows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in inputs.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write labels (must fit in a byte). Inverse of [`read_idx_labels`].
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        if y > 255 {
            return Err(Error::Invalid(format!("label {y} does not fit in one byte")));
        }
        out.push(y as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}
