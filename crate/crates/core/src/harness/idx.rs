//! IDX files as distributed for MNIST and FashionMNIST: a big-endian magic
//! (`0x00000803` for `u8` images, `0x00000801` for `u8` labels), one
//! big-endian `u32` per dimension, then the raw bytes.

use std::path::Path;

use crate::autodiff_nn::Tensor;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images as `[n, 1, rows, cols]` with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub images: Tensor,
    pub rows: usize,
    pub cols: usize,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images `start..end` (clamped to the available count).
    pub fn slice(&self, start: usize, end: usize) -> IdxImages {
        let end = end.min(self.len());
        IdxImages { images: self.images.slice_rows(start.min(end), end), rows: self.rows, cols: self.cols }
    }
}

fn parse_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), offset, detail: detail.into() }
}

fn header(bytes: &[u8], path: &Path, magic: u32, ndim: usize) -> Result<Vec<usize>> {
    let word = |i: usize| -> Result<u32> {
        let off = 4 * i;
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| parse_err(path, bytes.len() as u64, format!("truncated header, need {} bytes", off + 4)))
    };
    let found = word(0)?;
    if found != magic {
        return Err(parse_err(path, 0, format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let dims = (1..=ndim).map(|i| word(i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let need = 4 * (ndim + 1) + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(parse_err(path, bytes.len() as u64, format!("truncated payload, need {need} bytes")));
    }
    if bytes.len() > need {
        return Err(parse_err(path, need as u64, format!("{} trailing bytes", bytes.len() - need)));
    }
    Ok(dims)
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = std::fs::read(path)?;
    let dims = header(&bytes, path, IDX_IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(IdxImages { images: Tensor::new(vec![n, 1, rows, cols], data)?, rows, cols })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    header(&bytes, path, IDX_LABELS_MAGIC, 1)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Images plus their labels; the counts must agree.
pub fn read_idx(images: &Path, labels: &Path) -> Result<(IdxImages, Vec<usize>)> {
    let imgs = read_idx_images(images)?;
    let labs = read_idx_labels(labels)?;
    if labs.len() != imgs.len() {
        return Err(parse_err(labels, 4, format!("{} labels for {} images", labs.len(), imgs.len())));
    }
    Ok((imgs, labs))
}

/// Writes `[n, 1, rows, cols]` (or `[n, rows, cols]`) pixels in `[0, 1]`,
/// rounded to the nearest byte.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    let (n, rows, cols) = match *images.shape() {
        [n, 1, r, c] | [n, r, c] => (n, r, c),
        ref s => return Err(Error::shape("write_idx_images", format!("expected [n, 1, rows, cols], got {s:?}"))),
    };
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, rows, cols] {
        out.extend(dim_u32(d)?.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend(dim_u32(labels.len())?.to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::domain("write_idx_labels", format!("label {l} exceeds 255")))?);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::domain("idx", format!("dimension {d} exceeds u32")))
}

/// The MNIST naming convention pairs `*-images-idx3-ubyte` with
/// `*-labels-idx1-ubyte`.
pub fn labels_path_for(images: &Path) -> Option<std::path::PathBuf> {
    let name = images.file_name()?.to_str()?;
    name.contains("images-idx3").then(|| images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}
