//! IDX (MNIST) files. Big-endian headers:
//! images: magic 0x00000803, count, rows, cols, then count·rows·cols bytes;
//! labels: magic 0x00000801, count, then count bytes.

use std::path::Path;

use super::{DataKind, Dataset, Normalization};
use crate::error::{Error, IdxError, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(IdxError::Truncated {
            needed: at as u64 + 4,
            available: bytes.len() as u64,
        })
}

fn payload(bytes: &[u8], at: usize, len: usize) -> Result<&[u8], IdxError> {
    bytes.get(at..at + len).ok_or(IdxError::Truncated {
        needed: (at + len) as u64,
        available: bytes.len() as u64,
    })
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(u32, u32, u32, &[u8]), IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)?;
    let rows = read_u32(bytes, 8)?;
    let cols = read_u32(bytes, 12)?;
    if rows == 0 || cols == 0 {
        return Err(IdxError::EmptyDimensions);
    }
    let len = count as usize * rows as usize * cols as usize;
    Ok((count, rows, cols, payload(bytes, 16, len)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)?;
    payload(bytes, 8, count as usize)
}

/// Serializes images in IDX format (used for fixtures).
pub fn write_idx_images(rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() as u32 / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file (and optional label file); pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let bytes = read(images_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&bytes)?;
    let labels = match labels_path {
        Some(p) => {
            let lb = read(p)?;
            let labels = parse_idx_labels(&lb)?;
            if labels.len() != count as usize {
                return Err(IdxError::CountMismatch {
                    images: count,
                    labels: labels.len() as u32,
                }
                .into());
            }
            Some(labels.iter().map(|&l| l as usize).collect())
        }
        None => None,
    };
    if count == 0 {
        return Err(Error::shape("IDX file holds zero images"));
    }
    let (h, w) = (rows as usize, cols as usize);
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Dataset {
        x: Tensor::new(vec![count as usize, h * w], data)?,
        kind: DataKind::Image { h, w, c: 1 },
        name: images_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        normalization: Normalization { min: 0.0, max: 255.0 },
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_constants() {
        let good = write_idx_images(1, 1, &[7]);
        assert_eq!(&good[..4], &[0, 0, 8, 3]);
        assert!(parse_idx_images(&good).is_ok());
        let mut bad = good.clone();
        bad[3] = 1;
        assert_eq!(
            parse_idx_images(&bad).unwrap_err(),
            IdxError::WrongMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC
            }
        );
    }

    #[test]
    fn truncated_payload() {
        let bytes = write_idx_images(2, 2, &[0, 85, 170, 255]);
        assert!(matches!(
            parse_idx_images(&bytes[..bytes.len() - 1]),
            Err(IdxError::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&write_idx_labels(&[1, 2])[..9]),
            Err(IdxError::Truncated { .. })
        ));
    }
}
