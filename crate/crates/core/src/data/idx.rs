//! Big-endian IDX (MNIST-style) image and label files.

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn need(&self, len: usize) -> Result<()> {
        if self.bytes.len() < len {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: len,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.need(offset + 4)?;
        let b: [u8; 4] = self.bytes[offset..offset + 4]
            .try_into()
            .expect("length checked");
        Ok(u32::from_be_bytes(b))
    }

    fn magic(&self, expected: u32) -> Result<()> {
        let found = self.u32_at(0)?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Returns `(count, rows·cols, pixels scaled to [0, 1])`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let r = Reader { path, bytes };
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32_at(4)? as usize;
    let rows = r.u32_at(8)? as usize;
    let cols = r.u32_at(12)? as usize;
    let dim = rows * cols;
    r.need(16 + n * dim)?;
    let pixels = bytes[16..16 + n * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok((n, dim, pixels))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let r = Reader { path, bytes };
    r.magic(LABELS_MAGIC)?;
    let n = r.u32_at(4)? as usize;
    r.need(8 + n)?;
    Ok(bytes[8..8 + n].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair; the class count is `max label + 1` (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, dim, pixels) = parse_images(images_path, &read(images_path)?)?;
    let labels = parse_labels(labels_path, &read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(pixels, dim, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn images_fixture(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn labels_fixture(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn two_three_by_three_images() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..18)
            .map(|i| if i == 4 { 255 } else { i as u8 * 10 })
            .collect();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        std::fs::write(&img, images_fixture(2, 3, 3, &pixels)).unwrap();
        std::fs::write(&lab, labels_fixture(&[7, 1])).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes()), (2, 9, 8));
        assert_eq!(ds.row(0)[4], 1.0);
        assert_eq!(ds.row(1)[0], 90.0 / 255.0);
        assert_eq!(ds.labels(), &[7, 1]);
    }

    #[test]
    fn wrong_magic_names_value() {
        let mut bytes = images_fixture(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        let err = parse_images(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic { found: 0x0801, .. }));
        assert!(err.to_string().contains("0x00000801"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let bytes = images_fixture(2, 2, 2, &[0; 5]);
        assert!(matches!(
            parse_images(Path::new("x"), &bytes),
            Err(Error::Truncated {
                expected: 24,
                found: 21,
                ..
            })
        ));
        assert!(matches!(
            parse_labels(Path::new("y"), &[0, 0]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        std::fs::write(&img, images_fixture(2, 1, 1, &[0, 1])).unwrap();
        std::fs::write(&lab, labels_fixture(&[0, 1, 1])).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(Error::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }
}
