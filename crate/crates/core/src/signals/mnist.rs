//! IDX image/label ingestion and conversion of images into signal rows.

use super::{matrix::SignalMatrix, SignalError};
use crate::scalar::Scalar;
use std::fs;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<F> {
    pub height: usize,
    pub width: usize,
    /// Row-major pixels in [0, 1].
    pub pixels: Vec<F>,
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32, SignalError> {
    if bytes.len() < offset + 4 {
        return Err(SignalError::Truncated {
            path: path.to_string(),
            needed: offset + 4,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap()))
}

/// Parse an IDX image file (big-endian magic 0x00000803, then count, rows,
/// cols, then raw bytes). Pixels are scaled to `[0, 1]`.
pub fn load_idx_images<F: Scalar, P: AsRef<Path>>(path: P) -> Result<Vec<GrayImage<F>>, SignalError> {
    let path_str = path.as_ref().display().to_string();
    let bytes = fs::read(&path)?;
    let magic = read_be_u32(&bytes, 0, &path_str)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(SignalError::BadMagic {
            path: path_str,
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_be_u32(&bytes, 4, &path_str)? as usize;
    let rows = read_be_u32(&bytes, 8, &path_str)? as usize;
    let cols = read_be_u32(&bytes, 12, &path_str)? as usize;
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(SignalError::ExtentMismatch {
            path: path_str,
            promised: expected,
            actual: payload.len(),
        });
    }
    let scale = F::cast(1.0 / 255.0);
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let raw = &payload[i * rows * cols..(i + 1) * rows * cols];
        images.push(GrayImage {
            height: rows,
            width: cols,
            pixels: raw.iter().map(|&b| F::cast(b as f64) * scale).collect(),
        });
    }
    Ok(images)
}

/// Parse an IDX label file (big-endian magic 0x00000801, then count, then
/// one byte per label).
pub fn load_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<u8>, SignalError> {
    let path_str = path.as_ref().display().to_string();
    let bytes = fs::read(&path)?;
    let magic = read_be_u32(&bytes, 0, &path_str)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(SignalError::BadMagic {
            path: path_str,
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = read_be_u32(&bytes, 4, &path_str)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(SignalError::ExtentMismatch {
            path: path_str,
            promised: count,
            actual: payload.len(),
        });
    }
    Ok(payload.to_vec())
}

/// Zero-pad each image to `pad_to x pad_to` (centered) and flatten row-major
/// into one signal row per image.
pub fn images_to_signals<F: Scalar>(
    images: &[GrayImage<F>],
    pad_to: usize,
) -> Result<SignalMatrix<F>, SignalError> {
    if images.is_empty() {
        return Err(SignalError::InvalidConfig("no images".into()));
    }
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        if img.height > pad_to || img.width > pad_to {
            return Err(SignalError::DimMismatch {
                what: "image exceeds padded extent",
                expected: pad_to,
                found: img.height.max(img.width),
            });
        }
        let top = (pad_to - img.height) / 2;
        let left = (pad_to - img.width) / 2;
        let mut row = vec![F::zero(); pad_to * pad_to];
        for r in 0..img.height {
            for c in 0..img.width {
                row[(top + r) * pad_to + (left + c)] = img.pixels[r * img.width + c];
            }
        }
        rows.push(row);
    }
    SignalMatrix::from_rows(rows)
}

/// Extract a signal row back into a `side x side` image (the inverse of
/// `images_to_signals` without the padding removal).
pub fn row_to_image<F: Scalar>(row: &[F], side: usize) -> GrayImage<F> {
    assert_eq!(row.len(), side * side);
    GrayImage {
        height: side,
        width: side,
        pixels: row.to_vec(),
    }
}

/// Write an 8-bit binary PGM (P5). Values are min-max scaled to 0..=255,
/// which absorbs the scale/sign indeterminacy of recovered signals.
pub fn write_pgm<F: Scalar, P: AsRef<Path>>(
    path: P,
    img: &GrayImage<F>,
    comments: &[String],
) -> Result<(), SignalError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &img.pixels {
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(img.pixels.len() + 64);
    out.extend_from_slice(b"P5\n");
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n255\n", img.width, img.height).as_bytes());
    for &v in &img.pixels {
        let scaled = ((v.as_f64() - lo) / span * 255.0).round().clamp(0.0, 255.0);
        out.push(scaled as u8);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images_idx(path: &Path, count: u32, rows: u32, cols: u32, data: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&count.to_be_bytes());
        bytes.extend_from_slice(&rows.to_be_bytes());
        bytes.extend_from_slice(&cols.to_be_bytes());
        bytes.extend_from_slice(data);
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 0, 9]);
        fs::write(&path, bytes).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x1234_5678u32.to_be_bytes());
        bytes.extend_from_slice(&0u32.to_be_bytes());
        fs::write(&path, bytes).unwrap();
        match load_idx_labels(&path) {
            Err(SignalError::BadMagic { found, .. }) => assert_eq!(found, 0x1234_5678),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn pixel_255_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.idx");
        write_images_idx(&path, 1, 2, 2, &[0, 128, 255, 64]);
        let images: Vec<GrayImage<f64>> = load_idx_images(&path).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].pixels[2], 1.0);
        assert_eq!(images[0].pixels[0], 0.0);
        assert!((images[0].pixels[1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn extent_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.idx");
        write_images_idx(&path, 2, 2, 2, &[0; 7]); // needs 8 bytes
        assert!(matches!(
            load_idx_images::<f64, _>(&path),
            Err(SignalError::ExtentMismatch { .. })
        ));
    }

    #[test]
    fn padding_centres_the_image() {
        // A single lit pixel at (0,0) of a 28x28 image lands at (2,2) of the
        // padded 32x32 grid, i.e. flattened index 2*32+2 = 66.
        let mut img = GrayImage::<f64> {
            height: 28,
            width: 28,
            pixels: vec![0.0; 28 * 28],
        };
        img.pixels[0] = 1.0;
        let m = images_to_signals(&[img], 32).unwrap();
        assert_eq!(m.t_len(), 1024);
        for (idx, &v) in m.row(0).iter().enumerate() {
            if idx == 66 {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0, "unexpected value at {idx}");
            }
        }
    }

    #[test]
    fn zero_image_gives_zero_row() {
        let img = GrayImage::<f64> {
            height: 28,
            width: 28,
            pixels: vec![0.0; 28 * 28],
        };
        let m = images_to_signals(&[img], 32).unwrap();
        assert!(m.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_round_trip() {
        let img = GrayImage::<f64> {
            height: 2,
            width: 2,
            pixels: vec![0.1, 0.2, 0.3, 0.4],
        };
        let m = images_to_signals(&[img.clone()], 4).unwrap();
        let back = row_to_image(m.row(0), 4);
        // The padded image contains the original in its centre.
        assert_eq!(back.pixels[1 * 4 + 1], 0.1);
        assert_eq!(back.pixels[1 * 4 + 2], 0.2);
        assert_eq!(back.pixels[2 * 4 + 1], 0.3);
        assert_eq!(back.pixels[2 * 4 + 2], 0.4);
    }

    #[test]
    fn pgm_has_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = GrayImage::<f64> {
            height: 2,
            width: 3,
            pixels: vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0],
        };
        write_pgm(&path, &img, &["demo".into()]).unwrap();
        let bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 6]);
        assert!(text.starts_with("P5\n# demo\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
    }
}
