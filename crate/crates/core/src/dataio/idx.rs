//! Big-endian IDX files: `0x00000803` image stacks and `0x00000801` label
//! vectors of unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated {what} header")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "unexpected magic 0x{magic:08x} in {what} file, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

/// Images scaled to `[0, 1]` by `/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    check_magic(bytes, IMAGES_MAGIC, "image")?;
    let n = read_u32(bytes, 4, "image")? as usize;
    let h = read_u32(bytes, 8, "image")? as usize;
    let w = read_u32(bytes, 12, "image")? as usize;
    if h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "image dimensions {h}x{w} must be positive"
        )));
    }
    let expected = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("image payload size overflows".into()))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "image payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    payload
        .chunks_exact(h * w)
        .map(|c| Image::new(h, w, c.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC, "label")?;
    let n = read_u32(bytes, 4, "label")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "label payload has {} bytes, header declares {n}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Pixel byte for `v ∈ [0, 1]`, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_idx_images(images: &[Image]) -> Result<Vec<u8>> {
    let (h, w) = images.first().map_or((0, 0), Image::shape);
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((h as u32).to_be_bytes());
    out.extend((w as u32).to_be_bytes());
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::Format("IDX images must share one shape".into()));
        }
        out.extend(img.pixels().iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_magic_named_in_error() {
        let mut bytes = vec![0, 0, 8, 2];
        bytes.extend([0, 0, 0, 0]);
        let err = parse_idx_labels(&bytes).unwrap_err().to_string();
        assert!(err.contains("unexpected magic"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_idx_labels(&[1, 2]).unwrap();
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![1, 2]);
        bytes.push(0);
        assert!(parse_idx_labels(&bytes).is_err());
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }
}
