//! Binary PGM (P5) and 8-bit grayscale PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::idx::quantize;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::segmentation::SegmentMap;

/// P5 with maxval 255, `round(v·255)` half up.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let (h, w) = image.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.pixels().iter().map(|&v| quantize(v)));
    out
}

/// Segment labels as P5; maxval 255 when they fit a byte, otherwise 65535
/// with big-endian samples.
pub fn encode_label_pgm(segmap: &SegmentMap) -> Result<Vec<u8>> {
    let (h, w) = segmap.shape();
    let max = segmap.count().saturating_sub(1);
    if max > u16::MAX as usize {
        return Err(Error::Format(format!(
            "{} segments do not fit a 16-bit PGM",
            segmap.count()
        )));
    }
    let maxval = if max <= 255 { 255 } else { 65535 };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &l in segmap.labels() {
        if maxval == 255 {
            out.push(l as u8);
        } else {
            out.extend((l as u16).to_be_bytes());
        }
    }
    Ok(out)
}

struct PgmRaw {
    width: usize,
    height: usize,
    maxval: usize,
    samples: Vec<usize>,
}

fn parse_pgm_raw(bytes: &[u8]) -> Result<PgmRaw> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM header field {text:?}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format(
            "PGM header must end in one whitespace byte".into(),
        ));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "bad PGM header {width}x{height} maxval {maxval}"
        )));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    if payload.len() != width * height * bps {
        return Err(Error::Format(format!(
            "PGM payload has {} bytes, expected {}",
            payload.len(),
            width * height * bps
        )));
    }
    let samples = if bps == 1 {
        payload.iter().map(|&b| b as usize).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
            .collect()
    };
    Ok(PgmRaw {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let raw = parse_pgm_raw(bytes)?;
    let m = raw.maxval as f64;
    Image::new(
        raw.height,
        raw.width,
        raw.samples.iter().map(|&s| s as f64 / m).collect(),
    )
}

pub fn decode_label_pgm(bytes: &[u8]) -> Result<SegmentMap> {
    let raw = parse_pgm_raw(bytes)?;
    SegmentMap::new(raw.height, raw.width, raw.samples)
}

pub fn save_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pgm(image))?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn save_label_pgm(segmap: &SegmentMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_label_pgm(segmap)?)?;
    Ok(())
}

pub fn load_label_pgm(path: impl AsRef<Path>) -> Result<SegmentMap> {
    decode_label_pgm(&std::fs::read(path)?)
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = image.shape();
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let data: Vec<u8> = image.pixels().iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Reads 8- or 16-bit grayscale PNGs; colour images are averaged over
/// their RGB channels and alpha is dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let max = if sixteen { 65535.0 } else { 255.0 };
    let sample = |i: usize| -> f64 {
        if sixteen {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / max
        } else {
            buf[i] as f64 / max
        }
    };
    let color = match channels {
        1 | 2 => 1,
        _ => 3,
    };
    let mut pixels = Vec::with_capacity(w * h);
    for p in 0..w * h {
        let base = p * channels;
        let v: f64 = (0..color).map(|c| sample(base + c)).sum::<f64>() / color as f64;
        pixels.push(v);
    }
    Image::new(h, w, pixels)
}

/// Loads `.pgm` or `.png` by extension, falling back to sniffing the magic.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => load_png(path),
        Some("pgm") => load_pgm(path),
        _ => {
            let bytes = std::fs::read(path)?;
            if bytes.starts_with(b"P5") {
                decode_pgm(&bytes)
            } else {
                load_png(path)
            }
        }
    }
}

/// Saves as PNG when the extension says so, PGM otherwise.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => save_png(image, path),
        _ => save_pgm(image, path),
    }
}
