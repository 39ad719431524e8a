//! Portable Float Map reader/writer, grayscale only.
//!
//! Layout: header line `Pf`, dimensions line `W H`, scale line whose sign
//! encodes endianness (negative = little-endian), then `W*H` 32-bit floats
//! row-major bottom-to-top. Write-then-read reproduces every 32-bit float
//! bit-exactly.

use crate::error::{Error, Result};
use crate::image::Image;
use std::io::Write;
use std::path::Path;

const MAX_HEADER_LINE: usize = 128;
const MAX_PIXELS: usize = 1 << 24;

fn header_error(reason: impl Into<String>) -> Error {
    Error::malformed("pfm", reason)
}

/// Reads one header line (up to `\n`), rejecting oversized headers.
fn read_line<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let start = *pos;
    let mut end = start;
    while end < data.len() && data[end] != b'\n' {
        end += 1;
        if end - start > MAX_HEADER_LINE {
            return Err(header_error("header line too long"));
        }
    }
    if end >= data.len() {
        return Err(header_error("truncated header"));
    }
    *pos = end + 1;
    std::str::from_utf8(&data[start..end])
        .map(|s| s.trim_end_matches('\r'))
        .map_err(|_| header_error("header is not utf-8"))
}

/// Parses a PFM byte buffer.
pub fn read_pfm_bytes(data: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = read_line(data, &mut pos)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(header_error("unsupported channel count (color PFM)")),
        other => {
            return Err(header_error(format!("bad magic {other:?}")));
        }
    }
    let dims = read_line(data, &mut pos)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .ok_or_else(|| header_error("missing width"))?
        .parse()
        .map_err(|_| header_error("width is not an integer"))?;
    let h: usize = it
        .next()
        .ok_or_else(|| header_error("missing height"))?
        .parse()
        .map_err(|_| header_error("height is not an integer"))?;
    if it.next().is_some() {
        return Err(header_error("trailing tokens in dimensions line"));
    }
    if w == 0 || h == 0 {
        return Err(header_error("zero dimensions"));
    }
    let pixels = w
        .checked_mul(h)
        .filter(|&p| p <= MAX_PIXELS)
        .ok_or_else(|| header_error("image too large"))?;
    let scale: f64 = read_line(data, &mut pos)?
        .trim()
        .parse()
        .map_err(|_| header_error("scale is not a number"))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(header_error("scale must be finite and non-zero"));
    }
    let little_endian = scale < 0.0;
    let payload = &data[pos..];
    let expected = pixels
        .checked_mul(4)
        .ok_or_else(|| header_error("image too large"))?;
    if payload.len() < expected {
        return Err(header_error(format!(
            "truncated payload: {} of {} bytes",
            payload.len(),
            expected
        )));
    }
    if payload.len() > expected {
        return Err(header_error("trailing bytes after payload"));
    }
    let mut img = Image::zeros(w, h);
    for row in 0..h {
        // file rows run bottom-to-top
        let y = h - 1 - row;
        for x in 0..w {
            let off = (row * w + x) * 4;
            let bytes: [u8; 4] = payload[off..off + 4].try_into().expect("bounds checked");
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            img.set(x, y, v as f64);
        }
    }
    Ok(img)
}

/// Serializes an image as little-endian grayscale PFM. Values are stored as
/// f32; inputs must be finite.
pub fn write_pfm_bytes(img: &Image) -> Result<Vec<u8>> {
    if !img.all_finite() {
        return Err(Error::NonFinite("pfm image"));
    }
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::InvalidParam("cannot write empty image".into()));
    }
    let mut out = Vec::with_capacity(32 + w * h * 4);
    out.extend_from_slice(format!("Pf\n{w} {h}\n-1.0\n").as_bytes());
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            out.extend_from_slice(&(img.get(x, y) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let data = std::fs::read(path)?;
    read_pfm_bytes(&data)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let bytes = write_pfm_bytes(img)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Writes a boolean mask as a 0.0/1.0 PFM.
pub fn write_mask_pfm(path: &Path, mask: &[bool], w: usize, h: usize) -> Result<()> {
    let mut img = Image::zeros(w, h);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            img.data_mut()[i] = 1.0;
        }
    }
    write_pfm(path, &img)
}

/// Reads a 0.0/1.0 PFM back into a boolean mask.
pub fn read_mask_pfm(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = read_pfm(path)?;
    let mask = img.data().iter().map(|&v| v > 0.5).collect();
    Ok((mask, img.width(), img.height()))
}
