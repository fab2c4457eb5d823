//! Portable float map: `PF` (RGB) or `Pf` (gray) header, little-endian f32,
//! rows stored bottom to top.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn encode_pfm(img: &Image) -> Result<Vec<u8>> {
    let tag = match img.channels() {
        3 => "PF",
        1 => "Pf",
        c => return Err(Error::Shape(format!("PFM holds 1 or 3 channels, image has {c}"))),
    };
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * c * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for k in 0..c {
                out.extend_from_slice(&(img.get(x, y, k) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos)
        .then(|| std::str::from_utf8(&bytes[start..*pos]).ok())
        .flatten()
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos) {
        Some("PF") => 3,
        Some("Pf") => 1,
        _ => return Err("missing PF/Pf magic".into()),
    };
    let mut num = |what: &str| header_token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"));
    let w: usize = num("width")?.parse().map_err(|_| "bad width".to_string())?;
    let h: usize = num("height")?.parse().map_err(|_| "bad height".to_string())?;
    let scale: f64 = num("scale")?.parse().map_err(|_| "bad scale".to_string())?;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format!("raster truncated: need {need} bytes"))?;
    if bytes.len() != pos + need {
        return Err("trailing bytes after raster".into());
    }
    let mut img = Image::zeros(w, h, channels);
    let mut it = raster.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            for k in 0..channels {
                let b: [u8; 4] = it.next().expect("length checked").try_into().expect("chunk of 4");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                img.set(x, y, k, v as f64);
            }
        }
    }
    Ok(img)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pfm(img)?)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_pfm(&bytes).map_err(|e| Error::load(path, e))
}
