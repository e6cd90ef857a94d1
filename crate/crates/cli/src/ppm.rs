//! Binary PPM (P6, 8-bit) images.
//!
//! Pixels map linearly between [0,1] reals and 0..=255 with round-half-up on
//! encode. The header accepts arbitrary whitespace and `#` comments between
//! tokens, as the format allows; only maxval 255 is supported.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fctl_core::image::ImageRGB;

pub fn encode(img: &ImageRGB) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.get(c, x, y) * 255.0 + 0.5).floor() as u8);
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImageRGB> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("byte {start}: missing {what}");
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic")?;
    if magic != "P6" {
        bail!("byte 0: bad magic {magic:?}, expected \"P6\"");
    }
    let dim = |t: String, what: &str| -> Result<usize> {
        t.parse::<usize>().map_err(|_| anyhow!("invalid {what} {t:?}"))
    };
    let w = dim(token("width")?, "width")?;
    let h = dim(token("height")?, "height")?;
    let maxval = token("maxval")?;
    if maxval != "255" {
        bail!("unsupported maxval {maxval}, expected 255");
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = pos + 3 * w * h;
    if bytes.len() < expected {
        bail!("byte {pos}: truncated payload, expected {expected} bytes total, got {}", bytes.len());
    }
    let mut data = vec![0.0; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = bytes[pos] as f64 / 255.0;
                pos += 1;
            }
        }
    }
    ImageRGB::from_vec(w, h, data).map_err(|e| anyhow!("{e}"))
}

pub fn write_image(img: &ImageRGB, path: &Path) -> Result<()> {
    std::fs::write(path, encode(img)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_image(path: &Path) -> Result<ImageRGB> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| path.display().to_string())
}
