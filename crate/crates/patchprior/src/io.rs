//! Image and tensor file formats.
//!
//! - PGM P2 (ascii) and P5 (binary), 8- or 16-bit, values scaled to [0,1] on
//!   load and quantized on save.
//! - "Float raw": little-endian f32, row-major, with a JSON sidecar
//!   `{"width": w, "height": h, "kind": "image"|"sinogram"}`. Used for
//!   sinograms and intermediate tensors where quantization is unacceptable.
//!
//! The byte-level parsers are exposed so they can be driven directly by the
//! fuzz targets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const PGM_LIMIT: usize = 1 << 26; // refuse absurd dimensions from untrusted headers

/// What a float-raw tensor holds. Sinograms are (angles × detectors) grids
/// stored with width = detector count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Image,
    Sinogram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub kind: RawKind,
}

/// Parses a PGM (P2 or P5) byte stream.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;

    fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
        skip_ws_and_comments(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format("pgm: truncated header"));
        }
        Ok(&bytes[start..*pos])
    }

    fn read_usize(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
        let tok = read_token(bytes, pos)?;
        let s = std::str::from_utf8(tok).map_err(|_| Error::format(format!("pgm: bad {what}")))?;
        s.parse::<usize>().map_err(|_| Error::format(format!("pgm: bad {what} {s:?}")))
    }

    let magic = read_token(bytes, &mut pos)?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(Error::format("pgm: magic must be P2 or P5")),
    };
    let width = read_usize(bytes, &mut pos, "width")?;
    let height = read_usize(bytes, &mut pos, "height")?;
    if width == 0 || height == 0 || width.saturating_mul(height) > PGM_LIMIT {
        return Err(Error::format(format!("pgm: unreasonable dimensions {width}x{height}")));
    }
    let maxval = read_usize(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("pgm: maxval {maxval} out of range")));
    }
    let n = width * height;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(n);

    if binary {
        // exactly one whitespace byte after maxval
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::format("pgm: missing separator after maxval"));
        }
        pos += 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let body = bytes.get(pos..pos + need).ok_or_else(|| Error::format("pgm: truncated pixel data"))?;
        if wide {
            for c in body.chunks_exact(2) {
                let v = u16::from_be_bytes([c[0], c[1]]) as usize;
                if v > maxval {
                    return Err(Error::format("pgm: sample exceeds maxval"));
                }
                data.push(v as f64 / scale);
            }
        } else {
            for &b in body {
                if b as usize > maxval {
                    return Err(Error::format("pgm: sample exceeds maxval"));
                }
                data.push(b as f64 / scale);
            }
        }
    } else {
        for _ in 0..n {
            let v = read_usize(bytes, &mut pos, "sample")?;
            if v > maxval {
                return Err(Error::format("pgm: sample exceeds maxval"));
            }
            data.push(v as f64 / scale);
        }
    }
    Image::new(width, height, data)
}

/// Serializes an image as binary PGM (P5). `bits` must be 8 or 16; values are
/// clamped to [0,1] and quantized.
pub fn encode_pgm(image: &Image, bits: u8) -> Result<Vec<u8>> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::invalid("pgm: bits must be 8 or 16")),
    };
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    parse_pgm(&fs::read(path)?)
}

pub fn save_pgm(image: &Image, path: impl AsRef<Path>, bits: u8) -> Result<()> {
    fs::write(path, encode_pgm(image, bits)?)?;
    Ok(())
}

/// Parses a float-raw payload against its JSON sidecar.
pub fn parse_raw(sidecar_bytes: &[u8], raw_bytes: &[u8]) -> Result<(RawSidecar, Image)> {
    let sidecar: RawSidecar = serde_json::from_slice(sidecar_bytes)
        .map_err(|e| Error::format(format!("raw sidecar: {e}")))?;
    let n = sidecar
        .width
        .checked_mul(sidecar.height)
        .ok_or_else(|| Error::format("raw sidecar: dimension overflow"))?;
    if n == 0 || n > PGM_LIMIT {
        return Err(Error::format(format!(
            "raw sidecar: unreasonable dimensions {}x{}",
            sidecar.width, sidecar.height
        )));
    }
    if raw_bytes.len() != n * 4 {
        return Err(Error::format(format!(
            "raw payload is {} bytes, expected {}",
            raw_bytes.len(),
            n * 4
        )));
    }
    let mut data = Vec::with_capacity(n);
    for c in raw_bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        if !v.is_finite() {
            return Err(Error::format("raw payload contains non-finite value"));
        }
        data.push(v);
    }
    let image = Image::new(sidecar.width, sidecar.height, data)?;
    Ok((sidecar, image))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Loads `foo.raw` + `foo.json`.
pub fn load_raw(path: impl AsRef<Path>) -> Result<(RawSidecar, Image)> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let side = fs::read(sidecar_path(path))?;
    parse_raw(&side, &raw)
}

/// Saves `foo.raw` + `foo.json`. Bit-exact round trip for f32-representable data.
pub fn save_raw(image: &Image, kind: RawKind, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let sidecar = RawSidecar { width: image.width(), height: image.height(), kind };
    let mut bytes = Vec::with_capacity(image.len() * 4);
    for &v in image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar).unwrap())?;
    Ok(())
}
