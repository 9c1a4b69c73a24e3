//! PFM float-image reader and writer.
//!
//! Grayscale PFM: a `Pf` magic line, a `width height` line, a scale line
//! whose sign encodes endianness (negative = little-endian), then rows of
//! 32-bit floats starting with the BOTTOM image row. We always write scale
//! `-1.0`.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes `data` (indexed `[row, column]`, row 0 at the top) as
/// little-endian grayscale PFM. Values are narrowed to f32.
pub fn write_pfm(path: &Path, data: &Array2<f64>) -> Result<()> {
    let (h, w) = data.dim();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    for v in (0..h).rev() {
        for u in 0..w {
            out.write_all(&(data[(v, u)] as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a grayscale PFM into a top-row-first array.
pub fn read_pfm(path: &Path) -> Result<Array2<f64>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let bytes = std::fs::read(path)?;
    parse_pfm(&bytes).map_err(|msg| Error::format(&name, msg))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("missing PFM magic")?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err("color PFM is not supported, expected grayscale Pf".into()),
        other => return Err(format!("bad PFM magic {other:?}")),
    }
    let w: usize = next_token(bytes, &mut pos)
        .ok_or("missing width")?
        .parse()
        .map_err(|e| format!("bad width: {e}"))?;
    let h: usize = next_token(bytes, &mut pos)
        .ok_or("missing height")?
        .parse()
        .map_err(|e| format!("bad height: {e}"))?;
    let scale: f64 = next_token(bytes, &mut pos)
        .ok_or("missing scale")?
        .parse()
        .map_err(|e| format!("bad scale: {e}"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format!("bad scale {scale}"));
    }
    if w == 0 || h == 0 {
        return Err(format!("bad dimensions {w}x{h}"));
    }
    // Exactly one whitespace byte separates the header from the data.
    let data_start = pos + 1;
    let need = w * h * 4;
    let found = bytes.len().saturating_sub(data_start);
    if found < need {
        return Err(format!("truncated data: need {need} bytes, found {found}"));
    }
    let little_endian = scale < 0.0;
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        let v = h - 1 - r;
        for u in 0..w {
            let o = data_start + (r * w + u) * 4;
            let raw: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
            let x = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            out[(v, u)] = f64::from(x);
        }
    }
    Ok(out)
}
