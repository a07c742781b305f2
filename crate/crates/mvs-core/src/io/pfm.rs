//! Portable float map: a three-line text header followed by a raw f32
//! raster stored bottom row first. The sign of the header's scale value
//! encodes endianness (negative = little endian); its magnitude is a
//! brightness hint that readers conventionally ignore, as this one does.

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::plane_sweep::DepthMap;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Serialize a single-channel map. Values are narrowed to f32, the payload
/// precision the format has.
pub fn write_pfm(map: &Image) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(crate::error::invalid(format!(
            "pfm stores single-channel maps, got {} channels",
            map.channels()
        )));
    }
    let (w, h) = (map.width(), map.height());
    let mut out = Vec::with_capacity(32 + w * h * 4);
    out.extend_from_slice(b"Pf\n");
    out.extend_from_slice(format!("{w} {h}\n").as_bytes());
    out.extend_from_slice(format!("{:.4}\n", -1.0).as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.get(0, x, y) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(bytes: &[u8]) -> Result<Image> {
    let mut rest = bytes;
    let mut line_no = 0usize;
    let mut next_line = || -> Result<&str> {
        line_no += 1;
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(line_no, "unterminated header line"))?;
        let (line, tail) = rest.split_at(end);
        rest = &tail[1..];
        std::str::from_utf8(line).map_err(|_| parse_err(line_no, "header is not utf-8"))
    };
    let magic = next_line()?;
    if magic != "Pf" {
        return Err(parse_err(1, format!("expected magic 'Pf', got '{magic}'")));
    }
    let dims = next_line()?;
    let mut it = dims.split_whitespace();
    let mut dim = |name: &str| -> Result<usize> {
        it.next()
            .ok_or_else(|| parse_err(2, format!("missing {name}")))?
            .parse::<usize>()
            .map_err(|_| parse_err(2, format!("bad {name} in '{dims}'")))
    };
    let w = dim("width")?;
    let h = dim("height")?;
    if it.next().is_some() {
        return Err(parse_err(2, format!("trailing tokens in dimension line '{dims}'")));
    }
    if w == 0 || h == 0 {
        return Err(parse_err(2, format!("dimensions must be positive, got {w}x{h}")));
    }
    let scale_line = next_line()?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| parse_err(3, format!("bad scale '{scale_line}'")))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(parse_err(3, format!("scale must be finite and non-zero, got {scale}")));
    }
    let little_endian = scale < 0.0;
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| parse_err(2, "dimensions overflow"))?;
    if rest.len() != expected {
        return Err(parse_err(
            4,
            format!("payload holds {} bytes, expected {expected}", rest.len()),
        ));
    }
    let mut out = Image::new(1, w, h);
    let mut chunks = rest.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            let raw: [u8; 4] = chunks.next().expect("length checked").try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            out.set(0, x, y, v as f64);
        }
    }
    Ok(out)
}

/// Depth maps use the convention that 0 marks an invalid pixel, which is
/// outside any legal depth range.
pub fn write_depth_pfm(depth: &DepthMap) -> Result<Vec<u8>> {
    let mut map = Image::new(1, depth.width(), depth.height());
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(d) = depth.get(x, y) {
                map.set(0, x, y, d);
            }
        }
    }
    write_pfm(&map)
}

/// Inverse of [`write_depth_pfm`]: non-positive samples stay invalid, the
/// rest are clamped into `range` (absorbing the f32 narrowing at its ends).
pub fn read_depth_pfm(bytes: &[u8], range: (f64, f64)) -> Result<DepthMap> {
    let map = read_pfm(bytes)?;
    let mut out = DepthMap::new(map.width(), map.height(), range)?;
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(0, x, y);
            if v > 0.0 {
                out.set(x, y, v);
            }
        }
    }
    Ok(out)
}
