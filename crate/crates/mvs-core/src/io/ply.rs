//! Binary little-endian PLY point clouds: positions as 32-bit floats and a
//! grey value replicated into the three 8-bit color channels, 15 payload
//! bytes per point.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::fusion::PointCloud;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

const PROPERTIES: [&str; 6] = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
];

pub fn write_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + cloud.len() * 15);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    for prop in PROPERTIES {
        out.extend_from_slice(prop.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        out.extend_from_slice(&(p.z as f32).to_le_bytes());
        let grey = (cloud.color(i) * 255.0).round() as u8;
        out.extend_from_slice(&[grey, grey, grey]);
    }
    out
}

/// Reads clouds in the exact layout [`write_ply`] emits. Colors come back
/// as the mean of the three channels; per-point support is not stored in
/// the format and is restored as 1.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
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
    for (expect, line_no) in [("ply", 1), ("format binary_little_endian 1.0", 2)] {
        let got = next_line()?;
        if got != expect {
            return Err(parse_err(line_no, format!("expected '{expect}', got '{got}'")));
        }
    }
    let element = next_line()?;
    let count: usize = element
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| parse_err(3, format!("expected 'element vertex N', got '{element}'")))?;
    for (i, expect) in PROPERTIES.iter().enumerate() {
        let got = next_line()?;
        if got != *expect {
            return Err(parse_err(4 + i, format!("expected '{expect}', got '{got}'")));
        }
    }
    let got = next_line()?;
    if got != "end_header" {
        return Err(parse_err(10, format!("expected 'end_header', got '{got}'")));
    }
    if rest.len() != count * 15 {
        return Err(parse_err(
            11,
            format!("payload holds {} bytes, expected {}", rest.len(), count * 15),
        ));
    }
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for rec in rest.chunks_exact(15) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        points.push(Vector3::new(f(0), f(1), f(2)));
        colors.push((rec[12] as f64 + rec[13] as f64 + rec[14] as f64) / (3.0 * 255.0));
    }
    let support = vec![1; count];
    PointCloud::from_parts(points, colors, support)
}
