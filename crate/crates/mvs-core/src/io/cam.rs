//! Camera files: a labeled 4x4 world-to-camera block, a labeled 3x3
//! calibration block, and a depth line holding `d_min interval` with an
//! optional `count d_max` tail. Floats are written with the shortest
//! representation that parses back to the same value, so write -> parse is
//! field-exact.

use nalgebra::{Matrix3, Matrix4};

use crate::error::{invalid, Error, Result};
use crate::geometry::CameraView;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Payload of one camera file. Kept separate from [`CameraView`] because
/// the file stores the sweep step but not the image dimensions; the two
/// convert via [`CamFile::to_view`] and [`CamFile::from_view`].
#[derive(Debug, Clone, PartialEq)]
pub struct CamFile {
    /// World-to-camera transform, row-major in the file.
    pub extrinsic: Matrix4<f64>,
    pub intrinsic: Matrix3<f64>,
    pub d_min: f64,
    /// Depth distance between consecutive sweep hypotheses.
    pub interval: f64,
    /// The four-number form's tail: hypothesis count and d_max.
    pub sweep: Option<(f64, f64)>,
}

impl CamFile {
    /// The two-number form leaves d_max implicit at the conventional 192
    /// hypotheses: d_min + 191 intervals.
    pub fn d_max(&self) -> f64 {
        self.sweep.map_or(self.d_min + 191.0 * self.interval, |(_, max)| max)
    }

    pub fn to_view(&self, width: usize, height: usize) -> Result<CameraView> {
        CameraView::new(self.intrinsic, self.extrinsic, width, height, (self.d_min, self.d_max()))
    }

    /// Camera file for a view whose range will be swept with `count`
    /// hypotheses, the first-stage resolution of the pipeline.
    pub fn from_view(view: &CameraView, count: usize) -> Result<CamFile> {
        if count < 2 {
            return Err(invalid("sweep count must be at least 2"));
        }
        let (d_min, d_max) = view.depth_range();
        Ok(CamFile {
            extrinsic: *view.pose(),
            intrinsic: *view.intrinsic(),
            d_min,
            interval: (d_max - d_min) / (count - 1) as f64,
            sweep: Some((count as f64, d_max)),
        })
    }
}

pub fn write_cam_file(cam: &CamFile) -> String {
    let mut out = String::from("extrinsic\n");
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| cam.extrinsic[(r, c)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.push_str("\nintrinsic\n");
    for r in 0..3 {
        let row: Vec<String> = (0..3).map(|c| cam.intrinsic[(r, c)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&cam.d_min.to_string());
    out.push(' ');
    out.push_str(&cam.interval.to_string());
    if let Some((count, max)) = cam.sweep {
        out.push(' ');
        out.push_str(&count.to_string());
        out.push(' ');
        out.push_str(&max.to_string());
    }
    out.push('\n');
    out
}

pub fn parse_cam_file(text: &str) -> Result<CamFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next_content = |what: &str| -> Result<(usize, &str)> {
        for (no, line) in lines.by_ref() {
            if !line.is_empty() {
                return Ok((no, line));
            }
        }
        Err(parse_err(text.lines().count() + 1, format!("missing {what}")))
    };
    let floats = |no: usize, line: &str, want: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(no, format!("expected numbers, got '{line}'")))?;
        if vals.len() != want {
            return Err(parse_err(no, format!("expected {want} numbers, got {}", vals.len())));
        }
        if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(no, format!("non-finite value {bad}")));
        }
        Ok(vals)
    };

    let (no, label) = next_content("extrinsic block")?;
    if label != "extrinsic" {
        return Err(parse_err(no, format!("expected 'extrinsic', got '{label}'")));
    }
    let mut extrinsic = Matrix4::zeros();
    for r in 0..4 {
        let (no, line) = next_content("extrinsic row")?;
        for (c, v) in floats(no, line, 4)?.into_iter().enumerate() {
            extrinsic[(r, c)] = v;
        }
    }
    let (no, label) = next_content("intrinsic block")?;
    if label != "intrinsic" {
        return Err(parse_err(no, format!("expected 'intrinsic', got '{label}'")));
    }
    let mut intrinsic = Matrix3::zeros();
    for r in 0..3 {
        let (no, line) = next_content("intrinsic row")?;
        for (c, v) in floats(no, line, 3)?.into_iter().enumerate() {
            intrinsic[(r, c)] = v;
        }
    }
    let (no, line) = next_content("depth line")?;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(no, format!("expected numbers, got '{line}'")))?;
    let cam = match vals[..] {
        [d_min, interval] => CamFile { extrinsic, intrinsic, d_min, interval, sweep: None },
        [d_min, interval, count, max] => {
            CamFile { extrinsic, intrinsic, d_min, interval, sweep: Some((count, max)) }
        }
        _ => {
            return Err(parse_err(
                no,
                format!("depth line holds 2 or 4 numbers, got {}", vals.len()),
            ))
        }
    };
    if let Some((no, line)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(no, format!("unexpected trailing content '{line}'")));
    }
    Ok(cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_number_depth_line_maps_directly() {
        let text = "extrinsic\n\
                    1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\n\
                    intrinsic\n\
                    100 0 32\n0 100 24\n0 0 1\n\n\
                    425.0 2.5\n";
        let cam = parse_cam_file(text).unwrap();
        assert_eq!(cam.extrinsic, Matrix4::identity());
        assert_eq!(cam.intrinsic[(0, 0)], 100.0);
        assert_eq!(cam.intrinsic[(0, 2)], 32.0);
        assert_eq!(cam.d_min, 425.0);
        assert_eq!(cam.interval, 2.5);
        assert_eq!(cam.sweep, None);
        assert_eq!(cam.d_max(), 425.0 + 191.0 * 2.5);
        let view = cam.to_view(64, 48).unwrap();
        assert_eq!(view.depth_range(), (425.0, 902.5));
    }

    #[test]
    fn round_trips_are_field_exact_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for i in 0..100 {
            let mut extrinsic = Matrix4::zeros();
            let mut intrinsic = Matrix3::zeros();
            for v in extrinsic.iter_mut().chain(intrinsic.iter_mut()) {
                *v = rng.gen_range(-1e3..1e3);
            }
            let cam = CamFile {
                extrinsic,
                intrinsic,
                d_min: rng.gen_range(1.0..500.0),
                interval: rng.gen_range(0.01..10.0),
                sweep: if i % 2 == 0 {
                    Some((rng.gen_range(2..256) as f64, rng.gen_range(500.0..1000.0)))
                } else {
                    None
                },
            };
            let text = write_cam_file(&cam);
            let back = parse_cam_file(&text).unwrap();
            assert_eq!(back, cam, "instance {i}");
            assert_eq!(write_cam_file(&back), text);
        }
    }

    #[test]
    fn view_conversion_inverts() {
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = -3.5;
        let k = Matrix3::new(115.0, 0.0, 31.5, 0.0, 115.0, 31.5, 0.0, 0.0, 1.0);
        let view = CameraView::new(k, pose, 64, 64, (425.0, 935.0)).unwrap();
        let cam = CamFile::from_view(&view, 48).unwrap();
        assert_eq!(cam.interval, (935.0 - 425.0) / 47.0);
        assert_eq!(cam.sweep, Some((48.0, 935.0)));
        let round = cam.to_view(64, 64).unwrap();
        assert_eq!(round, view);
        assert!(CamFile::from_view(&view, 1).is_err());
    }

    #[test]
    fn malformed_blocks_name_the_line() {
        let of = |text: &str| match parse_cam_file(text).unwrap_err() {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        };
        assert_eq!(of("external\n"), 1);
        assert_eq!(of("extrinsic\n1 0 0 0\n0 1 0\n"), 3);
        assert_eq!(of("extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 one\n"), 5);
        let good = "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\n\
                    intrinsic\n100 0 32\n0 100 24\n0 0 1\n\n";
        assert_eq!(of(&format!("{good}425.0 2.5 48\n")), 12);
        assert_eq!(of(&format!("{good}425.0 2.5\nleftover\n")), 13);
    }
}
