//! Consistency-filtered fusion of per-view depth maps into one point cloud,
//! plus capped nearest-neighbour cloud metrics.
//!
//! A reference pixel survives fusion when enough other views agree with it:
//! the pixel's 3D point must land on a valid source pixel whose own stored
//! depth matches the predicted depth and whose own 3D point reprojects back
//! near the reference pixel. Agreeing estimates are averaged and the source
//! pixels are consumed so a surface sample enters the cloud once.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::CameraView;
use crate::imaging::{Image, ValidMask};
use crate::plane_sweep::DepthMap;

/// 3D points with a grayscale color and the number of views that agreed.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    colors: Vec<f64>,
    support: Vec<u32>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(points: Vec<Vector3<f64>>, colors: Vec<f64>, support: Vec<u32>) -> Result<Self> {
        if points.len() != colors.len() || points.len() != support.len() {
            return Err(invalid("point cloud part lengths disagree"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("point {i} is not finite")));
            }
            if !(colors[i].is_finite() && (0.0..=1.0).contains(&colors[i])) {
                return Err(invalid(format!("color {i} must lie in [0, 1]")));
            }
        }
        Ok(Self { points, colors, support })
    }

    pub fn push(&mut self, point: Vector3<f64>, color: f64, support: u32) {
        self.points.push(point);
        self.colors.push(color);
        self.support.push(support);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    pub fn color(&self, i: usize) -> f64 {
        self.colors[i]
    }

    pub fn support(&self, i: usize) -> u32 {
        self.support[i]
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
}

/// Thresholds for cross-view depth agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Maximum reprojection distance in reference pixels.
    pub max_reproj_px: f64,
    /// Maximum relative difference between the predicted depth in a source
    /// view and the depth the source actually stores there.
    pub max_depth_rel: f64,
    /// Minimum number of views, counting the reference itself, that must
    /// agree before a pixel enters the cloud. 1 keeps every valid pixel.
    pub min_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { max_reproj_px: 1.0, max_depth_rel: 0.01, min_views: 3 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_reproj_px > 0.0 && self.max_reproj_px.is_finite()) {
            return Err(invalid("max_reproj_px must be positive"));
        }
        if !(self.max_depth_rel > 0.0 && self.max_depth_rel.is_finite()) {
            return Err(invalid("max_depth_rel must be positive"));
        }
        if self.min_views == 0 {
            return Err(invalid("min_views must be at least 1"));
        }
        Ok(())
    }
}

/// A source pixel that agrees with a reference estimate.
struct Partner {
    view: usize,
    px: usize,
    py: usize,
    /// The source's own 3D estimate for the matched pixel.
    point: Vector3<f64>,
}

/// Source views whose depth maps agree with the reference pixel (x, y),
/// in ascending view id order. The reference itself is not listed.
pub fn consistent_views(
    views: &[CameraView],
    depths: &[DepthMap],
    reference: usize,
    x: usize,
    y: usize,
    cfg: &FusionConfig,
) -> Result<Vec<usize>> {
    validate_fusion_inputs(views, depths, cfg)?;
    if reference >= views.len() {
        return Err(invalid(format!("reference {reference} out of range")));
    }
    if x >= depths[reference].width() || y >= depths[reference].height() {
        return Err(invalid(format!("pixel ({x}, {y}) out of range")));
    }
    Ok(partners_at(views, depths, reference, x, y, cfg).iter().map(|p| p.view).collect())
}

fn partners_at(
    views: &[CameraView],
    depths: &[DepthMap],
    reference: usize,
    x: usize,
    y: usize,
    cfg: &FusionConfig,
) -> Vec<Partner> {
    let mut partners = Vec::new();
    let p = Vector2::new(x as f64, y as f64);
    let Some(d) = depths[reference].get(x, y) else {
        return partners;
    };
    let world = match views[reference].back_project(&p, d) {
        Ok(w) => w,
        Err(_) => return partners,
    };
    for (s, view) in views.iter().enumerate() {
        if s == reference {
            continue;
        }
        let warp = view.project(&world);
        if !warp.is_valid() || !view.contains(&warp.coords) {
            continue;
        }
        // Nearest source pixel; rounding stays in bounds because the
        // continuous coordinates are inside the pixel hull.
        let qx = warp.coords.x.round() as usize;
        let qy = warp.coords.y.round() as usize;
        let Some(d_src) = depths[s].get(qx, qy) else {
            continue;
        };
        if (d_src - warp.depth).abs() > cfg.max_depth_rel * warp.depth {
            continue;
        }
        let src_point =
            match view.back_project(&Vector2::new(qx as f64, qy as f64), d_src) {
                Ok(w) => w,
                Err(_) => continue,
            };
        let back = views[reference].project(&src_point);
        if !back.is_valid() || (back.coords - p).norm() > cfg.max_reproj_px {
            continue;
        }
        partners.push(Partner { view: s, px: qx, py: qy, point: src_point });
    }
    partners
}

fn validate_fusion_inputs(
    views: &[CameraView],
    depths: &[DepthMap],
    cfg: &FusionConfig,
) -> Result<()> {
    cfg.validate()?;
    if views.is_empty() || views.len() != depths.len() {
        return Err(invalid("need one depth map per view"));
    }
    for (i, (v, d)) in views.iter().zip(depths).enumerate() {
        if v.width() != d.width() || v.height() != d.height() {
            return Err(invalid(format!("view {i} and its depth map disagree on shape")));
        }
    }
    Ok(())
}

/// Fuse per-view depth maps into a single cloud.
///
/// Views seed points in ascending id order. Each unconsumed valid pixel
/// gathers agreeing source pixels; when at least `min_views` views agree
/// (reference included) the mutual 3D estimates are averaged into one point
/// colored by the reference intensity, and the partner pixels are consumed
/// so they cannot seed duplicates.
pub fn fuse_point_cloud(
    views: &[CameraView],
    images: &[Image],
    depths: &[DepthMap],
    cfg: &FusionConfig,
) -> Result<PointCloud> {
    validate_fusion_inputs(views, depths, cfg)?;
    if images.len() != views.len() {
        return Err(invalid("need one image per view"));
    }
    for (i, (v, img)) in views.iter().zip(images).enumerate() {
        if v.width() != img.width() || v.height() != img.height() {
            return Err(invalid(format!("view {i} and its image disagree on shape")));
        }
    }

    let mut consumed: Vec<ValidMask> =
        views.iter().map(|v| ValidMask::filled(v.width(), v.height(), false)).collect();
    let mut cloud = PointCloud::new();
    for r in 0..views.len() {
        for y in 0..views[r].height() {
            for x in 0..views[r].width() {
                if consumed[r].get(x, y) {
                    continue;
                }
                let Some(d) = depths[r].get(x, y) else {
                    continue;
                };
                let partners = partners_at(views, depths, r, x, y, cfg);
                if 1 + partners.len() < cfg.min_views {
                    continue;
                }
                let p = Vector2::new(x as f64, y as f64);
                let Ok(own) = views[r].back_project(&p, d) else {
                    continue;
                };
                let mut mean = own;
                for partner in &partners {
                    mean += partner.point;
                    consumed[partner.view].set(partner.px, partner.py, true);
                }
                mean /= (1 + partners.len()) as f64;
                consumed[r].set(x, y, true);
                let img = &images[r];
                let color = (0..img.channels()).map(|c| img.get(c, x, y)).sum::<f64>()
                    / img.channels() as f64;
                cloud.push(mean, color.clamp(0.0, 1.0), (1 + partners.len()) as u32);
            }
        }
    }
    Ok(cloud)
}

/// Capped symmetric cloud distances: `accuracy` is the mean capped distance
/// from estimated points to the reference surface cloud, `completeness` the
/// mean capped distance from reference points to the estimate.
#[derive(Debug, Clone, Copy)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completeness: f64,
}

impl CloudMetrics {
    /// Mean of accuracy and completeness, the usual single-number summary.
    pub fn overall(&self) -> f64 {
        0.5 * (self.accuracy + self.completeness)
    }
}

/// Uniform grid over one cloud with cell size equal to the cap, so any
/// neighbour within the cap lies in one of the 27 surrounding cells.
struct GridIndex<'a> {
    cell: f64,
    origin: Vector3<f64>,
    map: HashMap<(i64, i64, i64), Vec<usize>>,
    points: &'a [Vector3<f64>],
}

impl<'a> GridIndex<'a> {
    fn build(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let origin = points
            .iter()
            .fold(Vector3::repeat(f64::INFINITY), |acc, p| acc.inf(p));
        let mut map: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(&(p - origin), cell)).or_default().push(i);
        }
        Self { cell, origin, map, points }
    }

    fn key(rel: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (rel.x / cell).floor() as i64,
            (rel.y / cell).floor() as i64,
            (rel.z / cell).floor() as i64,
        )
    }

    /// Distance from `q` to the nearest indexed point, capped at the cell size.
    fn capped_distance(&self, q: &Vector3<f64>) -> f64 {
        let (kx, ky, kz) = Self::key(&(q - self.origin), self.cell);
        let mut best = self.cell;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.map.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in ids {
                            best = best.min((self.points[i] - q).norm());
                        }
                    }
                }
            }
        }
        best
    }
}

/// Compare an estimated cloud against a reference surface sampling.
/// Distances are capped so a single stray point cannot dominate the means.
pub fn evaluate_cloud(
    estimate: &PointCloud,
    reference: &PointCloud,
    cap: f64,
) -> Result<CloudMetrics> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(invalid("distance cap must be positive"));
    }
    if reference.is_empty() {
        return Err(invalid("reference cloud is empty"));
    }
    let completeness;
    let accuracy;
    if estimate.is_empty() {
        accuracy = 0.0;
        completeness = cap;
    } else {
        let ref_index = GridIndex::build(reference.points(), cap);
        accuracy = estimate.points().iter().map(|p| ref_index.capped_distance(p)).sum::<f64>()
            / estimate.len() as f64;
        let est_index = GridIndex::build(estimate.points(), cap);
        completeness = reference.points().iter().map(|p| est_index.capped_distance(p)).sum::<f64>()
            / reference.len() as f64;
    }
    Ok(CloudMetrics { accuracy, completeness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Matrix4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rectified_view(baseline_x: f64, size: usize, range: (f64, f64)) -> CameraView {
        let c = (size as f64 - 1.0) / 2.0;
        let k = Matrix3::new(100.0, 0.0, c, 0.0, 100.0, c, 0.0, 0.0, 1.0);
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = -baseline_x;
        CameraView::new(k, pose, size, size, range).unwrap()
    }

    fn plane_cloud(n: usize, z: f64) -> PointCloud {
        let mut cloud = PointCloud::new();
        for i in 0..n {
            for j in 0..n {
                cloud.push(Vector3::new(i as f64, j as f64, z), 0.5, 1);
            }
        }
        cloud
    }

    fn two_view_plane(size: usize, baseline: f64, z: f64) -> (Vec<CameraView>, Vec<Image>, Vec<DepthMap>) {
        let range = (5.0, 20.0);
        let views = vec![rectified_view(0.0, size, range), rectified_view(baseline, size, range)];
        let images = vec![
            Image::from_fn(1, size, size, |_, x, y| ((x + y) % 7) as f64 / 10.0),
            Image::from_fn(1, size, size, |_, x, y| ((x + y) % 7) as f64 / 10.0),
        ];
        let depths = vec![
            DepthMap::constant(size, size, z, range).unwrap(),
            DepthMap::constant(size, size, z, range).unwrap(),
        ];
        (views, images, depths)
    }

    #[test]
    fn identical_clouds_score_zero() {
        let a = plane_cloud(6, 2.0);
        let m = evaluate_cloud(&a, &a, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.completeness, 0.0);
    }

    #[test]
    fn translation_shows_up_as_distance() {
        // Points a unit apart, moved by 0.05: each point's nearest reference
        // neighbour is its own original, so both means equal the shift.
        let a = plane_cloud(6, 2.0);
        let mut b = PointCloud::new();
        for p in a.points() {
            b.push(p + Vector3::new(0.05, 0.0, 0.0), 0.5, 1);
        }
        let m = evaluate_cloud(&b, &a, 0.5).unwrap();
        assert!((m.accuracy - 0.05).abs() < 1e-12, "accuracy {}", m.accuracy);
        assert!((m.completeness - 0.05).abs() < 1e-12);
    }

    #[test]
    fn distances_are_capped() {
        let a = plane_cloud(3, 0.0);
        let mut b = PointCloud::new();
        b.push(Vector3::new(500.0, 500.0, 500.0), 0.5, 1);
        let m = evaluate_cloud(&b, &a, 0.25).unwrap();
        assert_eq!(m.accuracy, 0.25);
        assert_eq!(m.completeness, 0.25);
        // Empty estimate: nothing to penalise, nothing recovered.
        let m = evaluate_cloud(&PointCloud::new(), &a, 0.25).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.completeness, 0.25);
        assert!(evaluate_cloud(&a, &PointCloud::new(), 0.25).is_err());
        assert!(evaluate_cloud(&a, &a, 0.0).is_err());
    }

    #[test]
    fn grid_index_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut a = PointCloud::new();
        let mut b = PointCloud::new();
        for _ in 0..180 {
            a.push(
                Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                0.5,
                1,
            );
        }
        for _ in 0..140 {
            b.push(
                Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                0.5,
                1,
            );
        }
        let cap = 0.3;
        let m = evaluate_cloud(&a, &b, cap).unwrap();
        let brute = |from: &PointCloud, to: &PointCloud| {
            from.points()
                .iter()
                .map(|p| {
                    to.points()
                        .iter()
                        .map(|q| (p - q).norm())
                        .fold(f64::INFINITY, f64::min)
                        .min(cap)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        assert!((m.accuracy - brute(&a, &b)).abs() < 1e-12);
        assert!((m.completeness - brute(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn agreeing_views_fuse_once() {
        // Two rectified views of a fronto-parallel plane at z = 10 with a
        // 2-pixel disparity. View 0 seeds every pixel whose warp lands in
        // view 1 and consumes the partner; view 1 has nothing left to seed.
        let (views, images, depths) = two_view_plane(8, 0.2, 10.0);
        let cfg = FusionConfig { min_views: 2, ..FusionConfig::default() };
        let report = consistent_views(&views, &depths, 0, 4, 4, &cfg).unwrap();
        assert_eq!(report, vec![1]);
        let cloud = fuse_point_cloud(&views, &images, &depths, &cfg).unwrap();
        assert_eq!(cloud.len(), 6 * 8);
        for i in 0..cloud.len() {
            assert_eq!(cloud.support(i), 2);
            assert!((cloud.point(i).z - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn disagreeing_depth_drops_the_pixel() {
        let (views, images, mut depths) = two_view_plane(8, 0.2, 10.0);
        depths[1].set(4, 4, 10.5); // 5% off: beyond the 1% gate
        let cfg = FusionConfig { min_views: 2, ..FusionConfig::default() };
        let report = consistent_views(&views, &depths, 0, 6, 4, &cfg).unwrap();
        assert!(report.is_empty());
        let cloud = fuse_point_cloud(&views, &images, &depths, &cfg).unwrap();
        assert_eq!(cloud.len(), 6 * 8 - 1);
    }

    #[test]
    fn reprojection_gate_rejects_half_pixel_offsets() {
        // A 2.5-pixel disparity rounds to the wrong lattice site; with the
        // reprojection tolerance below half a pixel nothing fuses.
        let (views, images, depths) = two_view_plane(8, 0.25, 10.0);
        let cfg = FusionConfig { min_views: 2, max_reproj_px: 0.2, ..FusionConfig::default() };
        let cloud = fuse_point_cloud(&views, &images, &depths, &cfg).unwrap();
        assert!(cloud.is_empty());
        // The relaxed default tolerance accepts the same geometry.
        let cfg = FusionConfig { min_views: 2, ..FusionConfig::default() };
        let cloud = fuse_point_cloud(&views, &images, &depths, &cfg).unwrap();
        assert!(!cloud.is_empty());
    }

    #[test]
    fn min_views_one_keeps_every_valid_pixel() {
        let (views, images, depths) = two_view_plane(8, 0.2, 10.0);
        let cfg = FusionConfig { min_views: 1, ..FusionConfig::default() };
        let cloud = fuse_point_cloud(&views, &images, &depths, &cfg).unwrap();
        // View 0 seeds all 64 pixels; view 1 keeps only the 16 pixels whose
        // counterpart lies outside view 0.
        assert_eq!(cloud.len(), 64 + 16);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (views, images, depths) = two_view_plane(8, 0.2, 10.0);
        let cfg = FusionConfig::default();
        assert!(fuse_point_cloud(&views[..1], &images, &depths, &cfg).is_err());
        assert!(fuse_point_cloud(&views, &images[..1], &depths, &cfg).is_err());
        let bad = FusionConfig { min_views: 0, ..FusionConfig::default() };
        assert!(fuse_point_cloud(&views, &images, &depths, &bad).is_err());
        assert!(consistent_views(&views, &depths, 5, 0, 0, &cfg).is_err());
        assert!(consistent_views(&views, &depths, 0, 99, 0, &cfg).is_err());
        assert!(PointCloud::from_parts(vec![Vector3::zeros()], vec![], vec![1]).is_err());
        assert!(PointCloud::from_parts(vec![Vector3::zeros()], vec![2.0], vec![1]).is_err());
    }
}
