//! Source view ranking from sparse scene structure.
//!
//! Candidate source views are scored against a reference view by summing a
//! triangulation-angle weight over the sparse 3D points both cameras observe.
//! The weight peaks at a baseline angle wide enough to triangulate reliably
//! and decays for both narrow (ill-conditioned) and very wide (low overlap,
//! appearance drift) configurations.

use nalgebra::Vector3;

use crate::error::{invalid, Result};
use crate::geometry::CameraView;

/// Baseline angle (degrees) at which the covisibility weight peaks.
pub const BASELINE_ANGLE_DEG: f64 = 5.0;
/// Spread (degrees) on the narrow side of the peak.
pub const SIGMA_NARROW_DEG: f64 = 1.0;
/// Spread (degrees) on the wide side of the peak.
pub const SIGMA_WIDE_DEG: f64 = 10.0;

/// Sparse 3D points with per-point lists of observing view ids.
#[derive(Debug, Clone)]
pub struct SparseTrackSet {
    points: Vec<Vector3<f64>>,
    visibility: Vec<Vec<usize>>,
}

impl SparseTrackSet {
    /// Build a track set. Every point must be observed by at least two
    /// distinct views, and every view id must be below `num_views`.
    pub fn new(
        points: Vec<Vector3<f64>>,
        visibility: Vec<Vec<usize>>,
        num_views: usize,
    ) -> Result<Self> {
        if points.len() != visibility.len() {
            return Err(invalid(format!(
                "{} points but {} visibility lists",
                points.len(),
                visibility.len()
            )));
        }
        for (i, (p, vis)) in points.iter().zip(&visibility).enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("track point {i} is not finite")));
            }
            let mut seen = vis.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() < 2 {
                return Err(invalid(format!(
                    "track point {i} is observed by fewer than two distinct views"
                )));
            }
            if let Some(&id) = seen.iter().find(|&&id| id >= num_views) {
                return Err(invalid(format!(
                    "track point {i} references view {id}, but only {num_views} views exist"
                )));
            }
        }
        Ok(Self { points, visibility })
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

    pub fn observers(&self, i: usize) -> &[usize] {
        &self.visibility[i]
    }

    /// Indices of points observed by both views.
    pub fn shared_points(&self, a: usize, b: usize) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.visibility[i].contains(&a) && self.visibility[i].contains(&b))
            .collect()
    }
}

/// Piecewise Gaussian weight of a triangulation angle given in degrees.
pub fn angle_weight(theta_deg: f64) -> f64 {
    let sigma = if theta_deg <= BASELINE_ANGLE_DEG {
        SIGMA_NARROW_DEG
    } else {
        SIGMA_WIDE_DEG
    };
    let d = theta_deg - BASELINE_ANGLE_DEG;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Angle in degrees subtended at `point` by the two camera centers.
fn triangulation_angle_deg(a: &CameraView, b: &CameraView, point: &Vector3<f64>) -> f64 {
    let ra = a.center() - point;
    let rb = b.center() - point;
    let na = ra.norm();
    let nb = rb.norm();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    let cos = (ra.dot(&rb) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Sum of triangulation-angle weights over the points both views observe.
/// Zero when the views share no points.
pub fn covisibility_score(
    views: &[CameraView],
    tracks: &SparseTrackSet,
    reference: usize,
    source: usize,
) -> Result<f64> {
    if reference >= views.len() || source >= views.len() {
        return Err(invalid(format!(
            "view pair ({reference}, {source}) out of range for {} views",
            views.len()
        )));
    }
    if reference == source {
        return Err(invalid("reference and source must be distinct views"));
    }
    let mut score = 0.0;
    for i in tracks.shared_points(reference, source) {
        let theta = triangulation_angle_deg(&views[reference], &views[source], tracks.point(i));
        score += angle_weight(theta);
    }
    Ok(score)
}

/// Candidate source views for one reference, sorted by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRanking {
    pub reference: usize,
    /// (view id, covisibility score), best first. Ties break toward the
    /// lower view id so rankings are independent of candidate order.
    pub sources: Vec<(usize, f64)>,
}

/// Score every candidate against the reference and sort best-first.
pub fn rank_sources(
    views: &[CameraView],
    tracks: &SparseTrackSet,
    reference: usize,
    candidates: &[usize],
) -> Result<ViewRanking> {
    let mut seen = candidates.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != candidates.len() {
        return Err(invalid("candidate list contains duplicate view ids"));
    }
    let mut sources = Vec::with_capacity(candidates.len());
    for &c in candidates {
        sources.push((c, covisibility_score(views, tracks, reference, c)?));
    }
    sources.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ViewRanking { reference, sources })
}

/// Best-scoring candidate; the lowest view id wins ties.
pub fn select_best_source(
    views: &[CameraView],
    tracks: &SparseTrackSet,
    reference: usize,
    candidates: &[usize],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(invalid("no candidate source views"));
    }
    Ok(rank_sources(views, tracks, reference, candidates)?.sources[0].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::look_at_pose;
    use nalgebra::Matrix3;

    /// Cameras on a circle of radius 10 around the origin, all aimed at it,
    /// so a track point at the origin sees the angle between placement
    /// angles exactly.
    fn ring_views(angles_deg: &[f64]) -> Vec<CameraView> {
        let k = Matrix3::new(100.0, 0.0, 31.5, 0.0, 100.0, 31.5, 0.0, 0.0, 1.0);
        angles_deg
            .iter()
            .map(|a| {
                let r = a.to_radians();
                let eye = Vector3::new(10.0 * r.sin(), 0.0, -10.0 * r.cos());
                let pose =
                    look_at_pose(&eye, &Vector3::zeros(), &Vector3::new(0.0, 1.0, 0.0)).unwrap();
                CameraView::new(k, pose, 64, 64, (1.0, 100.0)).unwrap()
            })
            .collect()
    }

    fn all_seeing_tracks(points: Vec<Vector3<f64>>, num_views: usize) -> SparseTrackSet {
        let vis = vec![(0..num_views).collect::<Vec<_>>(); points.len()];
        SparseTrackSet::new(points, vis, num_views).unwrap()
    }

    #[test]
    fn weight_peaks_at_baseline_angle() {
        assert!((angle_weight(BASELINE_ANGLE_DEG) - 1.0).abs() < 1e-15);
        // One narrow-side sigma and one wide-side sigma both give e^{-1/2}.
        let half = (-0.5f64).exp();
        assert!((angle_weight(4.0) - half).abs() < 1e-15);
        assert!((angle_weight(15.0) - half).abs() < 1e-15);
        // The narrow side falls off much faster than the wide side.
        assert!(angle_weight(2.0) < angle_weight(8.0));
        assert!(angle_weight(0.0) < 1e-5);
    }

    #[test]
    fn score_counts_points_at_peak_angle() {
        let views = ring_views(&[-2.5, 2.5]);
        let points = vec![Vector3::zeros(); 3];
        let tracks = all_seeing_tracks(points, 2);
        let score = covisibility_score(&views, &tracks, 0, 1).unwrap();
        assert!((score - 3.0).abs() < 1e-9, "score {score}");
    }

    #[test]
    fn score_adds_off_peak_weight() {
        // Three points at the ring centre see the pair at 5 degrees. A
        // fourth point is moved along the optical axis until the same pair
        // subtends 15 degrees: half the chord over the distance to the
        // chord midpoint must tan to 7.5 degrees.
        let views = ring_views(&[-2.5, 2.5]);
        let half_chord = 10.0 * 2.5f64.to_radians().sin();
        let mid_z = -10.0 * 2.5f64.to_radians().cos();
        let zp = mid_z + half_chord / 7.5f64.to_radians().tan();
        let mut points = vec![Vector3::zeros(); 3];
        points.push(Vector3::new(0.0, 0.0, zp));
        let tracks = all_seeing_tracks(points, 2);
        let score = covisibility_score(&views, &tracks, 0, 1).unwrap();
        assert!((score - (3.0 + (-0.5f64).exp())).abs() < 1e-9, "score {score}");
    }

    #[test]
    fn colocated_cameras_score_near_zero() {
        let views = ring_views(&[1.0, 1.0]);
        let tracks = all_seeing_tracks(vec![Vector3::zeros(); 5], 2);
        let score = covisibility_score(&views, &tracks, 0, 1).unwrap();
        assert!(score < 1e-4, "score {score}");
    }

    #[test]
    fn disjoint_visibility_scores_zero() {
        let views = ring_views(&[-2.5, 2.5, 7.5]);
        let points = vec![Vector3::zeros(); 2];
        let vis = vec![vec![0, 1], vec![0, 1]];
        let tracks = SparseTrackSet::new(points, vis, 3).unwrap();
        assert_eq!(covisibility_score(&views, &tracks, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_id() {
        let views = ring_views(&[-2.5, 2.5, 22.5, -27.5, 90.0]);
        // Every view sees the single track point at the origin.
        let tracks = all_seeing_tracks(vec![Vector3::zeros()], 5);
        let ranking = rank_sources(&views, &tracks, 0, &[4, 3, 2, 1]).unwrap();
        // View 1 sits at the 5-degree peak; 2 and 3 are both 25 degrees away
        // (same score, id 2 must come first); 4 is far off-peak.
        let ids: Vec<usize> = ranking.sources.iter().map(|s| s.0).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        assert!(ranking.sources[0].1 > ranking.sources[1].1);
        assert!((ranking.sources[1].1 - ranking.sources[2].1).abs() < 1e-12);

        // Candidate order must not matter.
        let swapped = rank_sources(&views, &tracks, 0, &[1, 2, 3, 4]).unwrap();
        let swapped_ids: Vec<usize> = swapped.sources.iter().map(|s| s.0).collect();
        assert_eq!(ids, swapped_ids);
        assert_eq!(select_best_source(&views, &tracks, 0, &[3, 1, 2]).unwrap(), 1);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let views = ring_views(&[-2.5, 2.5]);
        let tracks = all_seeing_tracks(vec![Vector3::zeros()], 2);
        assert!(covisibility_score(&views, &tracks, 0, 0).is_err());
        assert!(covisibility_score(&views, &tracks, 0, 7).is_err());
        assert!(rank_sources(&views, &tracks, 0, &[1, 1]).is_err());
        assert!(select_best_source(&views, &tracks, 0, &[]).is_err());
        // Single-view tracks and out-of-range ids are rejected up front.
        assert!(SparseTrackSet::new(vec![Vector3::zeros()], vec![vec![0]], 2).is_err());
        assert!(SparseTrackSet::new(vec![Vector3::zeros()], vec![vec![0, 5]], 2).is_err());
        assert!(SparseTrackSet::new(vec![Vector3::zeros()], vec![], 2).is_err());
    }
}
