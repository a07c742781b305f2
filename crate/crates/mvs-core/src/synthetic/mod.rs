//! Procedural multi-view scenes with analytically known geometry.
//!
//! Every pixel of every rendered image comes from an exact raycast against
//! parametric surfaces shaded by a deterministic world-space texture, so
//! ground-truth depth maps, sparse tracks and a reference point cloud fall
//! out of the same arithmetic the estimators are later judged against. The
//! same scene can also be shaded at continuous image coordinates, which
//! gives tests an oracle for warped and resampled views.

mod noise;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fusion::PointCloud;
use crate::geometry::{look_at_pose, CameraView};
use crate::imaging::{Image, ValidMask};
use crate::plane_sweep::DepthMap;
use crate::view_selection::SparseTrackSet;

/// Albedo texture parameters for one surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Texture {
    /// Mean intensity.
    pub base: f64,
    /// Peak-to-peak amplitude around the mean.
    pub contrast: f64,
    /// World units per noise cell.
    pub scale: f64,
    pub octaves: usize,
    /// Decorrelates this surface's pattern from the others.
    pub seed_offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Surface {
    /// Finite rectangle: `origin` is its centre, extents are half-widths
    /// along the two tangent axes derived from the normal.
    Plane {
        origin: [f64; 3],
        normal: [f64; 3],
        half_u: f64,
        half_v: f64,
        texture: Texture,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CameraRig {
    /// Cameras on a horizontal arc of the given radius around `target`, all
    /// aimed at it, with per-camera height offsets for vertical baselines.
    Arc {
        target: [f64; 3],
        radius: f64,
        angles_deg: Vec<f64>,
        heights: Vec<f64>,
    },
    /// Cameras sharing the identity orientation, translated by `offsets`.
    Linear { offsets: Vec<[f64; 3]> },
}

impl CameraRig {
    pub fn camera_count(&self) -> usize {
        match self {
            CameraRig::Arc { angles_deg, .. } => angles_deg.len(),
            CameraRig::Linear { offsets } => offsets.len(),
        }
    }
}

/// Full description of a generated scene; serializable so a scene is
/// reproducible from its spec alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub depth_range: (f64, f64),
    pub rig: CameraRig,
    pub surfaces: Vec<Surface>,
    /// Per-view brightness gains are drawn uniformly from this interval.
    pub gain_range: (f64, f64),
    /// Number of sparse tracks to sample for view selection.
    pub track_count: usize,
    /// A track must be visible in at least this many views.
    pub min_track_views: usize,
    /// Views that must see a pixel for it to enter the ground-truth cloud;
    /// 0 means all views.
    pub gt_visibility: usize,
    /// Local intensity variance below which a pixel counts as weakly
    /// textured.
    pub weak_variance_threshold: f64,
}

impl SceneSpec {
    /// Five cameras on a 10-degree arc looking at a tilted, strongly
    /// textured plane partially occluded by a sphere.
    pub fn textured_arc(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            width: 64,
            height: 64,
            focal: 230.0,
            depth_range: (425.0, 935.0),
            rig: CameraRig::Arc {
                target: [0.0, 0.0, 640.0],
                radius: 640.0,
                angles_deg: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
                heights: vec![18.0, -18.0, 0.0, 18.0, -18.0],
            },
            surfaces: vec![
                Surface::Plane {
                    origin: [0.0, 0.0, 640.0],
                    normal: [0.15, 0.1, -1.0],
                    half_u: 70.0,
                    half_v: 70.0,
                    texture: Texture { base: 0.5, contrast: 0.9, scale: 40.0, octaves: 3, seed_offset: 1 },
                },
                Surface::Sphere {
                    center: [25.0, 18.0, 560.0],
                    radius: 32.0,
                    texture: Texture { base: 0.5, contrast: 0.9, scale: 30.0, octaves: 2, seed_offset: 2 },
                },
                // Distant textured backdrop, outside the depth range: rays
                // that miss the foreground land on real texture instead of
                // a constant, so wrong hypotheses cannot fake consistency
                // against a flat background.
                Surface::Plane {
                    origin: [0.0, 0.0, 4200.0],
                    normal: [0.0, 0.0, -1.0],
                    half_u: 4000.0,
                    half_v: 4000.0,
                    texture: Texture { base: 0.5, contrast: 0.9, scale: 150.0, octaves: 3, seed_offset: 9 },
                },
            ],
            gain_range: (1.0, 1.0),
            track_count: 120,
            min_track_views: 2,
            gt_visibility: 0,
            // Sits between the local variance of the 2% contrast mode
            // (~1e-7) and the flattest neighbourhoods of full contrast
            // (~1e-5 near texture extrema).
            weak_variance_threshold: 1e-6,
        }
    }

    /// The arc rig over one continuous tilted plane whose right half has
    /// its texture contrast cut to 2%, separated from the strong half by a
    /// thin unobserved gap.
    pub fn weak_texture(seed: u64) -> SceneSpec {
        let mut spec = SceneSpec::textured_arc(seed);
        // Halves of one common plane z = 640 + 0.12x + 0.08y.
        let normal = [0.12, 0.08, -1.0];
        let strong = Texture { base: 0.5, contrast: 0.9, scale: 40.0, octaves: 3, seed_offset: 1 };
        let weak = Texture { contrast: 0.02, seed_offset: 2, ..strong.clone() };
        spec.surfaces = vec![
            Surface::Plane {
                origin: [-36.0, 0.0, 640.0 - 0.12 * 36.0],
                normal,
                half_u: 33.0,
                half_v: 66.0,
                texture: strong,
            },
            Surface::Plane {
                origin: [36.0, 0.0, 640.0 + 0.12 * 36.0],
                normal,
                half_u: 33.0,
                half_v: 66.0,
                texture: weak,
            },
            Surface::Plane {
                origin: [0.0, 0.0, 4200.0],
                normal: [0.0, 0.0, -1.0],
                half_u: 4000.0,
                half_v: 4000.0,
                texture: Texture { base: 0.5, contrast: 0.9, scale: 150.0, octaves: 3, seed_offset: 9 },
            },
        ];
        spec
    }

    /// Purely translated cameras over two fronto-parallel planes placed so
    /// every warp between neighbouring views is an integer pixel shift
    /// (disparities of exactly 5 and 6 pixels per 30-unit baseline). On
    /// this scene cross-view identities hold to rounding error, not merely
    /// to interpolation accuracy.
    pub fn rectified_planes(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            width: 64,
            height: 64,
            focal: 100.0,
            depth_range: (425.0, 935.0),
            rig: CameraRig::Linear {
                offsets: vec![[0.0, 0.0, 0.0], [30.0, 0.0, 0.0], [60.0, 0.0, 0.0], [90.0, 0.0, 0.0]],
            },
            surfaces: vec![
                Surface::Plane {
                    origin: [-101.0, 0.0, 600.0],
                    normal: [0.0, 0.0, -1.0],
                    half_u: 89.0,
                    half_v: 189.0,
                    texture: Texture { base: 0.5, contrast: 0.9, scale: 95.0, octaves: 1, seed_offset: 1 },
                },
                Surface::Plane {
                    origin: [101.0, 0.0, 500.0],
                    normal: [0.0, 0.0, -1.0],
                    half_u: 89.0,
                    half_v: 189.0,
                    texture: Texture { base: 0.5, contrast: 0.9, scale: 95.0, octaves: 1, seed_offset: 2 },
                },
            ],
            gain_range: (1.0, 1.0),
            track_count: 80,
            min_track_views: 2,
            gt_visibility: 0,
            weak_variance_threshold: 1e-6,
        }
    }

    /// Add a small fronto-parallel card in front of the main geometry to
    /// create occlusion boundaries.
    pub fn with_occluder(mut self) -> SceneSpec {
        let offset = self.surfaces.len() as u64 + 1;
        self.surfaces.push(Surface::Plane {
            origin: [-20.0, -15.0, 505.0],
            normal: [0.0, 0.0, -1.0],
            half_u: 14.0,
            half_v: 14.0,
            texture: Texture { base: 0.5, contrast: 0.9, scale: 25.0, octaves: 2, seed_offset: offset },
        });
        self
    }

    /// Draw per-view brightness gains from [lo, hi].
    pub fn with_gains(mut self, lo: f64, hi: f64) -> SceneSpec {
        self.gain_range = (lo, hi);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(invalid("scene images must be at least 2x2"));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(invalid("focal length must be positive"));
        }
        if !(self.depth_range.0 > 0.0 && self.depth_range.1 > self.depth_range.0) {
            return Err(invalid("depth range must satisfy 0 < min < max"));
        }
        let cams = self.rig.camera_count();
        if cams < 2 {
            return Err(invalid("need at least two cameras"));
        }
        if let CameraRig::Arc { angles_deg, heights, .. } = &self.rig {
            if angles_deg.len() != heights.len() {
                return Err(invalid("arc rig angle and height lists must match"));
            }
        }
        if self.surfaces.is_empty() {
            return Err(invalid("scene needs at least one surface"));
        }
        if self.track_count == 0 {
            return Err(invalid("need at least one track"));
        }
        if self.min_track_views < 2 || self.min_track_views > cams {
            return Err(invalid("min_track_views must lie in [2, camera count]"));
        }
        if self.gt_visibility > cams {
            return Err(invalid("gt_visibility exceeds the camera count"));
        }
        if !(self.gain_range.0 > 0.0 && self.gain_range.1 >= self.gain_range.0) {
            return Err(invalid("gain range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// Plane tangent frame; u and v complete the normal to an orthonormal basis.
#[derive(Debug, Clone)]
struct Frame {
    origin: Vector3<f64>,
    normal: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    half_u: f64,
    half_v: f64,
}

#[derive(Debug, Clone)]
enum Shape {
    Plane(Frame),
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Debug, Clone)]
struct CompiledSurface {
    shape: Shape,
    texture: Texture,
}

#[derive(Debug, Clone)]
struct Hit {
    /// Distance in units of the (unnormalized) ray direction.
    t: f64,
    surface: usize,
    point: Vector3<f64>,
}

/// Raycastable form of the surface list.
#[derive(Debug, Clone)]
struct Scene {
    surfaces: Vec<CompiledSurface>,
    seed: u64,
}

const MIN_HIT_T: f64 = 1e-9;

impl Scene {
    fn compile(spec: &SceneSpec) -> Result<Scene> {
        let mut surfaces = Vec::with_capacity(spec.surfaces.len());
        for s in &spec.surfaces {
            let compiled = match s {
                Surface::Plane { origin, normal, half_u, half_v, texture } => {
                    let n = Vector3::from(*normal);
                    if n.norm() < 1e-12 {
                        return Err(invalid("plane normal must be nonzero"));
                    }
                    if !(*half_u > 0.0 && *half_v > 0.0) {
                        return Err(invalid("plane extents must be positive"));
                    }
                    let n = n.normalize();
                    // Tangent u from the world axis least aligned with n.
                    let hint = if n.y.abs() < 0.9 {
                        Vector3::new(0.0, 1.0, 0.0)
                    } else {
                        Vector3::new(1.0, 0.0, 0.0)
                    };
                    let u = hint.cross(&n).normalize();
                    let v = n.cross(&u);
                    CompiledSurface {
                        shape: Shape::Plane(Frame {
                            origin: Vector3::from(*origin),
                            normal: n,
                            u,
                            v,
                            half_u: *half_u,
                            half_v: *half_v,
                        }),
                        texture: texture.clone(),
                    }
                }
                Surface::Sphere { center, radius, texture } => {
                    if !(*radius > 0.0) {
                        return Err(invalid("sphere radius must be positive"));
                    }
                    CompiledSurface {
                        shape: Shape::Sphere { center: Vector3::from(*center), radius: *radius },
                        texture: texture.clone(),
                    }
                }
            };
            surfaces.push(compiled);
        }
        Ok(Scene { surfaces, seed: spec.seed })
    }

    /// Nearest intersection along `origin + t * dir` with t > 0. `dir` need
    /// not be normalized; `t` is reported in its units.
    fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let t = match &s.shape {
                Shape::Plane(f) => {
                    let denom = f.normal.dot(dir);
                    if denom.abs() < 1e-14 {
                        continue;
                    }
                    let t = f.normal.dot(&(f.origin - origin)) / denom;
                    if t <= MIN_HIT_T {
                        continue;
                    }
                    let p = origin + dir * t;
                    let rel = p - f.origin;
                    if rel.dot(&f.u).abs() > f.half_u || rel.dot(&f.v).abs() > f.half_v {
                        continue;
                    }
                    t
                }
                Shape::Sphere { center, radius } => {
                    let oc = origin - center;
                    let a = dir.dot(dir);
                    let b = 2.0 * oc.dot(dir);
                    let c = oc.dot(&oc) - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    let t0 = (-b - sq) / (2.0 * a);
                    let t1 = (-b + sq) / (2.0 * a);
                    let t = if t0 > MIN_HIT_T {
                        t0
                    } else if t1 > MIN_HIT_T {
                        t1
                    } else {
                        continue;
                    };
                    t
                }
            };
            if best.as_ref().map_or(true, |h| t < h.t) {
                best = Some(Hit { t, surface: i, point: origin + dir * t });
            }
        }
        best
    }

    /// View-independent surface intensity at a world point.
    fn albedo(&self, surface: usize, point: &Vector3<f64>) -> f64 {
        let tex = &self.surfaces[surface].texture;
        let seed = self.seed ^ tex.seed_offset.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let n = noise::fbm(seed, point, tex.scale, tex.octaves.max(1));
        (tex.base + tex.contrast * (n - 0.5)).clamp(0.0, 1.0)
    }
}

/// A generated scene: cameras, rendered images, exact depth maps, sparse
/// tracks, per-view gains and the ground-truth surface cloud.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub views: Vec<CameraView>,
    pub images: Vec<Image>,
    pub gt_depths: Vec<DepthMap>,
    pub gains: Vec<f64>,
    pub tracks: SparseTrackSet,
    pub gt_cloud: PointCloud,
    scene: Scene,
}

impl SceneBundle {
    /// Shade view `v` at continuous pixel coordinates: the exact intensity
    /// (gain included) and camera-frame depth of the first surface hit.
    /// None where the ray escapes the scene.
    pub fn shade(&self, v: usize, x: f64, y: f64) -> Option<(f64, f64)> {
        let view = &self.views[v];
        let origin = view.center();
        let dir = view
            .back_project(&Vector2::new(x, y), 1.0)
            .expect("unit depth is valid")
            - origin;
        let hit = self.scene.raycast(&origin, &dir)?;
        Some((self.scene.albedo(hit.surface, &hit.point) * self.gains[v], hit.t))
    }

    /// How many cameras see this world point unobstructed and in frame.
    pub fn visibility_count(&self, point: &Vector3<f64>) -> usize {
        self.views
            .iter()
            .filter(|view| view_sees(view, &self.scene, point))
            .count()
    }

    /// True where the local 3x3 intensity variance falls below the spec
    /// threshold: the pixels photometric matching cannot discriminate.
    pub fn weak_texture_mask(&self, v: usize) -> ValidMask {
        let img = &self.images[v];
        let (w, h) = (img.width(), img.height());
        let mut mask = ValidMask::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
                let mut mean = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        mean += img.get(0, xx, yy);
                    }
                }
                mean /= n;
                let mut var = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let d = img.get(0, xx, yy) - mean;
                        var += d * d;
                    }
                }
                mask.set(x, y, var / n < self.spec.weak_variance_threshold);
            }
        }
        mask
    }
}

fn view_sees(view: &CameraView, scene: &Scene, point: &Vector3<f64>) -> bool {
    let warp = view.project(point);
    if !warp.is_valid() || !view.contains(&warp.coords) {
        return false;
    }
    let (lo, hi) = view.depth_range();
    if warp.depth < lo || warp.depth > hi {
        return false;
    }
    let origin = view.center();
    let dir = match view.back_project(&warp.coords, 1.0) {
        Ok(p) => p - origin,
        Err(_) => return false,
    };
    match scene.raycast(&origin, &dir) {
        // The first hit along the ray must be (numerically) this point.
        Some(hit) => (hit.t - warp.depth).abs() <= 1e-6 * warp.depth,
        None => false,
    }
}

fn build_views(spec: &SceneSpec) -> Result<Vec<CameraView>> {
    let k = Matrix3::new(
        spec.focal,
        0.0,
        (spec.width as f64 - 1.0) / 2.0,
        0.0,
        spec.focal,
        (spec.height as f64 - 1.0) / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let poses: Vec<Matrix4<f64>> = match &spec.rig {
        CameraRig::Arc { target, radius, angles_deg, heights } => {
            let target = Vector3::from(*target);
            angles_deg
                .iter()
                .zip(heights)
                .map(|(a, h)| {
                    let r = a.to_radians();
                    let eye = target + Vector3::new(radius * r.sin(), *h, -radius * r.cos());
                    look_at_pose(&eye, &target, &Vector3::new(0.0, 1.0, 0.0))
                })
                .collect::<Result<_>>()?
        }
        CameraRig::Linear { offsets } => offsets
            .iter()
            .map(|o| {
                let mut pose = Matrix4::identity();
                pose[(0, 3)] = -o[0];
                pose[(1, 3)] = -o[1];
                pose[(2, 3)] = -o[2];
                pose
            })
            .collect(),
    };
    poses
        .into_iter()
        .map(|p| CameraView::new(k, p, spec.width, spec.height, spec.depth_range))
        .collect()
}

fn sample_tracks(
    spec: &SceneSpec,
    scene: &Scene,
    views: &[CameraView],
) -> Result<SparseTrackSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5452_4143_4b53);
    // Surface choice proportional to area.
    let areas: Vec<f64> = scene
        .surfaces
        .iter()
        .map(|s| match &s.shape {
            Shape::Plane(f) => 4.0 * f.half_u * f.half_v,
            Shape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        })
        .collect();
    let total: f64 = areas.iter().sum();

    let mut points = Vec::new();
    let mut visibility = Vec::new();
    let mut attempts = 0usize;
    let budget = 300 * spec.track_count;
    while points.len() < spec.track_count {
        attempts += 1;
        if attempts > budget {
            return Err(invalid(format!(
                "could not sample {} tracks visible in {} views; got {}",
                spec.track_count,
                spec.min_track_views,
                points.len()
            )));
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a || i == areas.len() - 1 {
                idx = i;
                break;
            }
            pick -= a;
        }
        let point = match &scene.surfaces[idx].shape {
            Shape::Plane(f) => {
                let su = rng.gen_range(-f.half_u..f.half_u);
                let sv = rng.gen_range(-f.half_v..f.half_v);
                f.origin + f.u * su + f.v * sv
            }
            Shape::Sphere { center, radius } => {
                // Rejection-sample a direction, then scale to the surface.
                let dir = loop {
                    let d = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let n = d.norm();
                    if n > 1e-3 && n <= 1.0 {
                        break d / n;
                    }
                };
                center + dir * *radius
            }
        };
        let seen: Vec<usize> = views
            .iter()
            .enumerate()
            .filter(|(_, v)| view_sees(v, scene, &point))
            .map(|(i, _)| i)
            .collect();
        if seen.len() >= spec.min_track_views {
            points.push(point);
            visibility.push(seen);
        }
    }
    SparseTrackSet::new(points, visibility, views.len())
}

/// Render a scene spec into images, ground truth and tracks.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let scene = Scene::compile(spec)?;
    let views = build_views(spec)?;

    let gains: Vec<f64> = if spec.gain_range.0 == spec.gain_range.1 {
        vec![spec.gain_range.0; views.len()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x4741_494e_53);
        views.iter().map(|_| rng.gen_range(spec.gain_range.0..=spec.gain_range.1)).collect()
    };

    let mut images = Vec::with_capacity(views.len());
    let mut gt_depths = Vec::with_capacity(views.len());
    for (v, view) in views.iter().enumerate() {
        let mut img = Image::new(1, spec.width, spec.height);
        let mut depth = DepthMap::new(spec.width, spec.height, spec.depth_range)?;
        let origin = view.center();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let dir = view
                    .back_project(&Vector2::new(x as f64, y as f64), 1.0)
                    .expect("unit depth is valid")
                    - origin;
                if let Some(hit) = scene.raycast(&origin, &dir) {
                    img.set(0, x, y, scene.albedo(hit.surface, &hit.point) * gains[v]);
                    if hit.t >= spec.depth_range.0 && hit.t <= spec.depth_range.1 {
                        depth.set(x, y, hit.t);
                        depth.set_confidence(x, y, 1.0);
                    }
                }
            }
        }
        images.push(img);
        gt_depths.push(depth);
    }

    let tracks = sample_tracks(spec, &scene, &views)?;

    // Ground-truth cloud: back-projections of every sufficiently visible
    // ground-truth pixel, colored by gain-free albedo.
    let required = if spec.gt_visibility == 0 { views.len() } else { spec.gt_visibility };
    let mut gt_cloud = PointCloud::new();
    for (v, view) in views.iter().enumerate() {
        for y in 0..spec.height {
            for x in 0..spec.width {
                let Some(d) = gt_depths[v].get(x, y) else {
                    continue;
                };
                let point = view.back_project(&Vector2::new(x as f64, y as f64), d)?;
                let seen = views.iter().filter(|w| view_sees(w, &scene, &point)).count();
                if seen >= required {
                    let origin = view.center();
                    let dir = view
                        .back_project(&Vector2::new(x as f64, y as f64), 1.0)
                        .expect("unit depth is valid")
                        - origin;
                    let hit = scene.raycast(&origin, &dir).expect("depth pixel has a hit");
                    gt_cloud.push(point, scene.albedo(hit.surface, &hit.point), seen as u32);
                }
            }
        }
    }

    Ok(SceneBundle { spec: spec.clone(), views, images, gt_depths, gains, tracks, gt_cloud, scene })
}
