//! Pinhole cameras and cross-view pixel warping.
//!
//! Conventions: pixel coordinates (x, y) address pixel centers, promoted to
//! homogeneous form as (x, y, 1). Poses are 4x4 world-to-camera rigid
//! transforms. Depth is the z coordinate in the camera frame, not ray length.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{invalid, Result};

/// Warped points with target depth at or below this are flagged invalid
/// (behind or grazing the source camera) rather than erroring; the flag
/// drives downstream masking.
pub const MIN_WARP_DEPTH: f64 = 1e-9;

const ROTATION_TOL: f64 = 1e-9;

/// Calibrated view: intrinsics, world-to-camera pose, image size and the
/// scene depth range the view is expected to observe.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    intrinsic: Matrix3<f64>,
    intrinsic_inv: Matrix3<f64>,
    pose: Matrix4<f64>,
    pose_inv: Matrix4<f64>,
    width: usize,
    height: usize,
    depth_range: (f64, f64),
}

impl CameraView {
    pub fn new(
        intrinsic: Matrix3<f64>,
        pose: Matrix4<f64>,
        width: usize,
        height: usize,
        depth_range: (f64, f64),
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        let (d_min, d_max) = depth_range;
        if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 || d_min >= d_max {
            return Err(invalid(format!(
                "depth range must satisfy 0 < d_min < d_max, got ({d_min}, {d_max})"
            )));
        }
        if intrinsic.iter().any(|v| !v.is_finite()) || pose.iter().any(|v| !v.is_finite()) {
            return Err(invalid("intrinsic and pose must be finite"));
        }
        // Upper-triangular K with positive focal lengths and unit scale.
        let lower_zero = intrinsic[(1, 0)].abs() <= 1e-12
            && intrinsic[(2, 0)].abs() <= 1e-12
            && intrinsic[(2, 1)].abs() <= 1e-12;
        if !lower_zero || (intrinsic[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(invalid("intrinsic must be upper-triangular with k22 = 1"));
        }
        if intrinsic[(0, 0)] <= 0.0 || intrinsic[(1, 1)] <= 0.0 {
            return Err(invalid("focal lengths must be positive"));
        }
        let r = pose.fixed_view::<3, 3>(0, 0).into_owned();
        let identity_err = (r.transpose() * r - Matrix3::identity()).norm();
        if identity_err > ROTATION_TOL || r.determinant() <= 0.0 {
            return Err(invalid(format!(
                "pose rotation must be orthonormal with det +1 (deviation {identity_err:.2e})"
            )));
        }
        let bottom = pose.fixed_view::<1, 4>(3, 0);
        if (bottom[(0, 0)].abs() + bottom[(0, 1)].abs() + bottom[(0, 2)].abs()) > 1e-12
            || (bottom[(0, 3)] - 1.0).abs() > 1e-12
        {
            return Err(invalid("pose bottom row must be (0, 0, 0, 1)"));
        }

        let t = pose.fixed_view::<3, 1>(0, 3).into_owned();
        let mut pose_inv = Matrix4::identity();
        pose_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
        pose_inv
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-r.transpose() * t));

        // Closed-form inverse of the upper-triangular calibration keeps the
        // bottom row exactly (0, 0, 1), so warps between same-orientation
        // views preserve depth without rounding.
        let (fx, s, cx) = (intrinsic[(0, 0)], intrinsic[(0, 1)], intrinsic[(0, 2)]);
        let (fy, cy) = (intrinsic[(1, 1)], intrinsic[(1, 2)]);
        let intrinsic_inv = Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        );

        Ok(CameraView {
            intrinsic,
            intrinsic_inv,
            pose,
            pose_inv,
            width,
            height,
            depth_range,
        })
    }

    pub fn intrinsic(&self) -> &Matrix3<f64> {
        &self.intrinsic
    }

    pub fn pose(&self) -> &Matrix4<f64> {
        &self.pose
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth_range(&self) -> (f64, f64) {
        self.depth_range
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose_inv.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// True when (x, y) lies within the convex hull of pixel centers.
    pub fn contains(&self, coords: &Vector2<f64>) -> bool {
        coords.x >= 0.0
            && coords.y >= 0.0
            && coords.x <= (self.width - 1) as f64
            && coords.y <= (self.height - 1) as f64
    }

    /// Lift pixel p at camera depth d to a world point.
    pub fn back_project(&self, p: &Vector2<f64>, d: f64) -> Result<Vector3<f64>> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid(format!("depth must be positive and finite, got {d}")));
        }
        let ray = self.intrinsic_inv * Vector3::new(p.x, p.y, 1.0);
        let cam = ray * d;
        Ok(self.pose_inv.fixed_view::<3, 3>(0, 0) * cam + self.pose_inv.fixed_view::<3, 1>(0, 3))
    }

    /// Project a world point; the result carries the camera-frame depth and
    /// is invalid when the point is behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> PixelWarp {
        let cam = self.pose.fixed_view::<3, 3>(0, 0) * world + self.pose.fixed_view::<3, 1>(0, 3);
        let h = self.intrinsic * cam;
        if cam.z <= MIN_WARP_DEPTH {
            return PixelWarp {
                coords: Vector2::zeros(),
                depth: cam.z,
            };
        }
        PixelWarp {
            coords: Vector2::new(h.x / h.z, h.y / h.z),
            depth: cam.z,
        }
    }

    /// View with intrinsics rescaled for a resampled image of the given size,
    /// using the corner-aligned mapping x' = x * (w' - 1) / (w - 1).
    pub fn resized(&self, width: usize, height: usize) -> Result<CameraView> {
        if width < 2 || height < 2 || self.width < 2 || self.height < 2 {
            return Err(invalid("resized views need at least 2 pixels per axis"));
        }
        let sx = (width - 1) as f64 / (self.width - 1) as f64;
        let sy = (height - 1) as f64 / (self.height - 1) as f64;
        let mut k = self.intrinsic;
        k[(0, 0)] *= sx;
        k[(0, 1)] *= sx;
        k[(0, 2)] *= sx;
        k[(1, 1)] *= sy;
        k[(1, 2)] *= sy;
        CameraView::new(k, self.pose, width, height, self.depth_range)
    }
}

/// Result of mapping a pixel into another view: continuous target
/// coordinates plus the depth of the point in the target camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelWarp {
    pub coords: Vector2<f64>,
    pub depth: f64,
}

impl PixelWarp {
    pub fn is_valid(&self) -> bool {
        self.depth > MIN_WARP_DEPTH
    }

    fn invalid() -> Self {
        PixelWarp {
            coords: Vector2::zeros(),
            depth: 0.0,
        }
    }
}

/// Precomposed reference-to-source warp. For a reference pixel p at depth d
/// the homogeneous source coordinates are d * (M * p~) + t with
/// M = K_src * R_rel * K_ref^-1 and t = K_src * t_rel, so per-pixel work in
/// sweep loops is one 3-vector fma.
#[derive(Debug, Clone)]
pub struct Warper {
    m: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Warper {
    pub fn between(reference: &CameraView, source: &CameraView) -> Warper {
        let rel = source.pose * reference.pose_inv;
        let r = rel.fixed_view::<3, 3>(0, 0).into_owned();
        let t = rel.fixed_view::<3, 1>(0, 3).into_owned();
        Warper {
            m: source.intrinsic * r * reference.intrinsic_inv,
            t: source.intrinsic * t,
        }
    }

    /// Direction part of the homogeneous warp for pixel p: M * (x, y, 1).
    pub fn ray(&self, p: &Vector2<f64>) -> Vector3<f64> {
        self.m * Vector3::new(p.x, p.y, 1.0)
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Warp pixel p at reference depth d into the source view.
    pub fn warp(&self, p: &Vector2<f64>, d: f64) -> Result<PixelWarp> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid(format!("depth must be positive and finite, got {d}")));
        }
        Ok(self.warp_ray(&self.ray(p), d))
    }

    /// Same as `warp` for a precomputed ray; no depth validation.
    #[inline]
    pub fn warp_ray(&self, ray: &Vector3<f64>, d: f64) -> PixelWarp {
        let h = ray * d + self.t;
        if h.z <= MIN_WARP_DEPTH {
            return PixelWarp::invalid();
        }
        PixelWarp {
            coords: Vector2::new(h.x / h.z, h.y / h.z),
            depth: h.z,
        }
    }

    /// Warp plus the derivative of the target coordinates w.r.t. depth.
    #[inline]
    pub fn warp_ray_jacobian(&self, ray: &Vector3<f64>, d: f64) -> (PixelWarp, Vector2<f64>) {
        let h = ray * d + self.t;
        if h.z <= MIN_WARP_DEPTH {
            return (PixelWarp::invalid(), Vector2::zeros());
        }
        let x = h.x / h.z;
        let y = h.y / h.z;
        (
            PixelWarp {
                coords: Vector2::new(x, y),
                depth: h.z,
            },
            Vector2::new((ray.x - x * ray.z) / h.z, (ray.y - y * ray.z) / h.z),
        )
    }
}

/// World-to-camera pose for a camera at `eye` looking at `target`. The
/// camera z axis points at the target; `up` fixes the roll and must not be
/// parallel to the viewing direction.
pub fn look_at_pose(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    up: &Vector3<f64>,
) -> Result<Matrix4<f64>> {
    let z = target - eye;
    if z.norm() < 1e-12 {
        return Err(invalid("look-at target coincides with eye"));
    }
    let z = z.normalize();
    let x = up.cross(&z);
    if x.norm() < 1e-9 {
        return Err(invalid("up direction is parallel to the viewing direction"));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let mut pose = Matrix4::identity();
    for (row, axis) in [x, y, z].iter().enumerate() {
        pose[(row, 0)] = axis.x;
        pose[(row, 1)] = axis.y;
        pose[(row, 2)] = axis.z;
        pose[(row, 3)] = -axis.dot(eye);
    }
    Ok(pose)
}

/// Map reference pixel p at depth d to the source view.
pub fn warp_pixel(
    reference: &CameraView,
    source: &CameraView,
    p: &Vector2<f64>,
    d: f64,
) -> Result<PixelWarp> {
    Warper::between(reference, source).warp(p, d)
}

/// Warp a patch: every member p + delta shares the center pixel's depth
/// (fronto-parallel assumption), so members stay rigid under pure
/// translation and deform under general motion.
pub fn warp_patch(
    reference: &CameraView,
    source: &CameraView,
    p: &Vector2<f64>,
    offsets: &[(i32, i32)],
    d: f64,
) -> Result<Vec<PixelWarp>> {
    let warper = Warper::between(reference, source);
    offsets
        .iter()
        .map(|&(dx, dy)| warper.warp(&Vector2::new(p.x + dx as f64, p.y + dy as f64), d))
        .collect()
}

/// Per-pixel warps for a whole reference grid.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub warps: Vec<PixelWarp>,
}

impl WarpField {
    /// Build row-major from a per-pixel function; `None` marks the pixel
    /// invalid (e.g. no depth estimate there).
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<PixelWarp>,
    ) -> WarpField {
        let mut warps = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                warps.push(f(x, y).unwrap_or_else(PixelWarp::invalid));
            }
        }
        WarpField {
            width,
            height,
            warps,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> &PixelWarp {
        &self.warps[y * self.width + x]
    }
}
