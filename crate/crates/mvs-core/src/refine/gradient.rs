//! Analytic derivative of the pair objective with respect to depth.
//!
//! Each loss term is differentiated through the exact computation the
//! forward pass performs: the warp jacobian gives the motion of the source
//! coordinates with depth, the interpolant gradient gives the change of the
//! sampled value with those coordinates, and the masked-mean normalization
//! of every term carries through as a constant factor. The photometric,
//! SSIM, smoothness and feature terms touch only the depth of the view
//! being scored; the geometric round trip also couples the opposite view's
//! depth, which is what makes joint refinement of a pair possible.

use nalgebra::Vector2;

use crate::error::{invalid, Result};
use crate::geometry::{CameraView, Warper};
use crate::imaging::{
    bilinear_with_gradient, cell, extract_patch_image, patch_offsets, resize_coord,
    spatial_gradients, window_bounds, Image, PatchImage, ValidMask,
};
use crate::losses::features::checked_extract;
use crate::losses::{
    abs_diff_mean, patch_photometric, pixel_photometric, smoothness, ssim_loss, FeatureExtractor,
    LossReport, LossWeights, SSIM_C1, SSIM_C2,
};
use crate::plane_sweep::{resample_depth, DepthMap};
use crate::render::{render_image, render_patch_image};

/// Derivative of |v - r| with respect to v; zero on the kink itself so a
/// term at its exact minimum never pushes a pixel.
#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn add(img: &mut Image, x: usize, y: usize, v: f64) {
    img.set(0, x, y, img.get(0, x, y) + v);
}

/// Gradient of one direction of the pair objective: the single-scale total
/// with `ref_*` as the scored view and `src_*` as its source. `own` is the
/// derivative with respect to the reference depth, `cross` with respect to
/// the source depth (only the geometric term reaches it), and `total`
/// reproduces the forward loss bit for bit.
pub(super) struct DirectionGradient {
    pub own: Image,
    pub cross: Image,
    pub total: f64,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn direction_gradient(
    ref_img: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_img: &Image,
    src_view: &CameraView,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<DirectionGradient> {
    weights.validate()?;
    let m = weights.patch_size;
    let mut own = Image::new(1, ref_depth.width(), ref_depth.height());
    let mut cross = Image::new(1, src_depth.width(), src_depth.height());
    let warper = Warper::between(ref_view, src_view);

    let (ref_patch, ref_patch_mask) = extract_patch_image(ref_img, m)?;
    let (patch_render, patch_render_mask) =
        render_patch_image(src_img, ref_view, src_view, ref_depth, m, None)?;
    let patch =
        patch_photometric(&ref_patch, &ref_patch_mask, &[(&patch_render, &patch_render_mask)])?;
    add_patch_gradient(
        &mut own,
        &patch,
        &ref_patch,
        &patch_render,
        src_img,
        &warper,
        ref_depth,
        weights.patch,
        m,
    );

    let (plain, plain_mask) = render_image(src_img, ref_view, src_view, ref_depth, None)?;
    let ssim = ssim_loss(ref_img, &[(&plain, &plain_mask)], weights.ssim_window)?;
    add_ssim_gradient(
        &mut own,
        &ssim,
        ref_img,
        &plain,
        &plain_mask,
        src_img,
        &warper,
        ref_depth,
        weights.ssim,
        weights.ssim_window,
    );

    let geometric = add_geometric_gradient(
        &mut own,
        &mut cross,
        ref_img,
        ref_view,
        ref_depth,
        src_view,
        src_depth,
        weights.geometric,
    )?;

    let smooth = smoothness(ref_img, ref_depth)?;
    add_smoothness_gradient(&mut own, &smooth, ref_img, ref_depth, weights.smoothness);

    let feature = add_feature_gradient(
        &mut own,
        ref_img,
        ref_view,
        ref_depth,
        src_img,
        src_view,
        extractor,
        weights.feature,
    )?;

    let total = weights.combine(
        patch.scalar,
        ssim.scalar,
        geometric.scalar,
        smooth.scalar,
        feature.scalar,
    );
    Ok(DirectionGradient { own, cross, total })
}

/// Patch members are warped at the centre pixel's depth, so the whole patch
/// residual of a pixel differentiates locally: sign of each member residual
/// times the motion of that member's sample with depth.
#[allow(clippy::too_many_arguments)]
fn add_patch_gradient(
    own: &mut Image,
    report: &LossReport,
    ref_patch: &PatchImage,
    rendered: &PatchImage,
    src_img: &Image,
    warper: &Warper,
    depth: &DepthMap,
    weight: f64,
    m: usize,
) {
    if weight == 0.0 || report.valid_count == 0 {
        return;
    }
    let offsets = patch_offsets(m);
    let channels = ref_patch.base_channels();
    let norm = weight / (report.valid_count as f64 * (channels * m * m) as f64);
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if !report.mask.get(x, y) {
                continue;
            }
            let d = depth.get(x, y).expect("loss mask only covers valid depths");
            let mut acc = 0.0;
            for (j, &(dx, dy)) in offsets.iter().enumerate() {
                let p = Vector2::new(x as f64 + dx as f64, y as f64 + dy as f64);
                let (warp, dcoords) = warper.warp_ray_jacobian(&warper.ray(&p), d);
                if !warp.is_valid() {
                    continue;
                }
                for c in 0..channels {
                    let k = c * m * m + j;
                    let diff = rendered.image().get(k, x, y) - ref_patch.image().get(k, x, y);
                    if diff == 0.0 {
                        continue;
                    }
                    let (_, gx, gy) =
                        bilinear_with_gradient(src_img, c, warp.coords.x, warp.coords.y);
                    acc += sgn(diff) * (gx * dcoords.x + gy * dcoords.y);
                }
            }
            add(own, x, y, norm * acc);
        }
    }
}

#[derive(Clone, Copy, Default)]
struct WindowStats {
    ma: f64,
    mb: f64,
    va: f64,
    vb: f64,
    cov: f64,
}

/// The SSIM score of a window is a smooth function of its mean, variance
/// and covariance, each of which is linear or quadratic in the rendered
/// values. A rendered pixel therefore feeds every window containing it;
/// the loop gathers those window adjoints per pixel so the accumulation
/// order is fixed.
#[allow(clippy::too_many_arguments)]
fn add_ssim_gradient(
    own: &mut Image,
    report: &LossReport,
    reference: &Image,
    plain: &Image,
    plain_mask: &ValidMask,
    src_img: &Image,
    warper: &Warper,
    depth: &DepthMap,
    weight: f64,
    window: usize,
) {
    if weight == 0.0 || report.valid_count == 0 {
        return;
    }
    let (w, h) = (plain.width(), plain.height());
    let channels = reference.channels();
    let eroded = &report.mask;
    let mut stats = vec![WindowStats::default(); w * h * channels];
    let mut counts = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            if !eroded.get(x, y) {
                continue;
            }
            let (x0, x1, y0, y1) = window_bounds(x, y, w, h, window);
            let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            counts[y * w + x] = n;
            for c in 0..channels {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wy in y0..=y1 {
                    for wx in x0..=x1 {
                        let va = reference.get(c, wx, wy);
                        let vb = plain.get(c, wx, wy);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let ma = sa / n;
                let mb = sb / n;
                stats[(y * w + x) * channels + c] = WindowStats {
                    ma,
                    mb,
                    va: (saa / n - ma * ma).max(0.0),
                    vb: (sbb / n - mb * mb).max(0.0),
                    cov: sab / n - ma * mb,
                };
            }
        }
    }
    // loss is (1 - mean over channels of S) / 2, averaged over valid windows
    let norm = -0.5 * weight / (channels as f64 * report.valid_count as f64);
    let mut dvals = vec![0.0f64; channels];
    for y in 0..h {
        for x in 0..w {
            if !plain_mask.get(x, y) {
                continue;
            }
            let Some(d) = depth.get(x, y) else {
                continue;
            };
            dvals.fill(0.0);
            let mut any = false;
            let (nx0, nx1, ny0, ny1) = window_bounds(x, y, w, h, window);
            for py in ny0..=ny1 {
                for px in nx0..=nx1 {
                    if !eroded.get(px, py) {
                        continue;
                    }
                    any = true;
                    let n = counts[py * w + px];
                    for (c, dval) in dvals.iter_mut().enumerate() {
                        let st = &stats[(py * w + px) * channels + c];
                        let a1 = 2.0 * st.ma * st.mb + SSIM_C1;
                        let a2 = 2.0 * st.cov + SSIM_C2;
                        let b1 = st.ma * st.ma + st.mb * st.mb + SSIM_C1;
                        let b2 = st.va + st.vb + SSIM_C2;
                        let s = (a1 * a2) / (b1 * b2);
                        let ds_dmb = 2.0 * st.ma * a2 / (b1 * b2) - 2.0 * st.mb * s / b1;
                        let ds_dvb = -s / b2;
                        let ds_dcov = 2.0 * a1 / (b1 * b2);
                        let aq = reference.get(c, x, y);
                        let bq = plain.get(c, x, y);
                        *dval +=
                            (ds_dmb + ds_dvb * 2.0 * (bq - st.mb) + ds_dcov * (aq - st.ma)) / n;
                    }
                }
            }
            if !any {
                continue;
            }
            let (warp, dcoords) =
                warper.warp_ray_jacobian(&warper.ray(&Vector2::new(x as f64, y as f64)), d);
            if !warp.is_valid() {
                continue;
            }
            let mut acc = 0.0;
            for (c, dval) in dvals.iter().enumerate() {
                if *dval == 0.0 {
                    continue;
                }
                let (_, gx, gy) = bilinear_with_gradient(src_img, c, warp.coords.x, warp.coords.y);
                acc += dval * (gx * dcoords.x + gy * dcoords.y);
            }
            add(own, x, y, norm * acc);
        }
    }
}

/// The round trip reads the echo image at coordinates driven by the
/// reference depth (the `own` part) while the echo values themselves were
/// sampled at coordinates driven by the source depth (the `cross` part,
/// scattered through the bilinear weights of each read).
#[allow(clippy::too_many_arguments)]
fn add_geometric_gradient(
    own: &mut Image,
    cross: &mut Image,
    ref_img: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_view: &CameraView,
    src_depth: &DepthMap,
    weight: f64,
) -> Result<LossReport> {
    let (echo, echo_mask) = render_image(ref_img, src_view, ref_view, src_depth, None)?;
    let (back, back_mask) = render_image(&echo, ref_view, src_view, ref_depth, Some(&echo_mask))?;
    let report = LossReport::from_map(abs_diff_mean(ref_img, &back, &back_mask), back_mask);
    if weight == 0.0 || report.valid_count == 0 {
        return Ok(report);
    }
    let channels = ref_img.channels();
    let norm = weight / (channels as f64 * report.valid_count as f64);
    let (ws, hs) = (src_depth.width(), src_depth.height());
    // motion of each echo value with the source depth that produced it
    let warper_back = Warper::between(src_view, ref_view);
    let mut echo_chain = Image::new(channels, ws, hs);
    for y in 0..hs {
        for x in 0..ws {
            if !echo_mask.get(x, y) {
                continue;
            }
            let Some(d) = src_depth.get(x, y) else {
                continue;
            };
            let (warp, dcoords) =
                warper_back.warp_ray_jacobian(&warper_back.ray(&Vector2::new(x as f64, y as f64)), d);
            if !warp.is_valid() {
                continue;
            }
            for c in 0..channels {
                let (_, gx, gy) = bilinear_with_gradient(ref_img, c, warp.coords.x, warp.coords.y);
                echo_chain.set(c, x, y, gx * dcoords.x + gy * dcoords.y);
            }
        }
    }
    let warper_fwd = Warper::between(ref_view, src_view);
    for y in 0..ref_depth.height() {
        for x in 0..ref_depth.width() {
            if !report.mask.get(x, y) {
                continue;
            }
            let Some(d) = ref_depth.get(x, y) else {
                continue;
            };
            let (warp, dcoords) =
                warper_fwd.warp_ray_jacobian(&warper_fwd.ray(&Vector2::new(x as f64, y as f64)), d);
            if !warp.is_valid() {
                continue;
            }
            let mut acc = 0.0;
            for c in 0..channels {
                let diff = back.get(c, x, y) - ref_img.get(c, x, y);
                if diff == 0.0 {
                    continue;
                }
                let (_, gx, gy) = bilinear_with_gradient(&echo, c, warp.coords.x, warp.coords.y);
                acc += sgn(diff) * (gx * dcoords.x + gy * dcoords.y);
            }
            add(own, x, y, norm * acc);
            let (x0, x1, fx) = cell(warp.coords.x, ws);
            let (y0, y1, fy) = cell(warp.coords.y, hs);
            for (cx, cy, cw) in [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x1, y0, fx * (1.0 - fy)),
                (x0, y1, (1.0 - fx) * fy),
                (x1, y1, fx * fy),
            ] {
                if cw == 0.0 {
                    continue;
                }
                let mut cacc = 0.0;
                for c in 0..channels {
                    let diff = back.get(c, x, y) - ref_img.get(c, x, y);
                    if diff == 0.0 {
                        continue;
                    }
                    cacc += sgn(diff) * echo_chain.get(c, cx, cy);
                }
                add(cross, cx, cy, norm * cw * cacc);
            }
        }
    }
    Ok(report)
}

/// The smoothness stencil is a fixed linear map of nearby depths followed
/// by two kinked magnitudes; its adjoint scatters the magnitude slopes back
/// through the stencil coefficients, replicated indices included.
fn add_smoothness_gradient(
    own: &mut Image,
    report: &LossReport,
    reference: &Image,
    depth: &DepthMap,
    weight: f64,
) {
    if weight == 0.0 || report.valid_count == 0 {
        return;
    }
    let (w, h) = (depth.width(), depth.height());
    let gi = spatial_gradients(reference);
    let inv_c = 1.0 / reference.channels() as f64;
    let norm = weight / report.valid_count as f64;
    for y in 0..h {
        for x in 0..w {
            if !report.mask.get(x, y) {
                continue;
            }
            let xp = (x + 1).min(w - 1);
            let xm = x.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            let ym = y.saturating_sub(1);
            let gx = (depth.value(xp, y) - depth.value(xm, y)) / 2.0;
            let gy = (depth.value(x, yp) - depth.value(x, ym)) / 2.0;
            let lap = depth.value(xp, y) + depth.value(xm, y) + depth.value(x, yp)
                + depth.value(x, ym)
                - 4.0 * depth.value(x, y);
            let mut grad_i = 0.0;
            let mut lap_i = 0.0;
            for c in 0..reference.channels() {
                grad_i += gi.gx.get(c, x, y).hypot(gi.gy.get(c, x, y));
                lap_i += gi.laplacian.get(c, x, y).abs();
            }
            let wg = (-grad_i * inv_c).exp();
            let wl = (-lap_i * inv_c).exp();
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                let cg = norm * wg / mag;
                add(own, xp, y, cg * gx * 0.5);
                add(own, xm, y, cg * gx * -0.5);
                add(own, x, yp, cg * gy * 0.5);
                add(own, x, ym, cg * gy * -0.5);
            }
            let sl = sgn(lap);
            if sl != 0.0 {
                let cl = norm * wl * sl;
                add(own, xp, y, cl);
                add(own, xm, y, cl);
                add(own, x, yp, cl);
                add(own, x, ym, cl);
                add(own, x, y, -4.0 * cl);
            }
        }
    }
}

/// The feature term samples the source feature grid at warps driven by the
/// depth map pulled to feature resolution; the adjoint runs the same chain
/// and then scatters through the pull weights back onto the full-resolution
/// depth pixels.
#[allow(clippy::too_many_arguments)]
fn add_feature_gradient(
    own: &mut Image,
    ref_img: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_img: &Image,
    src_view: &CameraView,
    extractor: &dyn FeatureExtractor,
    weight: f64,
) -> Result<LossReport> {
    let ds = extractor.downscale();
    if ds == 0 {
        return Err(invalid("feature downscale must be positive"));
    }
    for img in [ref_img, src_img] {
        if img.width() % ds != 0 || img.height() % ds != 0 {
            return Err(invalid(format!(
                "feature downscale {ds} must divide image dimensions {}x{}",
                img.width(),
                img.height()
            )));
        }
    }
    let (wf, hf) = (ref_img.width() / ds, ref_img.height() / ds);
    let f_ref = checked_extract(extractor, ref_img, wf, hf)?;
    let ref_feat_view = ref_view.resized(wf, hf)?;
    let feat_depth = resample_depth(ref_depth, wf, hf)?;
    let (sw, sh) = (src_img.width() / ds, src_img.height() / ds);
    let f_src = checked_extract(extractor, src_img, sw, sh)?;
    let src_feat_view = src_view.resized(sw, sh)?;
    let (rendered, rendered_mask) =
        render_image(&f_src, &ref_feat_view, &src_feat_view, &feat_depth, None)?;
    let report = pixel_photometric(&f_ref, &[(&rendered, &rendered_mask)])?;
    if weight == 0.0 || report.valid_count == 0 {
        return Ok(report);
    }
    let channels = f_ref.channels();
    let norm = weight / (channels as f64 * report.valid_count as f64);
    let warper = Warper::between(&ref_feat_view, &src_feat_view);
    for yf in 0..hf {
        for xf in 0..wf {
            if !report.mask.get(xf, yf) {
                continue;
            }
            let Some(d) = feat_depth.get(xf, yf) else {
                continue;
            };
            let (warp, dcoords) =
                warper.warp_ray_jacobian(&warper.ray(&Vector2::new(xf as f64, yf as f64)), d);
            if !warp.is_valid() {
                continue;
            }
            let mut acc = 0.0;
            for c in 0..channels {
                let diff = rendered.get(c, xf, yf) - f_ref.get(c, xf, yf);
                if diff == 0.0 {
                    continue;
                }
                let (_, gx, gy) = bilinear_with_gradient(&f_src, c, warp.coords.x, warp.coords.y);
                acc += sgn(diff) * (gx * dcoords.x + gy * dcoords.y);
            }
            if acc == 0.0 {
                continue;
            }
            let sx = resize_coord(xf, ref_depth.width(), wf);
            let sy = resize_coord(yf, ref_depth.height(), hf);
            let (x0, x1, fx) = cell(sx, ref_depth.width());
            let (y0, y1, fy) = cell(sy, ref_depth.height());
            for (qx, qy, qw) in [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x1, y0, fx * (1.0 - fy)),
                (x0, y1, (1.0 - fx) * fy),
                (x1, y1, fx * fy),
            ] {
                if qw == 0.0 {
                    continue;
                }
                add(own, qx, qy, norm * qw * acc);
            }
        }
    }
    Ok(report)
}

/// Headroom between a kink and the farthest point a probe can reach; a
/// probe is only trusted when every absolute-value argument it can move
/// stays on one side of zero with this factor to spare.
const FD_SAFETY: f64 = 2.0;

/// Marks, for both depth maps of a pair, the pixels whose finite-difference
/// probe of size `h_rel * depth` stays away from every non-smooth point of
/// the objective: bilinear cell boundaries and image hulls (where the
/// interpolant's derivative is one-sided), sign changes of any
/// absolute-value residual, kinks of the smoothness stencil, and the ends
/// of the depth range (where the probe would clamp into a one-sided
/// difference). `band` is the absolute slack kept between every read and
/// the nearest cell boundary.
#[allow(clippy::too_many_arguments)]
pub(super) fn pair_safe_masks(
    ref_img: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_img: &Image,
    src_view: &CameraView,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    h_rel: f64,
    band: f64,
) -> Result<(ValidMask, ValidMask)> {
    let mut safe_ref = ValidMask::filled(ref_depth.width(), ref_depth.height(), true);
    let mut safe_src = ValidMask::filled(src_depth.width(), src_depth.height(), true);
    direction_hazards(
        ref_img,
        ref_view,
        ref_depth,
        src_img,
        src_view,
        src_depth,
        weights,
        extractor,
        h_rel,
        band,
        &mut safe_ref,
        &mut safe_src,
    )?;
    direction_hazards(
        src_img,
        src_view,
        src_depth,
        ref_img,
        ref_view,
        ref_depth,
        weights,
        extractor,
        h_rel,
        band,
        &mut safe_src,
        &mut safe_ref,
    )?;
    Ok((safe_ref, safe_src))
}

fn lattice_safe(coord: f64, size: usize, margin: f64) -> bool {
    coord >= margin
        && coord <= (size - 1) as f64 - margin
        && (coord - coord.round()).abs() >= margin
}

/// Clears, for one direction of the pair objective, every pixel whose probe
/// could cross a kink: `own` is the scored view's map (all terms), `cross`
/// the source view's map (reached only through the geometric echo).
#[allow(clippy::too_many_arguments)]
fn direction_hazards(
    ref_img: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_img: &Image,
    src_view: &CameraView,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    h_rel: f64,
    band: f64,
    own: &mut ValidMask,
    cross: &mut ValidMask,
) -> Result<()> {
    let (w, h) = (ref_depth.width(), ref_depth.height());
    let m = weights.patch_size;
    let warper = Warper::between(ref_view, src_view);
    let offsets = patch_offsets(m);
    let (lo, hi) = ref_depth.range();
    let channels = ref_img.channels();
    let (ref_patch, _) = extract_patch_image(ref_img, m)?;
    let (patch_render, _) = render_patch_image(src_img, ref_view, src_view, ref_depth, m, None)?;

    for y in 0..h {
        for x in 0..w {
            let Some(d) = ref_depth.get(x, y) else {
                own.set(x, y, false);
                continue;
            };
            let hd = h_rel * d;
            if d - hd < lo || d + hd > hi {
                own.set(x, y, false);
                continue;
            }
            let mut ok = true;
            'members: for (j, &(dx, dy)) in offsets.iter().enumerate() {
                let p = Vector2::new(x as f64 + dx as f64, y as f64 + dy as f64);
                let (warp, dcoords) = warper.warp_ray_jacobian(&warper.ray(&p), d);
                if !warp.is_valid()
                    || !lattice_safe(warp.coords.x, src_img.width(), band + dcoords.x.abs() * hd)
                    || !lattice_safe(warp.coords.y, src_img.height(), band + dcoords.y.abs() * hd)
                {
                    ok = false;
                    break;
                }
                if weights.patch == 0.0 {
                    continue;
                }
                for c in 0..channels {
                    let k = c * m * m + j;
                    let diff = patch_render.image().get(k, x, y) - ref_patch.image().get(k, x, y);
                    let (_, gx, gy) =
                        bilinear_with_gradient(src_img, c, warp.coords.x, warp.coords.y);
                    let rate = (gx * dcoords.x + gy * dcoords.y).abs();
                    if diff.abs() <= FD_SAFETY * rate * hd {
                        ok = false;
                        break 'members;
                    }
                }
            }
            if ok && weights.smoothness > 0.0 {
                ok = smoothness_probe_safe(ref_depth, x, y, hd);
            }
            if !ok {
                own.set(x, y, false);
            }
        }
    }

    if weights.geometric > 0.0 {
        let (ws, hs) = (src_depth.width(), src_depth.height());
        let (echo, echo_mask) = render_image(ref_img, src_view, ref_view, src_depth, None)?;
        let (back, back_mask) =
            render_image(&echo, ref_view, src_view, ref_depth, Some(&echo_mask))?;
        let warper_back = Warper::between(src_view, ref_view);
        let mut echo_chain = Image::new(channels, ws, hs);
        for y in 0..hs {
            for x in 0..ws {
                if !echo_mask.get(x, y) {
                    continue;
                }
                let Some(d) = src_depth.get(x, y) else {
                    continue;
                };
                let (warp, dcoords) = warper_back
                    .warp_ray_jacobian(&warper_back.ray(&Vector2::new(x as f64, y as f64)), d);
                if !warp.is_valid() {
                    continue;
                }
                for c in 0..channels {
                    let (_, gx, gy) =
                        bilinear_with_gradient(ref_img, c, warp.coords.x, warp.coords.y);
                    echo_chain.set(c, x, y, gx * dcoords.x + gy * dcoords.y);
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                if !back_mask.get(x, y) {
                    continue;
                }
                let Some(d) = ref_depth.get(x, y) else {
                    continue;
                };
                let hd = h_rel * d;
                let (warp, dcoords) =
                    warper.warp_ray_jacobian(&warper.ray(&Vector2::new(x as f64, y as f64)), d);
                if !warp.is_valid() {
                    continue;
                }
                let (x0, x1, fx) = cell(warp.coords.x, ws);
                let (y0, y1, fy) = cell(warp.coords.y, hs);
                for c in 0..channels {
                    let diff = back.get(c, x, y) - ref_img.get(c, x, y);
                    let (_, gx, gy) =
                        bilinear_with_gradient(&echo, c, warp.coords.x, warp.coords.y);
                    let rate = (gx * dcoords.x + gy * dcoords.y).abs();
                    if diff.abs() <= FD_SAFETY * rate * hd {
                        own.set(x, y, false);
                    }
                    for (cx, cy, cw) in [
                        (x0, y0, (1.0 - fx) * (1.0 - fy)),
                        (x1, y0, fx * (1.0 - fy)),
                        (x0, y1, (1.0 - fx) * fy),
                        (x1, y1, fx * fy),
                    ] {
                        if cw == 0.0 {
                            continue;
                        }
                        let hq = src_depth.get(cx, cy).map_or(0.0, |dq| h_rel * dq);
                        if diff.abs() <= FD_SAFETY * cw * echo_chain.get(c, cx, cy).abs() * hq {
                            cross.set(cx, cy, false);
                        }
                    }
                }
            }
        }
    }

    // feature reads pull depth through bilinear weights; an untrustworthy
    // read taints every depth pixel it pulls from
    if weights.feature > 0.0 {
        let ds = extractor.downscale();
        if ds == 0 {
            return Err(invalid("feature downscale must be positive"));
        }
        if ref_img.width() % ds != 0 || ref_img.height() % ds != 0 {
            return Err(invalid(format!(
                "feature downscale {ds} must divide image dimensions {}x{}",
                ref_img.width(),
                ref_img.height()
            )));
        }
        let (wf, hf) = (ref_img.width() / ds, ref_img.height() / ds);
        let ref_feat_view = ref_view.resized(wf, hf)?;
        let (sw, sh) = (src_img.width() / ds, src_img.height() / ds);
        let src_feat_view = src_view.resized(sw, sh)?;
        let f_ref = checked_extract(extractor, ref_img, wf, hf)?;
        let f_src = checked_extract(extractor, src_img, sw, sh)?;
        let feat_depth = resample_depth(ref_depth, wf, hf)?;
        let (rendered, rendered_mask) =
            render_image(&f_src, &ref_feat_view, &src_feat_view, &feat_depth, None)?;
        let warper_f = Warper::between(&ref_feat_view, &src_feat_view);
        for yf in 0..hf {
            for xf in 0..wf {
                let Some(d) = feat_depth.get(xf, yf) else {
                    continue;
                };
                let hd = h_rel * d;
                let (warp, dcoords) = warper_f
                    .warp_ray_jacobian(&warper_f.ray(&Vector2::new(xf as f64, yf as f64)), d);
                let mut ok = warp.is_valid()
                    && lattice_safe(warp.coords.x, sw, band + dcoords.x.abs() * hd)
                    && lattice_safe(warp.coords.y, sh, band + dcoords.y.abs() * hd);
                if ok && rendered_mask.get(xf, yf) {
                    for c in 0..f_ref.channels() {
                        let diff = rendered.get(c, xf, yf) - f_ref.get(c, xf, yf);
                        let (_, gx, gy) =
                            bilinear_with_gradient(&f_src, c, warp.coords.x, warp.coords.y);
                        let rate = (gx * dcoords.x + gy * dcoords.y).abs();
                        if diff.abs() <= FD_SAFETY * rate * hd {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    continue;
                }
                let sx = resize_coord(xf, ref_depth.width(), wf);
                let sy = resize_coord(yf, ref_depth.height(), hf);
                let (x0, x1, fx) = cell(sx, ref_depth.width());
                let (y0, y1, fy) = cell(sy, ref_depth.height());
                for (qx, qy, qw) in [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x1, y0, fx * (1.0 - fy)),
                    (x0, y1, (1.0 - fx) * fy),
                    (x1, y1, fx * fy),
                ] {
                    if qw > 0.0 {
                        own.set(qx, qy, false);
                    }
                }
            }
        }
    }
    Ok(())
}

/// A probe at (x, y) enters the smoothness stencils centred there and at
/// its four neighbours. It is safe only when none of those stencils can
/// flip the sign of its Laplacian (coefficient of the probed depth: 4 at
/// the centre, at most 2 elsewhere once border clamping doubles an index)
/// or collapse its gradient magnitude to the kink at zero.
fn smoothness_probe_safe(depth: &DepthMap, x: usize, y: usize, hd: f64) -> bool {
    let (w, h) = (depth.width(), depth.height());
    let centers = [
        (x, y, 4.0),
        (x.saturating_sub(1), y, 2.0),
        ((x + 1).min(w - 1), y, 2.0),
        (x, y.saturating_sub(1), 2.0),
        (x, (y + 1).min(h - 1), 2.0),
    ];
    for (cx, cy, coeff) in centers {
        if depth.get(cx, cy).is_none() {
            continue;
        }
        let xp = (cx + 1).min(w - 1);
        let xm = cx.saturating_sub(1);
        let yp = (cy + 1).min(h - 1);
        let ym = cy.saturating_sub(1);
        let gx = (depth.value(xp, cy) - depth.value(xm, cy)) / 2.0;
        let gy = (depth.value(cx, yp) - depth.value(cx, ym)) / 2.0;
        let lap = depth.value(xp, cy) + depth.value(xm, cy) + depth.value(cx, yp)
            + depth.value(cx, ym)
            - 4.0 * depth.value(cx, cy);
        if lap.abs() <= FD_SAFETY * coeff * hd || gx.hypot(gy) <= FD_SAFETY * hd {
            return false;
        }
    }
    true
}

