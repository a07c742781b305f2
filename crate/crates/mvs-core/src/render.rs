//! Resample source views into a reference frame at estimated depths.
//!
//! Rendering is the bridge between depth maps and photometric losses: if a
//! depth map is right, the source image warped through it reproduces the
//! reference image wherever the surface is visible in both views.

use nalgebra::Vector2;

use crate::error::{invalid, Result};
use crate::geometry::{CameraView, WarpField, Warper};
use crate::imaging::{
    bilinear_at, bilinear_sample, in_hull, neighbors_valid, patch_offsets, Image, PatchImage,
    ValidMask,
};
use crate::plane_sweep::DepthMap;

/// Warp every valid reference pixel into the source view at its map depth.
pub fn warp_field(
    reference: &CameraView,
    source: &CameraView,
    depth: &DepthMap,
) -> Result<WarpField> {
    if depth.width() != reference.width() || depth.height() != reference.height() {
        return Err(invalid("depth map and reference view disagree on shape"));
    }
    let warper = Warper::between(reference, source);
    Ok(WarpField::from_fn(depth.width(), depth.height(), |x, y| {
        depth
            .get(x, y)
            .map(|d| warper.warp(&Vector2::new(x as f64, y as f64), d).expect("map depth is positive"))
    }))
}

/// The source image as seen from the reference: pixel p holds the source
/// intensity at the reference's depth estimate for p. Masked where the
/// depth is missing, the warp leaves the source or lands behind it, or a
/// contributing source pixel is masked out.
pub fn render_image(
    source_img: &Image,
    reference: &CameraView,
    source: &CameraView,
    depth: &DepthMap,
    source_mask: Option<&ValidMask>,
) -> Result<(Image, ValidMask)> {
    check_source(source_img, source, source_mask)?;
    let field = warp_field(reference, source, depth)?;
    Ok(bilinear_sample(source_img, &field, source_mask))
}

/// Patch-lifted render. Every patch member q = p + delta_j is warped at the
/// centre pixel's depth (a locally fronto-parallel model) and sampled from
/// the source; output channel c*m*m + j matches the layout of
/// [`extract_patch_image`](crate::imaging::extract_patch_image). A pixel is
/// valid only when all m*m member reads are valid, so patch losses never
/// mix real and missing members.
pub fn render_patch_image(
    source_img: &Image,
    reference: &CameraView,
    source: &CameraView,
    depth: &DepthMap,
    m: usize,
    source_mask: Option<&ValidMask>,
) -> Result<(PatchImage, ValidMask)> {
    if m == 0 || m % 2 == 0 {
        return Err(invalid(format!("patch size must be odd and positive, got {m}")));
    }
    check_source(source_img, source, source_mask)?;
    if depth.width() != reference.width() || depth.height() != reference.height() {
        return Err(invalid("depth map and reference view disagree on shape"));
    }
    let offsets = patch_offsets(m);
    let warper = Warper::between(reference, source);
    let (w, h) = (depth.width(), depth.height());
    let c_in = source_img.channels();
    let mut out = Image::new(c_in * m * m, w, h);
    let mut mask = ValidMask::filled(w, h, false);
    let mut coords = vec![Vector2::zeros(); offsets.len()];
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth.get(x, y) else {
                continue;
            };
            let mut ok = true;
            for (j, &(dx, dy)) in offsets.iter().enumerate() {
                // Members may sit outside the reference frame; only the
                // source-side read needs to stay in bounds.
                let p = Vector2::new(x as f64 + dx as f64, y as f64 + dy as f64);
                let warp = warper.warp(&p, d).expect("map depth is positive");
                if !warp.is_valid()
                    || !in_hull(warp.coords.x, warp.coords.y, source_img.width(), source_img.height())
                    || source_mask.is_some_and(|sm| !neighbors_valid(sm, warp.coords.x, warp.coords.y))
                {
                    ok = false;
                    break;
                }
                coords[j] = warp.coords;
            }
            if !ok {
                continue;
            }
            mask.set(x, y, true);
            for c in 0..c_in {
                for (j, q) in coords.iter().enumerate() {
                    out.set(c * m * m + j, x, y, bilinear_at(source_img, c, q.x, q.y));
                }
            }
        }
    }
    Ok((PatchImage::from_parts(c_in, m, out)?, mask))
}

fn check_source(img: &Image, view: &CameraView, mask: Option<&ValidMask>) -> Result<()> {
    if img.width() != view.width() || img.height() != view.height() {
        return Err(invalid("source image and view disagree on shape"));
    }
    if let Some(m) = mask {
        if m.width() != img.width() || m.height() != img.height() {
            return Err(invalid("source mask and image disagree on shape"));
        }
    }
    Ok(())
}
