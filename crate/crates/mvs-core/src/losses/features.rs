//! Dense feature transforms and the alignment loss over feature grids.
//!
//! Matching hand-built derivative stacks instead of raw intensities makes
//! the comparison sensitive to edge orientation and curvature, which
//! survives view-dependent brightness changes better than intensity alone.

use crate::error::{invalid, Result};
use crate::geometry::CameraView;
use crate::imaging::{resize_bilinear, spatial_gradients, Image, ValidMask};
use crate::plane_sweep::{resample_depth, DepthMap};
use crate::render::render_image;

use super::{pixel_photometric, LossReport};

/// Dense feature transform for the alignment loss. Implementations must be
/// deterministic, produce finite values, and honor the geometry they
/// declare; callers verify both before trusting the output. Extractors are
/// shared across worker threads, hence the `Sync` bound.
pub trait FeatureExtractor: Sync {
    /// Resolution divisor between the input image and the feature grid.
    fn downscale(&self) -> usize;

    /// Output channel count for an input with `input` channels.
    fn channels(&self, input: usize) -> usize;

    /// Compute the feature image, sized input dims / downscale.
    fn extract(&self, img: &Image) -> Result<Image>;
}

/// Pass-through features: alignment degenerates to the pixel photometric
/// loss, which pins the loss plumbing in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn downscale(&self) -> usize {
        1
    }

    fn channels(&self, input: usize) -> usize {
        input
    }

    fn extract(&self, img: &Image) -> Result<Image> {
        Ok(img.clone())
    }
}

/// Half-resolution derivative stack: per input channel the downsampled
/// intensity, both first-order gradients, the Laplacian and two diagonal
/// second-order responses.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientFeatures;

impl FeatureExtractor for GradientFeatures {
    fn downscale(&self) -> usize {
        2
    }

    fn channels(&self, input: usize) -> usize {
        6 * input
    }

    fn extract(&self, img: &Image) -> Result<Image> {
        let (w, h) = (img.width(), img.height());
        if w % 2 != 0 || h % 2 != 0 {
            return Err(invalid(format!("image dimensions {w}x{h} are not divisible by 2")));
        }
        let (wf, hf) = (w / 2, h / 2);
        let half = resize_bilinear(img, wf, hf)?;
        let g = spatial_gradients(&half);
        let cx = |x: isize| x.clamp(0, wf as isize - 1) as usize;
        let cy = |y: isize| y.clamp(0, hf as isize - 1) as usize;
        let mut out = Image::new(6 * img.channels(), wf, hf);
        for c in 0..img.channels() {
            for y in 0..hf {
                for x in 0..wf {
                    let (xi, yi) = (x as isize, y as isize);
                    let center = half.get(c, x, y);
                    let d2a = half.get(c, cx(xi + 1), cy(yi + 1)) - 2.0 * center
                        + half.get(c, cx(xi - 1), cy(yi - 1));
                    let d2b = half.get(c, cx(xi + 1), cy(yi - 1)) - 2.0 * center
                        + half.get(c, cx(xi - 1), cy(yi + 1));
                    out.set(6 * c, x, y, center);
                    out.set(6 * c + 1, x, y, g.gx.get(c, x, y));
                    out.set(6 * c + 2, x, y, g.gy.get(c, x, y));
                    out.set(6 * c + 3, x, y, g.laplacian.get(c, x, y));
                    out.set(6 * c + 4, x, y, d2a);
                    out.set(6 * c + 5, x, y, d2b);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn checked_extract(
    extractor: &dyn FeatureExtractor,
    img: &Image,
    wf: usize,
    hf: usize,
) -> Result<Image> {
    let f = extractor.extract(img)?;
    if f.width() != wf || f.height() != hf || f.channels() != extractor.channels(img.channels()) {
        return Err(invalid(format!(
            "feature extractor produced {}x{}x{}, declared {}x{}x{}",
            f.channels(),
            f.width(),
            f.height(),
            extractor.channels(img.channels()),
            wf,
            hf
        )));
    }
    if !f.data().iter().all(|v| v.is_finite()) {
        return Err(invalid("feature extractor produced non-finite values"));
    }
    Ok(f)
}

/// Mean absolute feature difference between the reference and each source
/// warped onto the feature grid. The depth map is pulled to feature
/// resolution and the views rescaled to match, so the term scores the same
/// geometry the photometric terms see.
pub fn feature_alignment(
    reference: &Image,
    ref_view: &CameraView,
    sources: &[(&Image, &CameraView)],
    depth: &DepthMap,
    extractor: &dyn FeatureExtractor,
) -> Result<LossReport> {
    if sources.is_empty() {
        return Err(invalid("at least one source view is required"));
    }
    let ds = extractor.downscale();
    if ds == 0 {
        return Err(invalid("feature downscale must be positive"));
    }
    let grid = |img: &Image| -> Result<(usize, usize)> {
        if img.width() % ds != 0 || img.height() % ds != 0 {
            return Err(invalid(format!(
                "feature downscale {ds} must divide image dimensions {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok((img.width() / ds, img.height() / ds))
    };
    let (wf, hf) = grid(reference)?;
    let ref_features = checked_extract(extractor, reference, wf, hf)?;
    let ref_feat_view = ref_view.resized(wf, hf)?;
    let feat_depth = resample_depth(depth, wf, hf)?;
    let mut per = Vec::with_capacity(sources.len());
    for (img, view) in sources {
        let (sw, sh) = grid(img)?;
        let src_features = checked_extract(extractor, img, sw, sh)?;
        let src_feat_view = view.resized(sw, sh)?;
        per.push(render_image(&src_features, &ref_feat_view, &src_feat_view, &feat_depth, None)?);
    }
    let refs: Vec<(&Image, &ValidMask)> = per.iter().map(|(i, m)| (i, m)).collect();
    pixel_photometric(&ref_features, &refs)
}
