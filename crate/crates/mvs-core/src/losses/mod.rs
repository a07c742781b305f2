//! Loss terms scoring a depth estimate against the views it should explain.
//!
//! Every term reports a per-pixel map, a validity mask and their masked
//! mean, so the same quantities drive scalar optimization, per-pixel
//! diagnostics and gradient checks. Pixels excluded by a mask never
//! contribute to any statistic.

pub(crate) mod features;

pub use features::{feature_alignment, FeatureExtractor, GradientFeatures, IdentityFeatures};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::CameraView;
use crate::imaging::{
    extract_patch_image, merge_patch_scales, spatial_gradients, ssim_map, window_bounds, Image,
    PatchImage, ValidMask,
};
use crate::plane_sweep::DepthMap;
use crate::render::{render_image, render_patch_image};

/// SSIM luminance stabilizer for intensities in [0, 1].
pub const SSIM_C1: f64 = 1e-4;
/// SSIM contrast stabilizer for intensities in [0, 1].
pub const SSIM_C2: f64 = 9e-4;

/// Term weights and the shared loss geometry (patch size, SSIM window,
/// per-stage weights). All weights must be nonnegative and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub patch: f64,
    pub ssim: f64,
    pub geometric: f64,
    pub smoothness: f64,
    pub feature: f64,
    /// Per-stage weights, coarse to fine; the length fixes the stage count.
    pub stage: Vec<f64>,
    pub patch_size: usize,
    pub ssim_window: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            patch: 0.8,
            ssim: 0.16,
            geometric: 1.0,
            smoothness: 0.01,
            feature: 1.0,
            stage: vec![0.5, 1.0, 2.0],
            patch_size: 3,
            ssim_window: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("patch", self.patch),
            ("ssim", self.ssim),
            ("geometric", self.geometric),
            ("smoothness", self.smoothness),
            ("feature", self.feature),
        ];
        for (name, w) in named {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("{name} weight must be finite and >= 0, got {w}")));
            }
        }
        if self.stage.is_empty() {
            return Err(invalid("at least one stage weight is required"));
        }
        for (k, w) in self.stage.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(invalid(format!("stage weight {k} must be finite and >= 0, got {w}")));
            }
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(invalid(format!("patch size must be odd, got {}", self.patch_size)));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(invalid(format!("ssim window must be odd, got {}", self.ssim_window)));
        }
        Ok(())
    }

    /// Weighted sum of the five per-term scalars.
    pub fn combine(
        &self,
        patch: f64,
        ssim: f64,
        geometric: f64,
        smoothness: f64,
        feature: f64,
    ) -> f64 {
        self.patch * patch
            + self.ssim * ssim
            + self.geometric * geometric
            + self.smoothness * smoothness
            + self.feature * feature
    }

    /// Stage-weighted sum of per-stage totals, coarse to fine.
    pub fn stage_total(&self, stage_totals: &[f64]) -> Result<f64> {
        if stage_totals.len() != self.stage.len() {
            return Err(invalid(format!(
                "got {} stage losses for {} stage weights",
                stage_totals.len(),
                self.stage.len()
            )));
        }
        Ok(self.stage.iter().zip(stage_totals).map(|(mu, l)| mu * l).sum())
    }
}

/// A loss term's per-pixel map with its mask and masked mean.
///
/// Invariant: `scalar` is the mean of `map` over `mask` (0 when nothing is
/// valid), and `map` is zero wherever the mask is false.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub scalar: f64,
    pub map: Image,
    pub mask: ValidMask,
    pub valid_count: usize,
}

impl LossReport {
    /// Wrap a single-channel map, computing the masked mean in row-major
    /// order so the scalar is reproducible bit for bit.
    pub fn from_map(map: Image, mask: ValidMask) -> LossReport {
        assert_eq!(map.channels(), 1, "loss maps are single channel");
        assert!(
            map.width() == mask.width() && map.height() == mask.height(),
            "loss map and mask disagree on shape"
        );
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, ok) in map.channel(0).iter().zip(mask.data()) {
            if *ok {
                sum += v;
                count += 1;
            }
        }
        let scalar = if count == 0 { 0.0 } else { sum / count as f64 };
        LossReport { scalar, map, mask, valid_count: count }
    }

    /// An all-masked zero report, used when a term has nothing to score.
    pub fn zero(width: usize, height: usize) -> LossReport {
        LossReport {
            scalar: 0.0,
            map: Image::new(1, width, height),
            mask: ValidMask::filled(width, height, false),
            valid_count: 0,
        }
    }
}

/// Mean absolute channel difference per pixel, written only where `mask`
/// holds so values at masked pixels can never leak into a statistic.
pub(crate) fn abs_diff_mean(a: &Image, b: &Image, mask: &ValidMask) -> Image {
    let mut out = Image::new(1, a.width(), a.height());
    let inv_c = 1.0 / a.channels() as f64;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.get(x, y) {
                continue;
            }
            let mut sum = 0.0;
            for c in 0..a.channels() {
                sum += (a.get(c, x, y) - b.get(c, x, y)).abs();
            }
            out.set(0, x, y, sum * inv_c);
        }
    }
    out
}

/// Average per-source maps into one report: each pixel takes the mean over
/// the sources valid there, and stays masked only if no source sees it.
fn combine_sources(per_source: &[(Image, ValidMask)]) -> Result<LossReport> {
    let (w, h) = (per_source[0].0.width(), per_source[0].0.height());
    for (map, mask) in per_source {
        if map.channels() != 1
            || map.width() != w
            || map.height() != h
            || mask.width() != w
            || mask.height() != h
        {
            return Err(invalid("per-source loss maps must share shape"));
        }
    }
    let mut out = Image::new(1, w, h);
    let mut mask = ValidMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut n = 0u32;
            for (map, m) in per_source {
                if m.get(x, y) {
                    sum += map.get(0, x, y);
                    n += 1;
                }
            }
            if n > 0 {
                out.set(0, x, y, sum / n as f64);
                mask.set(x, y, true);
            }
        }
    }
    Ok(LossReport::from_map(out, mask))
}

fn check_rendered(reference: &Image, img: &Image, mask: &ValidMask) -> Result<()> {
    if !img.same_shape(reference) {
        return Err(invalid("rendered image shape differs from the reference"));
    }
    if mask.width() != reference.width() || mask.height() != reference.height() {
        return Err(invalid("render mask shape differs from the reference"));
    }
    Ok(())
}

/// Mean absolute intensity difference between the reference and each
/// rendered source, averaged over the sources valid at each pixel.
pub fn pixel_photometric(
    reference: &Image,
    rendered: &[(&Image, &ValidMask)],
) -> Result<LossReport> {
    if rendered.is_empty() {
        return Err(invalid("at least one rendered image is required"));
    }
    let mut per = Vec::with_capacity(rendered.len());
    for (img, mask) in rendered {
        check_rendered(reference, img, mask)?;
        per.push((abs_diff_mean(reference, img, mask), (*mask).clone()));
    }
    combine_sources(&per)
}

/// Photometric loss over patch-lifted images: the mean absolute difference
/// across all patch member channels. A pixel counts only where both its
/// reference patch and the rendered patch are complete.
pub fn patch_photometric(
    reference: &PatchImage,
    reference_mask: &ValidMask,
    rendered: &[(&PatchImage, &ValidMask)],
) -> Result<LossReport> {
    if rendered.is_empty() {
        return Err(invalid("at least one rendered patch image is required"));
    }
    let mut per = Vec::with_capacity(rendered.len());
    for (p, mask) in rendered {
        if p.base_channels() != reference.base_channels()
            || p.patch_size() != reference.patch_size()
        {
            return Err(invalid("rendered patch geometry differs from the reference"));
        }
        check_rendered(reference.image(), p.image(), mask)?;
        let joint = reference_mask.and(mask);
        per.push((abs_diff_mean(reference.image(), p.image(), &joint), joint));
    }
    combine_sources(&per)
}

/// Valid only where the whole clipped window is valid, so window statistics
/// never read a pixel produced by an invalid warp.
pub(crate) fn erode_window(mask: &ValidMask, window: usize) -> ValidMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = ValidMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (x0, x1, y0, y1) = window_bounds(x, y, w, h, window);
            let mut all = true;
            'scan: for wy in y0..=y1 {
                for wx in x0..=x1 {
                    if !mask.get(wx, wy) {
                        all = false;
                        break 'scan;
                    }
                }
            }
            out.set(x, y, all);
        }
    }
    out
}

/// Structural dissimilarity (1 - SSIM) / 2 between the reference and each
/// rendered source, averaged over channels and valid sources. Values lie in
/// [0, 1]; identical images score 0.
pub fn ssim_loss(
    reference: &Image,
    rendered: &[(&Image, &ValidMask)],
    window: usize,
) -> Result<LossReport> {
    if rendered.is_empty() {
        return Err(invalid("at least one rendered image is required"));
    }
    let inv_c = 1.0 / reference.channels() as f64;
    let mut per = Vec::with_capacity(rendered.len());
    for (img, mask) in rendered {
        check_rendered(reference, img, mask)?;
        let s = ssim_map(reference, img, window, SSIM_C1, SSIM_C2)?;
        let eroded = erode_window(mask, window);
        let mut map = Image::new(1, s.width(), s.height());
        for y in 0..s.height() {
            for x in 0..s.width() {
                if !eroded.get(x, y) {
                    continue;
                }
                let mean: f64 = (0..s.channels()).map(|c| s.get(c, x, y)).sum::<f64>() * inv_c;
                map.set(0, x, y, (1.0 - mean) / 2.0);
            }
        }
        per.push((map, eroded));
    }
    combine_sources(&per)
}

/// Round-trip photometric consistency between a reference/source depth
/// pair: render the reference image as the source sees it (driven by the
/// source depth), pull that rendering back onto the reference grid at the
/// reference depth, and compare with the original. Either depth map being
/// wrong breaks the round trip.
pub fn geometric_consistency(
    reference: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    src_view: &CameraView,
    src_depth: &DepthMap,
) -> Result<LossReport> {
    let (echo, echo_mask) = render_image(reference, src_view, ref_view, src_depth, None)?;
    let (back, back_mask) = render_image(&echo, ref_view, src_view, ref_depth, Some(&echo_mask))?;
    Ok(LossReport::from_map(abs_diff_mean(reference, &back, &back_mask), back_mask))
}

/// Round-trip consistency against several sources at once, averaged per
/// pixel over the sources whose round trip lands there.
pub fn geometric_consistency_many(
    reference: &Image,
    ref_view: &CameraView,
    ref_depth: &DepthMap,
    sources: &[(&CameraView, &DepthMap)],
) -> Result<LossReport> {
    if sources.is_empty() {
        return Err(invalid("at least one source depth is required"));
    }
    let mut per = Vec::with_capacity(sources.len());
    for (view, depth) in sources {
        let report = geometric_consistency(reference, ref_view, ref_depth, view, depth)?;
        per.push((report.map, report.mask));
    }
    combine_sources(&per)
}

/// Edge-aware depth smoothness: first- and second-order depth variation,
/// each damped where the image itself varies, so depth discontinuities are
/// cheap exactly where intensity edges justify them. A pixel counts only
/// when its whole difference stencil reads valid depths.
pub fn smoothness(reference: &Image, depth: &DepthMap) -> Result<LossReport> {
    let (w, h) = (depth.width(), depth.height());
    if reference.width() != w || reference.height() != h {
        return Err(invalid("image and depth map disagree on shape"));
    }
    let depth_img = Image::from_data(1, w, h, depth.depths().to_vec())?;
    let gd = spatial_gradients(&depth_img);
    let gi = spatial_gradients(reference);
    let inv_c = 1.0 / reference.channels() as f64;
    let mut map = Image::new(1, w, h);
    let mut mask = ValidMask::filled(w, h, false);
    let stencil_valid = |x: usize, y: usize| {
        let xs = [x, x.saturating_sub(1), (x + 1).min(w - 1)];
        let ys = [y, y.saturating_sub(1), (y + 1).min(h - 1)];
        xs.iter().all(|&sx| depth.mask().get(sx, y)) && ys.iter().all(|&sy| depth.mask().get(x, sy))
    };
    for y in 0..h {
        for x in 0..w {
            if !stencil_valid(x, y) {
                continue;
            }
            let mut grad_i = 0.0;
            let mut lap_i = 0.0;
            for c in 0..reference.channels() {
                grad_i += gi.gx.get(c, x, y).hypot(gi.gy.get(c, x, y));
                lap_i += gi.laplacian.get(c, x, y).abs();
            }
            let grad_d = gd.gx.get(0, x, y).hypot(gd.gy.get(0, x, y));
            let lap_d = gd.laplacian.get(0, x, y).abs();
            let v = (-grad_i * inv_c).exp() * grad_d + (-lap_i * inv_c).exp() * lap_d;
            map.set(0, x, y, v);
            mask.set(x, y, true);
        }
    }
    Ok(LossReport::from_map(map, mask))
}

/// One source view's contribution to a total loss. The depth map, when
/// present, enrolls the view in the geometric consistency term.
#[derive(Debug, Clone, Copy)]
pub struct SourceInput<'a> {
    pub image: &'a Image,
    pub view: &'a CameraView,
    pub depth: Option<&'a DepthMap>,
}

/// All per-term reports for one scale plus their weighted total.
#[derive(Debug, Clone)]
pub struct SingleScaleLoss {
    pub patch: LossReport,
    pub ssim: LossReport,
    pub geometric: LossReport,
    pub smoothness: LossReport,
    pub feature: LossReport,
    pub total: f64,
}

/// Everything one pyramid stage contributes to the multi-scale loss.
#[derive(Debug, Clone)]
pub struct StageInputs<'a> {
    pub ref_img: &'a Image,
    pub ref_view: &'a CameraView,
    pub depth: &'a DepthMap,
    pub sources: Vec<SourceInput<'a>>,
}

/// Evaluate every term at one scale and combine them with the term weights.
/// The geometric term averages over the sources that carry a depth map and
/// reports zero when none does.
pub fn total_single_scale(
    reference: &Image,
    ref_view: &CameraView,
    depth: &DepthMap,
    sources: &[SourceInput],
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<SingleScaleLoss> {
    weights.validate()?;
    if sources.is_empty() {
        return Err(invalid("at least one source view is required"));
    }
    let m = weights.patch_size;
    let (ref_patch, ref_patch_mask) = extract_patch_image(reference, m)?;
    let mut plain = Vec::with_capacity(sources.len());
    let mut patches = Vec::with_capacity(sources.len());
    for s in sources {
        plain.push(render_image(s.image, ref_view, s.view, depth, None)?);
        patches.push(render_patch_image(s.image, ref_view, s.view, depth, m, None)?);
    }
    let plain_refs: Vec<(&Image, &ValidMask)> = plain.iter().map(|(i, m)| (i, m)).collect();
    let patch_refs: Vec<(&PatchImage, &ValidMask)> = patches.iter().map(|(p, m)| (p, m)).collect();

    let patch = patch_photometric(&ref_patch, &ref_patch_mask, &patch_refs)?;
    let ssim = ssim_loss(reference, &plain_refs, weights.ssim_window)?;
    let geo_sources: Vec<(&CameraView, &DepthMap)> =
        sources.iter().filter_map(|s| s.depth.map(|d| (s.view, d))).collect();
    let geometric = if geo_sources.is_empty() {
        LossReport::zero(reference.width(), reference.height())
    } else {
        geometric_consistency_many(reference, ref_view, depth, &geo_sources)?
    };
    let smooth = smoothness(reference, depth)?;
    let feature_sources: Vec<(&Image, &CameraView)> =
        sources.iter().map(|s| (s.image, s.view)).collect();
    let feature = feature_alignment(reference, ref_view, &feature_sources, depth, extractor)?;

    let total =
        weights.combine(patch.scalar, ssim.scalar, geometric.scalar, smooth.scalar, feature.scalar);
    Ok(SingleScaleLoss { patch, ssim, geometric, smoothness: smooth, feature, total })
}

/// Patch term for a fine stage whose patch images are concatenated with
/// their upsampled coarse-stage neighbors. The coarse renders use the
/// coarse stage's own depth, so the fine depth is scored in the context of
/// the already-settled coarser estimate.
fn merged_patch_term(coarse: &StageInputs, fine: &StageInputs, m: usize) -> Result<LossReport> {
    if coarse.sources.len() != fine.sources.len() {
        return Err(invalid("stages must list the same sources in the same order"));
    }
    let (fine_ref, fine_ref_mask) = extract_patch_image(fine.ref_img, m)?;
    let (coarse_ref, coarse_ref_mask) = extract_patch_image(coarse.ref_img, m)?;
    let (merged_ref, merged_ref_mask) =
        merge_patch_scales(&fine_ref, &fine_ref_mask, &coarse_ref, &coarse_ref_mask)?;
    let mut rendered = Vec::with_capacity(fine.sources.len());
    for (sf, sc) in fine.sources.iter().zip(&coarse.sources) {
        let (pf, mf) = render_patch_image(sf.image, fine.ref_view, sf.view, fine.depth, m, None)?;
        let (pc, mc) =
            render_patch_image(sc.image, coarse.ref_view, sc.view, coarse.depth, m, None)?;
        rendered.push(merge_patch_scales(&pf, &mf, &pc, &mc)?);
    }
    let refs: Vec<(&PatchImage, &ValidMask)> = rendered.iter().map(|(p, m)| (p, m)).collect();
    patch_photometric(&merged_ref, &merged_ref_mask, &refs)
}

/// Per-stage losses and their stage-weighted total.
#[derive(Debug, Clone)]
pub struct MultiScaleLoss {
    pub stages: Vec<SingleScaleLoss>,
    pub total: f64,
}

/// Evaluate the loss across pyramid stages, coarse to fine. Stages after
/// the first replace their patch term with the scale-merged variant against
/// their coarser neighbor; stage weights come from `weights.stage` and must
/// match the stage count.
pub fn total_multi_scale(
    stages: &[StageInputs],
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<MultiScaleLoss> {
    weights.validate()?;
    if stages.len() != weights.stage.len() {
        return Err(invalid(format!(
            "got {} stages for {} stage weights",
            stages.len(),
            weights.stage.len()
        )));
    }
    let mut out = Vec::with_capacity(stages.len());
    for (k, stage) in stages.iter().enumerate() {
        let mut loss = total_single_scale(
            stage.ref_img,
            stage.ref_view,
            stage.depth,
            &stage.sources,
            weights,
            extractor,
        )?;
        if k > 0 {
            loss.patch = merged_patch_term(&stages[k - 1], stage, weights.patch_size)?;
            loss.total = weights.combine(
                loss.patch.scalar,
                loss.ssim.scalar,
                loss.geometric.scalar,
                loss.smoothness.scalar,
                loss.feature.scalar,
            );
        }
        out.push(loss);
    }
    let totals: Vec<f64> = out.iter().map(|l| l.total).collect();
    let total = weights.stage_total(&totals)?;
    Ok(MultiScaleLoss { stages: out, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane_sweep::resample_depth;
    use crate::synthetic::{generate_scene, SceneSpec};
    use nalgebra::{Matrix3, Matrix4, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsic(f: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
    }

    fn translated_view(f: f64, size: usize, t: Vector3<f64>, range: (f64, f64)) -> CameraView {
        let c = (size as f64 - 1.0) / 2.0;
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = -t.x;
        pose[(1, 3)] = -t.y;
        pose[(2, 3)] = -t.z;
        CameraView::new(intrinsic(f, c, c), pose, size, size, range).unwrap()
    }

    fn noise_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(1, size, size, (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    fn full(size: usize) -> ValidMask {
        ValidMask::filled(size, size, true)
    }

    #[test]
    fn pixel_loss_zero_on_identical_images() {
        let img = noise_image(8, 3);
        let mask = full(8);
        let report = pixel_photometric(&img, &[(&img, &mask)]).unwrap();
        assert_eq!(report.scalar, 0.0);
        assert_eq!(report.valid_count, 64);
        assert!(report.map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_loss_equals_constant_offset() {
        let img = noise_image(8, 4);
        let mut shifted = img.clone();
        for v in shifted.data_mut() {
            *v += 0.1;
        }
        let mask = full(8);
        let report = pixel_photometric(&img, &[(&shifted, &mask)]).unwrap();
        assert!((report.scalar - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pixel_loss_matches_scalar_oracle() {
        // Direct recomputation: per pixel, mean |diff| over the sources
        // valid there, then the mean over pixels any source sees.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let size = rng.gen_range(3..9);
            let reference = Image::from_fn(2, size, size, |_, _, _| rng.gen_range(0.0..1.0));
            let mut rendered = Vec::new();
            for _ in 0..rng.gen_range(1..4usize) {
                let img = Image::from_fn(2, size, size, |_, _, _| rng.gen_range(0.0..1.0));
                let mut mask = ValidMask::filled(size, size, false);
                for y in 0..size {
                    for x in 0..size {
                        mask.set(x, y, rng.gen_bool(0.7));
                    }
                }
                rendered.push((img, mask));
            }
            let refs: Vec<(&Image, &ValidMask)> = rendered.iter().map(|(i, m)| (i, m)).collect();
            let report = pixel_photometric(&reference, &refs).unwrap();

            let mut sum = 0.0;
            let mut count = 0usize;
            for y in 0..size {
                for x in 0..size {
                    let per: Vec<f64> = rendered
                        .iter()
                        .filter(|(_, m)| m.get(x, y))
                        .map(|(img, _)| {
                            ((reference.get(0, x, y) - img.get(0, x, y)).abs()
                                + (reference.get(1, x, y) - img.get(1, x, y)).abs())
                                / 2.0
                        })
                        .collect();
                    if !per.is_empty() {
                        sum += per.iter().sum::<f64>() / per.len() as f64;
                        count += 1;
                    }
                }
            }
            let want = if count == 0 { 0.0 } else { sum / count as f64 };
            assert!((report.scalar - want).abs() < 1e-12);
            assert_eq!(report.valid_count, count);
        }
    }

    #[test]
    fn masked_sentinels_never_leak() {
        // Poison masked-out pixels with huge values; every term must report
        // exactly the same scalar as with benign values there.
        let size = 10;
        let reference = noise_image(size, 11);
        let clean = noise_image(size, 12);
        let mut mask = full(size);
        mask.set(4, 4, false);
        mask.set(7, 2, false);
        let mut poisoned = clean.clone();
        for (x, y) in [(4usize, 4usize), (7, 2)] {
            let i = poisoned.index(0, x, y);
            poisoned.data_mut()[i] = 1e30;
        }

        let a = pixel_photometric(&reference, &[(&clean, &mask)]).unwrap();
        let b = pixel_photometric(&reference, &[(&poisoned, &mask)]).unwrap();
        assert_eq!(a.scalar, b.scalar);
        assert_eq!(a.valid_count, b.valid_count);

        let s_clean = ssim_loss(&reference, &[(&clean, &mask)], 3).unwrap();
        let s_poisoned = ssim_loss(&reference, &[(&poisoned, &mask)], 3).unwrap();
        assert_eq!(s_clean.scalar, s_poisoned.scalar);
        // The window erosion shields neighbors of the poisoned pixels.
        assert!(s_clean.valid_count < size * size);

        let (ref_patch, ref_mask) = extract_patch_image(&reference, 3).unwrap();
        let (clean_patch, _) = extract_patch_image(&clean, 3).unwrap();
        let (poisoned_patch, _) = extract_patch_image(&poisoned, 3).unwrap();
        // Patch masks must exclude every patch containing a poisoned member.
        let mut patch_mask = ValidMask::filled(size, size, false);
        for y in 1..size - 1 {
            for x in 1..size - 1 {
                let clear = |px: usize, py: usize| {
                    (px as i32 - x as i32).abs() > 1 || (py as i32 - y as i32).abs() > 1
                };
                patch_mask.set(x, y, clear(4, 4) && clear(7, 2));
            }
        }
        let p_clean =
            patch_photometric(&ref_patch, &ref_mask, &[(&clean_patch, &patch_mask)]).unwrap();
        let p_poisoned =
            patch_photometric(&ref_patch, &ref_mask, &[(&poisoned_patch, &patch_mask)]).unwrap();
        assert_eq!(p_clean.scalar, p_poisoned.scalar);
        assert!(p_clean.scalar.is_finite());
    }

    #[test]
    fn patch_size_one_reduces_to_pixel_loss() {
        let size = 16;
        let range = (6.0, 16.0);
        let reference = noise_image(size, 21);
        let source = noise_image(size, 22);
        let ref_view = translated_view(40.0, size, Vector3::zeros(), range);
        let src_view = translated_view(40.0, size, Vector3::new(0.5, -0.2, 0.0), range);
        let mut depth = DepthMap::new(size, size, range).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for y in 0..size {
            for x in 0..size {
                depth.set(x, y, rng.gen_range(8.0..14.0));
            }
        }

        let (plain, plain_mask) =
            render_image(&source, &ref_view, &src_view, &depth, None).unwrap();
        let pixel = pixel_photometric(&reference, &[(&plain, &plain_mask)]).unwrap();

        let (ref_patch, ref_patch_mask) = extract_patch_image(&reference, 1).unwrap();
        let (patch, patch_mask) =
            render_patch_image(&source, &ref_view, &src_view, &depth, 1, None).unwrap();
        let patch_report =
            patch_photometric(&ref_patch, &ref_patch_mask, &[(&patch, &patch_mask)]).unwrap();

        assert_eq!(pixel.scalar, patch_report.scalar);
        assert_eq!(pixel.valid_count, patch_report.valid_count);
        for (a, b) in pixel.map.data().iter().zip(patch_report.map.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn patch_geometry_mismatch_is_rejected() {
        let img = noise_image(8, 31);
        let (p3, m3) = extract_patch_image(&img, 3).unwrap();
        let (p1, _) = extract_patch_image(&img, 1).unwrap();
        assert!(patch_photometric(&p3, &m3, &[(&p1, &m3)]).is_err());
        assert!(patch_photometric(&p3, &m3, &[]).is_err());
    }

    #[test]
    fn ssim_loss_zero_on_identical_images() {
        let img = noise_image(9, 41);
        let mask = full(9);
        let report = ssim_loss(&img, &[(&img, &mask)], 3).unwrap();
        assert!(report.scalar.abs() < 1e-12);
        assert_eq!(report.valid_count, 81);
    }

    #[test]
    fn ssim_loss_near_one_on_inverted_texture() {
        let a = Image::from_fn(1, 10, 10, |_, x, y| ((x + y) % 2) as f64);
        let b = Image::from_fn(1, 10, 10, |_, x, y| 1.0 - ((x + y) % 2) as f64);
        let mask = full(10);
        let report = ssim_loss(&a, &[(&b, &mask)], 3).unwrap();
        for y in 2..8 {
            for x in 2..8 {
                assert!(report.map.get(0, x, y) > 0.5, "at ({x},{y})");
            }
        }
        assert!(report.scalar > 0.5);
        assert!(report.scalar <= 1.0);
    }

    #[test]
    fn ssim_loss_matches_luminance_closed_form() {
        // Constant images have zero variance, so only the luminance ratio
        // survives and the loss has an exact closed form.
        let a = Image::from_fn(1, 6, 6, |_, _, _| 0.3);
        let b = Image::from_fn(1, 6, 6, |_, _, _| 0.4);
        let mask = full(6);
        let report = ssim_loss(&a, &[(&b, &mask)], 3).unwrap();
        let s = (2.0 * 0.3 * 0.4 + SSIM_C1) / (0.3 * 0.3 + 0.4 * 0.4 + SSIM_C1);
        let want = (1.0 - s) / 2.0;
        assert!((report.scalar - want).abs() < 1e-12);
        assert!(report.scalar > 0.0);
    }

    #[test]
    fn geometric_zero_at_ground_truth() {
        let bundle = generate_scene(&SceneSpec::rectified_planes(5)).unwrap();
        let report = geometric_consistency(
            &bundle.images[0],
            &bundle.views[0],
            &bundle.gt_depths[0],
            &bundle.views[1],
            &bundle.gt_depths[1],
        )
        .unwrap();
        assert!(report.valid_count > 2000, "round trip covered {} pixels", report.valid_count);
        assert!(report.scalar < 1e-6, "loss at ground truth = {}", report.scalar);
    }

    #[test]
    fn geometric_flags_corrupted_source_depth() {
        let bundle = generate_scene(&SceneSpec::rectified_planes(5)).unwrap();
        let src = &bundle.gt_depths[1];
        let mut corrupted = DepthMap::new(src.width(), src.height(), src.range()).unwrap();
        for y in 0..src.height() {
            for x in 0..src.width() {
                if let Some(d) = src.get(x, y) {
                    corrupted.set(x, y, d * 1.1);
                }
            }
        }
        let report = geometric_consistency(
            &bundle.images[0],
            &bundle.views[0],
            &bundle.gt_depths[0],
            &bundle.views[1],
            &corrupted,
        )
        .unwrap();
        assert!(report.scalar > 1e-3, "corrupted depth scored only {}", report.scalar);
    }

    #[test]
    fn geometric_self_pair_is_exact() {
        let size = 12;
        let range = (6.0, 16.0);
        let img = noise_image(size, 51);
        let view = translated_view(40.0, size, Vector3::zeros(), range);
        let depth = DepthMap::constant(size, size, 9.0, range).unwrap();
        let report = geometric_consistency(&img, &view, &depth, &view, &depth).unwrap();
        assert!(report.scalar < 1e-12);
        assert!(report.valid_count >= (size - 2) * (size - 2));
    }

    #[test]
    fn smoothness_zero_on_constant_depth() {
        let img = noise_image(8, 61);
        let depth = DepthMap::constant(8, 8, 10.0, (1.0, 20.0)).unwrap();
        let report = smoothness(&img, &depth).unwrap();
        assert_eq!(report.scalar, 0.0);
        assert_eq!(report.valid_count, 64);
    }

    #[test]
    fn smoothness_tracks_ramp_slope() {
        // Constant image: both weights are 1, the ramp has |grad| = s and
        // zero Laplacian away from the borders.
        let img = Image::from_fn(1, 9, 9, |_, _, _| 0.5);
        let slope = 0.37;
        let make = |s: f64| {
            let mut d = DepthMap::new(9, 9, (1.0, 40.0)).unwrap();
            for y in 0..9 {
                for x in 0..9 {
                    d.set(x, y, 10.0 + s * x as f64);
                }
            }
            d
        };
        let report = smoothness(&img, &make(slope)).unwrap();
        for y in 1..8 {
            for x in 1..8 {
                assert!((report.map.get(0, x, y) - slope).abs() < 1e-12, "at ({x},{y})");
            }
        }
        let doubled = smoothness(&img, &make(2.0 * slope)).unwrap();
        assert!((doubled.scalar / report.scalar - 2.0).abs() < 1e-9);
    }

    #[test]
    fn smoothness_relaxes_at_intensity_edges() {
        // A depth step over a flat image pays full price; the same step
        // aligned with a strong intensity edge is nearly free.
        let size = 9;
        let step_depth = |x: usize| if x < 4 { 10.0 } else { 14.0 };
        let mut depth = DepthMap::new(size, size, (1.0, 40.0)).unwrap();
        for y in 0..size {
            for x in 0..size {
                depth.set(x, y, step_depth(x));
            }
        }
        let flat = Image::from_fn(1, size, size, |_, _, _| 0.5);
        let edged = Image::from_fn(1, size, size, |_, x, _| if x < 4 { 0.0 } else { 5.0 });
        let pay = smoothness(&flat, &depth).unwrap();
        let cheap = smoothness(&edged, &depth).unwrap();
        assert!(pay.scalar > 0.5);
        assert!(
            cheap.scalar < 0.15 * pay.scalar,
            "edge-aware weight failed: {} vs {}",
            cheap.scalar,
            pay.scalar
        );
    }

    #[test]
    fn smoothness_masks_stencils_touching_holes() {
        let img = noise_image(8, 71);
        let mut depth = DepthMap::constant(8, 8, 10.0, (1.0, 20.0)).unwrap();
        depth.set_invalid(3, 4);
        let report = smoothness(&img, &depth).unwrap();
        // The hole and its 4-neighborhood lose their stencils; everything
        // else stays constant, hence zero.
        assert_eq!(report.valid_count, 64 - 5);
        assert_eq!(report.scalar, 0.0);
        assert!(!report.mask.get(3, 4));
        assert!(!report.mask.get(2, 4));
        assert!(!report.mask.get(4, 4));
        assert!(!report.mask.get(3, 3));
        assert!(!report.mask.get(3, 5));
    }

    #[test]
    fn default_weights_sum_as_documented() {
        let w = LossWeights::default();
        w.validate().unwrap();
        assert!((w.combine(1.0, 1.0, 1.0, 1.0, 1.0) - 2.97).abs() < 1e-12);
        assert!((w.stage_total(&[1.0, 1.0, 1.0]).unwrap() - 3.5).abs() < 1e-12);
        assert!(w.stage_total(&[1.0]).is_err());
    }

    #[test]
    fn weights_validation_rejects_bad_values() {
        let mut w = LossWeights::default();
        w.patch = -0.1;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.stage.clear();
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.patch_size = 2;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.ssim_window = 0;
        assert!(w.validate().is_err());
    }

    #[test]
    fn total_vanishes_on_a_self_pair_at_constant_depth() {
        let size = 14;
        let range = (6.0, 16.0);
        let img = noise_image(size, 81);
        let view = translated_view(40.0, size, Vector3::zeros(), range);
        let depth = DepthMap::constant(size, size, 10.0, range).unwrap();
        let sources = [SourceInput { image: &img, view: &view, depth: Some(&depth) }];
        let loss = total_single_scale(
            &img,
            &view,
            &depth,
            &sources,
            &LossWeights::default(),
            &GradientFeatures,
        )
        .unwrap();
        assert!(loss.total.abs() < 1e-9, "total = {}", loss.total);
        assert!(loss.patch.valid_count > 0);
        assert!(loss.feature.valid_count > 0);
        assert!(loss.geometric.valid_count > 0);
    }

    #[test]
    fn scaling_term_weights_scales_the_total() {
        let bundle = generate_scene(&SceneSpec::rectified_planes(7)).unwrap();
        // A deliberately wrong constant depth produces nonzero terms.
        let depth =
            DepthMap::constant(bundle.spec.width, bundle.spec.height, 550.0, (425.0, 935.0))
                .unwrap();
        let sources = [SourceInput {
            image: &bundle.images[1],
            view: &bundle.views[1],
            depth: Some(&bundle.gt_depths[1]),
        }];
        let weights = LossWeights::default();
        let mut tripled = weights.clone();
        tripled.patch *= 3.0;
        tripled.ssim *= 3.0;
        tripled.geometric *= 3.0;
        tripled.smoothness *= 3.0;
        tripled.feature *= 3.0;
        let base = total_single_scale(
            &bundle.images[0],
            &bundle.views[0],
            &depth,
            &sources,
            &weights,
            &GradientFeatures,
        )
        .unwrap();
        let scaled = total_single_scale(
            &bundle.images[0],
            &bundle.views[0],
            &depth,
            &sources,
            &tripled,
            &GradientFeatures,
        )
        .unwrap();
        assert!(base.total > 0.0);
        assert!((scaled.total / base.total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn multi_scale_single_stage_matches_single_scale() {
        let bundle = generate_scene(&SceneSpec::rectified_planes(9)).unwrap();
        let mut weights = LossWeights::default();
        weights.stage = vec![1.0];
        let sources = vec![SourceInput {
            image: &bundle.images[1],
            view: &bundle.views[1],
            depth: Some(&bundle.gt_depths[1]),
        }];
        let single = total_single_scale(
            &bundle.images[0],
            &bundle.views[0],
            &bundle.gt_depths[0],
            &sources,
            &weights,
            &GradientFeatures,
        )
        .unwrap();
        let stages = vec![StageInputs {
            ref_img: &bundle.images[0],
            ref_view: &bundle.views[0],
            depth: &bundle.gt_depths[0],
            sources,
        }];
        let multi = total_multi_scale(&stages, &weights, &GradientFeatures).unwrap();
        assert_eq!(multi.stages.len(), 1);
        assert_eq!(multi.total, single.total);
    }

    #[test]
    fn multi_scale_zero_at_exact_geometry() {
        // Two stages over the same exact-warp scene at ground truth: the
        // merged patch term compares exact renders on both blocks, so every
        // view-consistency term vanishes. The smoothness weight is zeroed
        // because the true depth really is discontinuous at the plane seam,
        // and identity features keep the feature term on the exact pixel
        // lattice (a half-resolution grid would interpolate depth across
        // the seam and lose the identity).
        let bundle = generate_scene(&SceneSpec::rectified_planes(11)).unwrap();
        let mut weights = LossWeights::default();
        weights.stage = vec![0.5, 1.0];
        weights.smoothness = 0.0;
        let stage = || StageInputs {
            ref_img: &bundle.images[0],
            ref_view: &bundle.views[0],
            depth: &bundle.gt_depths[0],
            sources: vec![SourceInput {
                image: &bundle.images[1],
                view: &bundle.views[1],
                depth: Some(&bundle.gt_depths[1]),
            }],
        };
        let multi = total_multi_scale(&[stage(), stage()], &weights, &IdentityFeatures).unwrap();
        assert!(multi.total < 1e-9, "total = {}", multi.total);
        assert_eq!(multi.stages.len(), 2);
        for s in &multi.stages {
            assert!(s.patch.valid_count > 1000);
        }
    }

    #[test]
    fn multi_scale_handles_mixed_resolutions() {
        let bundle = generate_scene(&SceneSpec::rectified_planes(13)).unwrap();
        let (w, h) = (bundle.spec.width, bundle.spec.height);
        let coarse_ref = crate::imaging::resize_bilinear(&bundle.images[0], w / 2, h / 2).unwrap();
        let coarse_src = crate::imaging::resize_bilinear(&bundle.images[1], w / 2, h / 2).unwrap();
        let coarse_ref_view = bundle.views[0].resized(w / 2, h / 2).unwrap();
        let coarse_src_view = bundle.views[1].resized(w / 2, h / 2).unwrap();
        let coarse_ref_depth = resample_depth(&bundle.gt_depths[0], w / 2, h / 2).unwrap();
        let coarse_src_depth = resample_depth(&bundle.gt_depths[1], w / 2, h / 2).unwrap();
        let mut weights = LossWeights::default();
        weights.stage = vec![0.5, 1.0];
        let stages = vec![
            StageInputs {
                ref_img: &coarse_ref,
                ref_view: &coarse_ref_view,
                depth: &coarse_ref_depth,
                sources: vec![SourceInput {
                    image: &coarse_src,
                    view: &coarse_src_view,
                    depth: Some(&coarse_src_depth),
                }],
            },
            StageInputs {
                ref_img: &bundle.images[0],
                ref_view: &bundle.views[0],
                depth: &bundle.gt_depths[0],
                sources: vec![SourceInput {
                    image: &bundle.images[1],
                    view: &bundle.views[1],
                    depth: Some(&bundle.gt_depths[1]),
                }],
            },
        ];
        let multi = total_multi_scale(&stages, &weights, &GradientFeatures).unwrap();
        assert!(multi.total.is_finite());
        assert!(multi.total >= 0.0);
        for s in &multi.stages {
            assert!(s.patch.valid_count > 0);
            assert!(s.feature.valid_count > 0);
        }
        // Stage-count mismatch with the stage weights is refused.
        assert!(total_multi_scale(&stages[..1], &weights, &GradientFeatures).is_err());
    }

    #[test]
    fn patch_minima_sharper_than_pixel_on_weak_texture() {
        // Sweep both losses over a fixed set of constant-depth hypotheses
        // and count pixels whose best depth beats the runner-up by a clear
        // margin. Patch aggregation must leave more pixels with a sharp
        // minimum than per-pixel matching on the weakly textured half.
        let bundle = generate_scene(&SceneSpec::weak_texture(3)).unwrap();
        let (refi, srci) = (2usize, 0usize);
        let reference = &bundle.images[refi];
        let (w, h) = (reference.width(), reference.height());
        let weak = bundle.weak_texture_mask(refi);
        let range = bundle.views[refi].depth_range();
        let sweep: Vec<f64> =
            (0..16).map(|k| range.0 + k as f64 * (range.1 - range.0) / 15.0).collect();
        let m = 3;
        let (ref_patch, ref_patch_mask) = extract_patch_image(reference, m).unwrap();

        let mut pixel_curves = vec![Vec::with_capacity(sweep.len()); w * h];
        let mut patch_curves = vec![Vec::with_capacity(sweep.len()); w * h];
        for &d in &sweep {
            let depth = DepthMap::constant(w, h, d, range).unwrap();
            let (plain, plain_mask) =
                render_image(&bundle.images[srci], &bundle.views[refi], &bundle.views[srci], &depth, None)
                    .unwrap();
            let pixel = pixel_photometric(reference, &[(&plain, &plain_mask)]).unwrap();
            let (patch, patch_mask) =
                render_patch_image(&bundle.images[srci], &bundle.views[refi], &bundle.views[srci], &depth, m, None)
                    .unwrap();
            let patch = patch_photometric(&ref_patch, &ref_patch_mask, &[(&patch, &patch_mask)])
                .unwrap();
            for y in 0..h {
                for x in 0..w {
                    pixel_curves[y * w + x]
                        .push(pixel.mask.get(x, y).then(|| pixel.map.get(0, x, y)));
                    patch_curves[y * w + x]
                        .push(patch.mask.get(x, y).then(|| patch.map.get(0, x, y)));
                }
            }
        }

        let sharp = |curve: &[Option<f64>]| -> Option<bool> {
            let vals: Vec<f64> = curve.iter().copied().collect::<Option<Vec<f64>>>()?;
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(sorted[1] - sorted[0] >= 1e-3)
        };
        let mut pixel_sharp = 0usize;
        let mut patch_sharp = 0usize;
        let mut counted = 0usize;
        let mut weak_stats = (0usize, 0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let (Some(pix), Some(pat)) =
                    (sharp(&pixel_curves[y * w + x]), sharp(&patch_curves[y * w + x]))
                else {
                    continue;
                };
                counted += 1;
                pixel_sharp += pix as usize;
                patch_sharp += pat as usize;
                if weak.get(x, y) {
                    weak_stats.0 += 1;
                    weak_stats.1 += pix as usize;
                    weak_stats.2 += pat as usize;
                }
            }
        }
        assert!(counted > 500, "only {counted} pixels fully observed");
        assert!(
            patch_sharp > pixel_sharp,
            "patch {patch_sharp}/{counted} vs pixel {pixel_sharp}/{counted}"
        );
        // On the weak half most margins sit under the global threshold for
        // both losses, but patch aggregation must never look worse there.
        assert!(weak_stats.0 > 500, "only {} weak pixels fully observed", weak_stats.0);
        assert!(weak_stats.2 >= weak_stats.1, "weak half: patch {} vs pixel {}", weak_stats.2, weak_stats.1);
    }
}
