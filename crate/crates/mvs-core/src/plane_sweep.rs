//! Plane-sweep cost volumes and soft depth regression.
//!
//! A cost volume scores a set of depth hypotheses per reference pixel by
//! warping every source image onto the reference at each hypothesis and
//! taking the variance across views; low variance means the views agree on
//! what that pixel looks like at that depth. Depth is then regressed as the
//! softmin-weighted expectation over hypotheses rather than a hard argmin,
//! which keeps the estimate sub-interval accurate.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{CameraView, Warper};
use crate::imaging::{bilinear_at, in_hull, Image, ValidMask};

/// Per-pixel depth estimate with confidence and a validity mask.
///
/// Invariant: valid pixels hold a finite depth inside `range`; invalid
/// pixels hold the range midpoint so downstream consumers always see a
/// plausible number, and confidence 0.
#[derive(Debug, Clone)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    confidence: Vec<f64>,
    mask: ValidMask,
    range: (f64, f64),
}

impl DepthMap {
    /// All-invalid map; every pixel sits at the range midpoint.
    pub fn new(width: usize, height: usize, range: (f64, f64)) -> Result<Self> {
        check_range(range)?;
        if width == 0 || height == 0 {
            return Err(invalid("depth map dimensions must be positive"));
        }
        let mid = 0.5 * (range.0 + range.1);
        Ok(Self {
            width,
            height,
            depth: vec![mid; width * height],
            confidence: vec![0.0; width * height],
            mask: ValidMask::filled(width, height, false),
            range,
        })
    }

    /// Fully valid map holding a single depth everywhere.
    pub fn constant(width: usize, height: usize, d: f64, range: (f64, f64)) -> Result<Self> {
        let mut map = Self::new(width, height, range)?;
        if !(d >= range.0 && d <= range.1) {
            return Err(invalid(format!("constant depth {d} outside range {range:?}")));
        }
        map.depth.fill(d);
        map.confidence.fill(1.0);
        map.mask = ValidMask::filled(width, height, true);
        Ok(map)
    }

    /// Assemble from raw parts, validating the stated invariants.
    pub fn from_parts(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        confidence: Vec<f64>,
        mask: ValidMask,
        range: (f64, f64),
    ) -> Result<Self> {
        check_range(range)?;
        let n = width * height;
        if depth.len() != n || confidence.len() != n || mask.width() != width || mask.height() != height
        {
            return Err(invalid("depth map part dimensions disagree"));
        }
        for i in 0..n {
            if mask.data()[i] {
                let d = depth[i];
                if !(d.is_finite() && d >= range.0 && d <= range.1) {
                    return Err(invalid(format!(
                        "valid pixel {i} holds depth {d} outside range {range:?}"
                    )));
                }
            }
            if !confidence[i].is_finite() || confidence[i] < 0.0 {
                return Err(invalid(format!("confidence at {i} must be finite and nonnegative")));
            }
        }
        Ok(Self { width, height, depth, confidence, mask, range })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    /// Depth at a valid pixel, None where masked out.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.mask.get(x, y).then(|| self.depth[y * self.width + x])
    }

    /// Stored depth regardless of validity (midpoint placeholder when invalid).
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn confidence(&self, x: usize, y: usize) -> f64 {
        self.confidence[y * self.width + x]
    }

    pub fn mask(&self) -> &ValidMask {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.count()
    }

    /// Mark a pixel valid with the given depth, clamped into range.
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        debug_assert!(d.is_finite());
        self.depth[y * self.width + x] = d.clamp(self.range.0, self.range.1);
        self.mask.set(x, y, true);
    }

    pub fn set_confidence(&mut self, x: usize, y: usize, c: f64) {
        self.confidence[y * self.width + x] = c;
    }

    /// Mark a pixel invalid and reset it to the midpoint placeholder.
    pub fn set_invalid(&mut self, x: usize, y: usize) {
        self.depth[y * self.width + x] = 0.5 * (self.range.0 + self.range.1);
        self.confidence[y * self.width + x] = 0.0;
        self.mask.set(x, y, false);
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidence
    }
}

fn check_range(range: (f64, f64)) -> Result<()> {
    if !(range.0 > 0.0 && range.1 > range.0 && range.1.is_finite()) {
        return Err(invalid(format!("depth range {range:?} must satisfy 0 < min < max")));
    }
    Ok(())
}

/// Depth samples to test per pixel, either shared by the whole image or
/// narrowed around a previous estimate per pixel.
#[derive(Debug, Clone)]
pub enum DepthHypotheses {
    Global {
        samples: Vec<f64>,
        /// Distance between consecutive samples.
        spacing: f64,
        /// Full scene depth range the samples were drawn from.
        range: (f64, f64),
    },
    PerPixel {
        width: usize,
        height: usize,
        count: usize,
        /// Pixel-major: samples for pixel (x, y) start at (y*width+x)*count.
        samples: Vec<f64>,
        /// Nominal spacing of an unclamped pixel span.
        spacing: f64,
        range: (f64, f64),
    },
}

impl DepthHypotheses {
    pub fn count(&self) -> usize {
        match self {
            Self::Global { samples, .. } => samples.len(),
            Self::PerPixel { count, .. } => *count,
        }
    }

    pub fn spacing(&self) -> f64 {
        match self {
            Self::Global { spacing, .. } | Self::PerPixel { spacing, .. } => *spacing,
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            Self::Global { range, .. } | Self::PerPixel { range, .. } => *range,
        }
    }

    /// True when per-pixel hypotheses match the given image shape (global
    /// hypotheses match any shape).
    pub fn matches(&self, width: usize, height: usize) -> bool {
        match self {
            Self::Global { .. } => true,
            Self::PerPixel { width: w, height: h, .. } => *w == width && *h == height,
        }
    }

    pub fn sample(&self, x: usize, y: usize, k: usize) -> f64 {
        match self {
            Self::Global { samples, .. } => samples[k],
            Self::PerPixel { width, count, samples, .. } => samples[(y * width + x) * count + k],
        }
    }

    /// Inclusive (first, last) sample for a pixel; the search interval the
    /// refinement stage is allowed to move within.
    pub fn span(&self, x: usize, y: usize) -> (f64, f64) {
        let n = self.count();
        (self.sample(x, y, 0), self.sample(x, y, n - 1))
    }
}

/// Evenly spaced global hypotheses covering the whole range inclusively.
pub fn make_hypotheses(range: (f64, f64), count: usize) -> Result<DepthHypotheses> {
    check_range(range)?;
    if count < 2 {
        return Err(invalid(format!("need at least 2 hypotheses, got {count}")));
    }
    let spacing = (range.1 - range.0) / (count - 1) as f64;
    let samples = sample_interval(range.0, range.1, count);
    Ok(DepthHypotheses::Global { samples, spacing, range })
}

/// `count` evenly spaced samples over [lo, hi], endpoints exact.
fn sample_interval(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|k| if k == count - 1 { hi } else { lo + k as f64 * step })
        .collect()
}

/// Per-pixel hypotheses centred on a previous estimate: each valid pixel
/// gets `count` samples across +-count*gamma around its depth, clamped to
/// the map's global range; invalid pixels fall back to the full range.
pub fn narrow_range(prev: &DepthMap, count: usize, gamma: f64) -> Result<DepthHypotheses> {
    if count < 2 {
        return Err(invalid(format!("need at least 2 hypotheses, got {count}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("hypothesis spacing must be positive, got {gamma}")));
    }
    let (w, h) = (prev.width(), prev.height());
    let range = prev.range();
    let half = count as f64 * gamma;
    let mut samples = Vec::with_capacity(w * h * count);
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = match prev.get(x, y) {
                Some(d) => ((d - half).max(range.0), (d + half).min(range.1)),
                None => range,
            };
            samples.extend(sample_interval(lo, hi, count));
        }
    }
    Ok(DepthHypotheses::PerPixel { width: w, height: h, count, samples, spacing: gamma, range })
}

/// Pull a depth map to another resolution with corner-aligned bilinear
/// interpolation of the stored values. An output pixel is valid only when
/// every input pixel contributing to its read is valid, so placeholder
/// values at invalid pixels never blend into valid output.
pub fn resample_depth(depth: &DepthMap, width: usize, height: usize) -> Result<DepthMap> {
    if width == 0 || height == 0 {
        return Err(invalid("resample target must be positive"));
    }
    let mut stacked = depth.depths().to_vec();
    stacked.extend_from_slice(depth.confidences());
    let values = Image::from_data(2, depth.width(), depth.height(), stacked)?;
    let mut out = DepthMap::new(width, height, depth.range())?;
    for y in 0..height {
        let sy = crate::imaging::resize_coord(y, depth.height(), height);
        for x in 0..width {
            let sx = crate::imaging::resize_coord(x, depth.width(), width);
            if crate::imaging::neighbors_valid(depth.mask(), sx, sy) {
                out.set(x, y, bilinear_at(&values, 0, sx, sy));
                out.set_confidence(x, y, bilinear_at(&values, 1, sx, sy));
            }
        }
    }
    Ok(out)
}

/// Matching cost per pixel per hypothesis, plus a validity flag. A cell is
/// invalid when no source view sees the hypothesised point.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    count: usize,
    /// Pixel-major, hypothesis-minor: cost for (x, y, k) at (y*w+x)*count+k.
    costs: Vec<f64>,
    valid: Vec<bool>,
}

impl CostVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn cost(&self, x: usize, y: usize, k: usize) -> f64 {
        self.costs[(y * self.width + x) * self.count + k]
    }

    pub fn valid(&self, x: usize, y: usize, k: usize) -> bool {
        self.valid[(y * self.width + x) * self.count + k]
    }

    /// Add a constant to every valid cell (used to probe regression
    /// invariances; matching semantics are unchanged).
    pub fn offset(&self, delta: f64) -> CostVolume {
        let mut out = self.clone();
        for (c, &v) in out.costs.iter_mut().zip(&self.valid) {
            if v {
                *c += delta;
            }
        }
        out
    }
}

/// Build the variance matching cost over the reference and all sources.
///
/// For each pixel and hypothesis the reference pixel is warped into every
/// source. A cell is valid only when every source sees the hypothesised
/// point (the warp stays inside the image and in front of the camera);
/// its cost is the per-channel population variance over the reference
/// value and all source samples, averaged over channels. Cells sampled by
/// fewer views are flagged invalid rather than scored, since a variance
/// over fewer samples is systematically lower and would bias the
/// regression toward hypotheses that escape the sources' frustums.
pub fn build_cost_volume(
    reference: &Image,
    ref_view: &CameraView,
    sources: &[(&Image, &CameraView)],
    hypotheses: &DepthHypotheses,
) -> Result<CostVolume> {
    let (w, h, channels) = (reference.width(), reference.height(), reference.channels());
    if w != ref_view.width() || h != ref_view.height() {
        return Err(invalid("reference image and view dimensions disagree"));
    }
    if sources.is_empty() {
        return Err(invalid("need at least one source view"));
    }
    for (img, view) in sources {
        if img.width() != view.width() || img.height() != view.height() {
            return Err(invalid("source image and view dimensions disagree"));
        }
        if img.channels() != channels {
            return Err(invalid("all images must share the channel count"));
        }
    }
    if !hypotheses.matches(w, h) {
        return Err(invalid("per-pixel hypotheses do not match the reference shape"));
    }

    let warpers: Vec<Warper> = sources.iter().map(|(_, v)| Warper::between(ref_view, v)).collect();
    let count = hypotheses.count();
    let mut costs = vec![0.0; w * h * count];
    let mut valid = vec![false; w * h * count];

    costs
        .par_chunks_mut(w * count)
        .zip(valid.par_chunks_mut(w * count))
        .enumerate()
        .for_each(|(y, (cost_row, valid_row))| {
            // view-major sample buffer for one (pixel, hypothesis) cell
            let mut vals = vec![0.0; (sources.len() + 1) * channels];
            for x in 0..w {
                let rays: Vec<_> =
                    warpers.iter().map(|wp| wp.ray(&nalgebra::Vector2::new(x as f64, y as f64))).collect();
                for k in 0..count {
                    let d = hypotheses.sample(x, y, k);
                    for c in 0..channels {
                        vals[c] = reference.get(c, x, y);
                    }
                    let mut complete = true;
                    for (s, (img, _)) in sources.iter().enumerate() {
                        let warp = warpers[s].warp_ray(&rays[s], d);
                        if !warp.is_valid()
                            || !in_hull(warp.coords.x, warp.coords.y, img.width(), img.height())
                        {
                            complete = false;
                            break;
                        }
                        for c in 0..channels {
                            vals[(s + 1) * channels + c] =
                                bilinear_at(img, c, warp.coords.x, warp.coords.y);
                        }
                    }
                    if !complete {
                        continue;
                    }
                    let cell = x * count + k;
                    let views = sources.len() + 1;
                    let mut cost = 0.0;
                    for c in 0..channels {
                        let mut mean = 0.0;
                        for v in 0..views {
                            mean += vals[v * channels + c];
                        }
                        mean /= views as f64;
                        let mut var = 0.0;
                        for v in 0..views {
                            let d = vals[v * channels + c] - mean;
                            var += d * d;
                        }
                        cost += var / views as f64;
                    }
                    cost_row[cell] = cost / channels as f64;
                    valid_row[cell] = true;
                }
            }
        });

    Ok(CostVolume { width: w, height: h, count, costs, valid })
}

/// Soft argmin over hypotheses: weights are a softmax of negated costs at
/// the given temperature, depth is the weighted expectation and confidence
/// the peak weight. Pixels with no valid cell come back masked invalid.
pub fn regress_depth(
    volume: &CostVolume,
    hypotheses: &DepthHypotheses,
    temperature: f64,
) -> Result<DepthMap> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    if !hypotheses.matches(volume.width, volume.height) || hypotheses.count() != volume.count {
        return Err(invalid("hypotheses do not match the cost volume shape"));
    }
    let (w, h) = (volume.width, volume.height);
    let mut map = DepthMap::new(w, h, hypotheses.range())?;
    for y in 0..h {
        for x in 0..w {
            let mut min_cost = f64::INFINITY;
            for k in 0..volume.count {
                if volume.valid(x, y, k) {
                    min_cost = min_cost.min(volume.cost(x, y, k));
                }
            }
            if !min_cost.is_finite() {
                continue; // stays invalid
            }
            // Shift by the minimum before exponentiating; the weights are
            // unchanged and the largest exponent is exactly zero.
            let mut wsum = 0.0;
            let mut dsum = 0.0;
            for k in 0..volume.count {
                if !volume.valid(x, y, k) {
                    continue;
                }
                let e = (-(volume.cost(x, y, k) - min_cost) / temperature).exp();
                wsum += e;
                dsum += e * hypotheses.sample(x, y, k);
            }
            map.set(x, y, dsum / wsum);
            map.set_confidence(x, y, 1.0 / wsum);
        }
    }
    Ok(map)
}
