//! Gradient descent on a reference/source depth pair.
//!
//! Plane-sweep regression leaves each pixel somewhere inside its winning
//! hypothesis interval; this module polishes that estimate by descending
//! the analytic gradient of the full loss with respect to depth. Both maps
//! of a pair move jointly: the geometric round trip couples them, so a
//! wrong source depth shows up in the reference gradient and vice versa.
//!
//! Every routine here is serial with a fixed accumulation order, so a
//! refinement run is reproducible bit for bit. The finite-difference
//! oracle is the one deliberately parallel exception: probes at different
//! pixels are independent and collected in input order.

mod gradient;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::CameraView;
use crate::imaging::{Image, ValidMask};
use crate::losses::{total_single_scale, FeatureExtractor, LossWeights, SourceInput};
use crate::plane_sweep::DepthMap;

use gradient::{direction_gradient, pair_safe_masks};

/// The two views of a refinement pair. Depth maps travel separately since
/// refinement produces new ones at every accepted step.
#[derive(Debug, Clone, Copy)]
pub struct PairViews<'a> {
    pub ref_img: &'a Image,
    pub ref_view: &'a CameraView,
    pub src_img: &'a Image,
    pub src_view: &'a CameraView,
}

/// Settings for gradient descent on a depth pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Descent iterations; zero leaves the maps untouched.
    pub iterations: usize,
    /// Depth units a pixel with a dominant gradient moves per iteration.
    /// Stage drivers set this to a tenth of the stage's hypothesis
    /// interval.
    pub step: f64,
    /// Fraction of the map's peak gradient magnitude below which a pixel's
    /// move shrinks proportionally instead of taking the full step.
    pub damping: f64,
    /// Stop once an accepted step improves the loss by less than this.
    pub min_decrease: f64,
    /// Step halvings to try when a step would increase the loss, before
    /// the iteration gives up and freezes the maps.
    pub max_backtracks: usize,
    /// Half-width of the interval around each pixel's starting depth that
    /// refinement may explore; None frees the whole depth range.
    pub span: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 12,
            step: 0.5,
            damping: 0.01,
            min_decrease: 0.0,
            max_backtracks: 5,
            span: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(format!("step must be positive and finite, got {}", self.step)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(invalid(format!(
                "damping must be nonnegative and finite, got {}",
                self.damping
            )));
        }
        if !(self.min_decrease >= 0.0 && self.min_decrease.is_finite()) {
            return Err(invalid(format!(
                "min_decrease must be nonnegative and finite, got {}",
                self.min_decrease
            )));
        }
        if let Some(s) = self.span {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("span must be positive and finite, got {s}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel derivative of the pair objective with respect to both depth
/// maps (zero at masked pixels) plus the objective value it was taken at.
#[derive(Debug, Clone)]
pub struct PairGradient {
    pub reference: Image,
    pub source: Image,
    pub loss: f64,
}

/// Refined maps plus the loss trace: `trace[0]` is the starting objective,
/// every further entry one accepted step. The trace never increases.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub reference: DepthMap,
    pub source: DepthMap,
    pub trace: Vec<f64>,
}

/// Which depth map of the pair an operation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSide {
    Reference,
    Source,
}

fn check_inputs(views: &PairViews, ref_depth: &DepthMap, src_depth: &DepthMap) -> Result<()> {
    let sides = [
        ("reference", views.ref_img, views.ref_view, ref_depth),
        ("source", views.src_img, views.src_view, src_depth),
    ];
    for (name, img, view, depth) in sides {
        if img.width() != view.width() || img.height() != view.height() {
            return Err(invalid(format!("{name} image and view disagree on shape")));
        }
        if depth.width() != view.width() || depth.height() != view.height() {
            return Err(invalid(format!("{name} depth map and view disagree on shape")));
        }
    }
    Ok(())
}

/// The objective refinement descends: the single-scale total of each view
/// scored against the other, summed. Both depth maps enter both directions
/// through the geometric term.
pub fn pair_loss(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    check_inputs(views, ref_depth, src_depth)?;
    let fwd = total_single_scale(
        views.ref_img,
        views.ref_view,
        ref_depth,
        &[SourceInput { image: views.src_img, view: views.src_view, depth: Some(src_depth) }],
        weights,
        extractor,
    )?;
    let bwd = total_single_scale(
        views.src_img,
        views.src_view,
        src_depth,
        &[SourceInput { image: views.ref_img, view: views.ref_view, depth: Some(ref_depth) }],
        weights,
        extractor,
    )?;
    Ok(fwd.total + bwd.total)
}

/// Analytic per-pixel gradient of [`pair_loss`] with respect to both depth
/// maps. `loss` reproduces the forward value bit for bit, so callers get
/// the objective for free.
pub fn loss_gradient(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<PairGradient> {
    check_inputs(views, ref_depth, src_depth)?;
    let fwd = direction_gradient(
        views.ref_img,
        views.ref_view,
        ref_depth,
        views.src_img,
        views.src_view,
        src_depth,
        weights,
        extractor,
    )?;
    let bwd = direction_gradient(
        views.src_img,
        views.src_view,
        src_depth,
        views.ref_img,
        views.ref_view,
        ref_depth,
        weights,
        extractor,
    )?;
    let mut reference = fwd.own;
    for (o, c) in reference.data_mut().iter_mut().zip(bwd.cross.data()) {
        *o += c;
    }
    let mut source = bwd.own;
    for (o, c) in source.data_mut().iter_mut().zip(fwd.cross.data()) {
        *o += c;
    }
    Ok(PairGradient { reference, source, loss: fwd.total + bwd.total })
}

/// Second-order central difference (f(at+h) - f(at-h)) / 2h.
pub fn central_difference(
    f: &mut dyn FnMut(f64) -> Result<f64>,
    at: f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step must be positive and finite, got {h}")));
    }
    Ok((f(at + h)? - f(at - h)?) / (2.0 * h))
}

/// Finite-difference probe of [`pair_loss`] at the listed pixels of one
/// depth map, with a step of `h_rel` times the pixel's depth. Masked
/// pixels report zero. The probe is clamped to the depth range, so at the
/// range border this degrades to a one-sided difference over the part of
/// the step that fits.
///
/// This recomputes the full objective per probe and shares no derivative
/// code with [`loss_gradient`], which is the point: it is the independent
/// oracle the analytic gradient is checked against.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    side: PairSide,
    pixels: &[(usize, usize)],
    h_rel: f64,
) -> Result<Vec<f64>> {
    check_inputs(views, ref_depth, src_depth)?;
    if !(h_rel > 0.0 && h_rel.is_finite()) {
        return Err(invalid(format!("relative step must be positive and finite, got {h_rel}")));
    }
    let probed = match side {
        PairSide::Reference => ref_depth,
        PairSide::Source => src_depth,
    };
    for &(x, y) in pixels {
        if x >= probed.width() || y >= probed.height() {
            return Err(invalid(format!("probe pixel ({x}, {y}) is out of bounds")));
        }
    }
    pixels
        .par_iter()
        .map(|&(x, y)| -> Result<f64> {
            let Some(d) = probed.get(x, y) else {
                return Ok(0.0);
            };
            let h = h_rel * d;
            let mut up = probed.clone();
            up.set(x, y, d + h);
            let mut down = probed.clone();
            down.set(x, y, d - h);
            let width = up.value(x, y) - down.value(x, y);
            let (lu, ld) = match side {
                PairSide::Reference => (
                    pair_loss(views, &up, src_depth, weights, extractor)?,
                    pair_loss(views, &down, src_depth, weights, extractor)?,
                ),
                PairSide::Source => (
                    pair_loss(views, ref_depth, &up, weights, extractor)?,
                    pair_loss(views, ref_depth, &down, weights, extractor)?,
                ),
            };
            Ok((lu - ld) / width)
        })
        .collect()
}

/// Pixels of each depth map where a finite-difference probe of relative
/// size `h_rel` is trustworthy: the probe stays inside the depth range, no
/// interpolated read sits within `band` pixels (plus the probe's own
/// coordinate motion) of a bilinear cell boundary, and no absolute-value
/// residual or smoothness stencil the probe can move sits close enough to
/// its kink to change sign.
pub fn fd_safe_mask(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    h_rel: f64,
    band: f64,
) -> Result<(ValidMask, ValidMask)> {
    check_inputs(views, ref_depth, src_depth)?;
    weights.validate()?;
    if !(h_rel > 0.0 && h_rel.is_finite()) || !(band >= 0.0 && band.is_finite()) {
        return Err(invalid("probe step and band must be finite and usable"));
    }
    pair_safe_masks(
        views.ref_img,
        views.ref_view,
        ref_depth,
        views.src_img,
        views.src_view,
        src_depth,
        weights,
        extractor,
        h_rel,
        band,
    )
}

fn max_abs_masked(g: &Image, mask: &ValidMask) -> f64 {
    let mut best = 0.0f64;
    for (v, ok) in g.channel(0).iter().zip(mask.data()) {
        if *ok {
            best = best.max(v.abs());
        }
    }
    best
}

/// One synchronized descent step: every valid pixel moves against its
/// gradient, with the move normalized so a dominant-gradient pixel travels
/// exactly `step` depth units and weaker gradients shrink smoothly via the
/// damping floor. Moves are clamped to the span around the starting map
/// and to the depth range.
fn stepped(
    current: &DepthMap,
    anchor: &DepthMap,
    g: &Image,
    gmax: f64,
    step: f64,
    cfg: &RefineConfig,
) -> DepthMap {
    let mut out = current.clone();
    if gmax == 0.0 {
        return out;
    }
    let floor = cfg.damping * gmax;
    for y in 0..current.height() {
        for x in 0..current.width() {
            let Some(d) = current.get(x, y) else {
                continue;
            };
            let gv = g.get(0, x, y);
            if gv == 0.0 {
                continue;
            }
            let mut nd = d - step * gv / (gv.abs() + floor);
            if let Some(half) = cfg.span {
                let a = anchor.value(x, y);
                nd = nd.clamp(a - half, a + half);
            }
            out.set(x, y, nd);
        }
    }
    out
}

/// Descend [`pair_loss`] jointly on both depth maps. Each iteration takes
/// one synchronized step; if the step raises the loss the step size is
/// halved up to `max_backtracks` times, and an iteration that cannot find
/// a non-increasing step freezes the maps and stops. Masked pixels never
/// move, valid pixels never leave the depth range or the configured span
/// around their start.
pub fn refine_depth(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    check_inputs(views, ref_depth, src_depth)?;
    let mut current_ref = ref_depth.clone();
    let mut current_src = src_depth.clone();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(pair_loss(views, &current_ref, &current_src, weights, extractor)?);
    for _ in 0..cfg.iterations {
        let g = loss_gradient(views, &current_ref, &current_src, weights, extractor)?;
        let gmax_ref = max_abs_masked(&g.reference, current_ref.mask());
        let gmax_src = max_abs_masked(&g.source, current_src.mask());
        if gmax_ref == 0.0 && gmax_src == 0.0 {
            break;
        }
        let prev = *trace.last().expect("trace is seeded with the starting loss");
        let mut step = cfg.step;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let cand_ref = stepped(&current_ref, ref_depth, &g.reference, gmax_ref, step, cfg);
            let cand_src = stepped(&current_src, src_depth, &g.source, gmax_src, step, cfg);
            let loss = pair_loss(views, &cand_ref, &cand_src, weights, extractor)?;
            if loss <= prev {
                accepted = Some((cand_ref, cand_src, loss));
                break;
            }
            step *= 0.5;
        }
        let Some((cand_ref, cand_src, loss)) = accepted else {
            break;
        };
        current_ref = cand_ref;
        current_src = cand_src;
        trace.push(loss);
        if prev - loss < cfg.min_decrease {
            break;
        }
    }
    Ok(RefineOutcome { reference: current_ref, source: current_src, trace })
}
