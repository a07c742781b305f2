//! Per-pixel structural similarity over a uniform local window.

use super::Image;
use crate::error::{invalid, Result};

/// Inclusive window bounds around (x, y), clipped at the image border so
/// border pixels use the in-bounds part of the window.
#[inline]
pub(crate) fn window_bounds(
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    window: usize,
) -> (usize, usize, usize, usize) {
    let r = window / 2;
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    let x1 = (x + r).min(w - 1);
    let y1 = (y + r).min(h - 1);
    (x0, x1, y0, y1)
}

/// SSIM of `a` against `b` per pixel and channel, computed over a uniformly
/// weighted `window` x `window` neighborhood (population statistics, window
/// clipped at borders). Values lie in [-1, 1]; identical inputs give 1.
pub fn ssim_map(a: &Image, b: &Image, window: usize, c1: f64, c2: f64) -> Result<Image> {
    if !a.same_shape(b) {
        return Err(invalid("ssim inputs must share shape"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(invalid(format!("ssim window must be odd, got {window}")));
    }
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(invalid("ssim stabilizers must be positive"));
    }
    let (w, h) = (a.width(), a.height());
    let mut out = Image::new(a.channels(), w, h);
    for c in 0..a.channels() {
        for y in 0..h {
            for x in 0..w {
                let (x0, x1, y0, y1) = window_bounds(x, y, w, h, window);
                let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wy in y0..=y1 {
                    for wx in x0..=x1 {
                        let va = a.get(c, wx, wy);
                        let vb = b.get(c, wx, wy);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let ma = sa / n;
                let mb = sb / n;
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                out.set(c, x, y, s);
            }
        }
    }
    Ok(out)
}
