//! First- and second-order spatial derivatives with replicated borders.

use super::Image;

/// Central-difference derivatives per axis plus the 5-point Laplacian.
/// Borders replicate the edge pixel, so one-sided slopes halve there.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub gx: Image,
    pub gy: Image,
    pub laplacian: Image,
}

impl Gradients {
    /// Euclidean first-order magnitude per channel.
    pub fn magnitude(&self) -> Image {
        let mut out = self.gx.clone();
        for (o, gy) in out.data_mut().iter_mut().zip(self.gy.data()) {
            *o = o.hypot(*gy);
        }
        out
    }
}

#[inline]
fn clamp_x(img: &Image, c: usize, x: isize, y: usize) -> f64 {
    let xc = x.clamp(0, img.width() as isize - 1) as usize;
    img.get(c, xc, y)
}

#[inline]
fn clamp_y(img: &Image, c: usize, x: usize, y: isize) -> f64 {
    let yc = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(c, x, yc)
}

/// Derivatives of every channel: gx = (I(x+1) - I(x-1)) / 2 and the 4-neighbor
/// Laplacian, indices clamped at the border.
pub fn spatial_gradients(img: &Image) -> Gradients {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut gx = Image::new(ch, w, h);
    let mut gy = Image::new(ch, w, h);
    let mut lap = Image::new(ch, w, h);
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let xp = clamp_x(img, c, x as isize + 1, y);
                let xm = clamp_x(img, c, x as isize - 1, y);
                let yp = clamp_y(img, c, x, y as isize + 1);
                let ym = clamp_y(img, c, x, y as isize - 1);
                let center = img.get(c, x, y);
                gx.set(c, x, y, (xp - xm) / 2.0);
                gy.set(c, x, y, (yp - ym) / 2.0);
                lap.set(c, x, y, xp + xm + yp + ym - 4.0 * center);
            }
        }
    }
    Gradients { gx, gy, laplacian: lap }
}
