//! Float rasters and the resampling machinery every loss is built on:
//! bilinear lookup of warped coordinates, patch extraction, SSIM maps,
//! finite-difference gradients and corner-aligned resizing.

mod gradients;
mod ssim;

pub use gradients::{spatial_gradients, Gradients};
pub(crate) use ssim::window_bounds;
pub use ssim::ssim_map;

use crate::error::{invalid, Result};
use crate::geometry::WarpField;

/// Planar multi-channel float raster (channel-major, then row-major).
/// Photometric data lives in [0, 1]; derived maps (losses, gradients, SSIM)
/// reuse the container with their own ranges. All values must stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, width: usize, height: usize) -> Image {
        Image {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn from_fn(
        channels: usize,
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Image {
        let mut img = Image::new(channels, width, height);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, x, y, f(c, x, y));
                }
            }
        }
        img
    }

    pub fn from_data(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != channels * width * height {
            return Err(invalid(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image data must be finite"));
        }
        Ok(Image {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }
}

/// Per-pixel boolean validity, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn filled(width: usize, height: usize, value: bool) -> ValidMask {
        ValidMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        ValidMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Patch member offsets enumerated row-major over the m x m window, so for
/// m = 3 the order is (-1,-1), (0,-1), (1,-1), (-1,0), ... and the center
/// sits at index m*m/2.
pub fn patch_offsets(m: usize) -> Vec<(i32, i32)> {
    assert!(m >= 1 && m % 2 == 1, "patch size must be odd, got {m}");
    let r = (m / 2) as i32;
    let mut out = Vec::with_capacity(m * m);
    for dy in -r..=r {
        for dx in -r..=r {
            out.push((dx, dy));
        }
    }
    out
}

/// Image whose channels stack every patch member of a base image: channel
/// c*m*m + j at pixel p holds base channel c at pixel p + delta_j. Lifting
/// pixels to patch vectors this way lets pixel-wise losses act patch-wise
/// without changing their shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchImage {
    base_channels: usize,
    patch_size: usize,
    image: Image,
}

impl PatchImage {
    pub fn from_parts(base_channels: usize, patch_size: usize, image: Image) -> Result<PatchImage> {
        if image.channels() != base_channels * patch_size * patch_size {
            return Err(invalid(format!(
                "patch image needs {} channels, got {}",
                base_channels * patch_size * patch_size,
                image.channels()
            )));
        }
        Ok(PatchImage {
            base_channels,
            patch_size,
            image,
        })
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn into_image(self) -> Image {
        self.image
    }
}

/// Lift an image to its patch form. The mask is false on the border ring of
/// width m/2 where the window would leave the image; border pixel values are
/// written as zero and must never be consumed unmasked.
pub fn extract_patch_image(img: &Image, m: usize) -> Result<(PatchImage, ValidMask)> {
    if m == 0 || m % 2 == 0 {
        return Err(invalid(format!("patch size must be odd and positive, got {m}")));
    }
    let r = m / 2;
    let (w, h, c_in) = (img.width(), img.height(), img.channels());
    if w < m || h < m {
        return Err(invalid(format!("image {w}x{h} too small for {m}x{m} patches")));
    }
    let offsets = patch_offsets(m);
    let mut out = Image::new(c_in * m * m, w, h);
    let mut mask = ValidMask::filled(w, h, false);
    for y in r..h - r {
        for x in r..w - r {
            mask.set(x, y, true);
        }
    }
    for c in 0..c_in {
        for (j, &(dx, dy)) in offsets.iter().enumerate() {
            let oc = c * m * m + j;
            for y in r..h - r {
                for x in r..w - r {
                    let sx = (x as i32 + dx) as usize;
                    let sy = (y as i32 + dy) as usize;
                    out.set(oc, x, y, img.get(c, sx, sy));
                }
            }
        }
    }
    Ok((PatchImage::from_parts(c_in, m, out)?, mask))
}

#[inline]
pub(crate) fn cell(coord: f64, size: usize) -> (usize, usize, f64) {
    // Cell selection by floor gives the right-sided limit at lattice points;
    // the last row/column folds into the previous cell with fraction 1 so
    // border lattice points stay exact. Single-pixel axes degenerate to
    // (0, 0, 0).
    if size == 1 {
        return (0, 0, 0.0);
    }
    let mut i = coord.floor() as isize;
    if i > size as isize - 2 {
        i = size as isize - 2;
    }
    if i < 0 {
        i = 0;
    }
    (i as usize, i as usize + 1, coord - i as f64)
}

/// Bilinear lookup of one channel at in-hull coordinates. Callers are
/// responsible for the bounds check; coordinates are clamped to the last
/// cell so lattice points on the border evaluate exactly.
#[inline]
pub fn bilinear_at(img: &Image, c: usize, x: f64, y: f64) -> f64 {
    let (x0, x1, fx) = cell(x, img.width());
    let (y0, y1, fy) = cell(y, img.height());
    let v00 = img.get(c, x0, y0);
    let v10 = img.get(c, x1, y0);
    let v01 = img.get(c, x0, y1);
    let v11 = img.get(c, x1, y1);
    let top = v00 + fx * (v10 - v00);
    let bot = v01 + fx * (v11 - v01);
    top + fy * (bot - top)
}

/// Bilinear lookup plus the spatial derivative of the interpolant. At cell
/// boundaries this is the right-sided limit.
#[inline]
pub fn bilinear_with_gradient(img: &Image, c: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (x0, x1, fx) = cell(x, img.width());
    let (y0, y1, fy) = cell(y, img.height());
    let v00 = img.get(c, x0, y0);
    let v10 = img.get(c, x1, y0);
    let v01 = img.get(c, x0, y1);
    let v11 = img.get(c, x1, y1);
    let top = v00 + fx * (v10 - v00);
    let bot = v01 + fx * (v11 - v01);
    let gx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
    let gy = bot - top;
    (top + fy * (bot - top), gx, gy)
}

pub(crate) fn in_hull(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// True when every pixel contributing to a bilinear read at (x, y) is valid
/// in `mask`. Coordinates must already be in hull.
pub(crate) fn neighbors_valid(mask: &ValidMask, x: f64, y: f64) -> bool {
    let (x0, x1, fx) = cell(x, mask.width());
    let (y0, y1, fy) = cell(y, mask.height());
    // A zero fraction means the far neighbor has zero weight; skip it so a
    // lattice-exact read next to an invalid pixel stays usable.
    let need_x1 = fx > 0.0;
    let need_y1 = fy > 0.0;
    if !mask.get(x0, y0) {
        return false;
    }
    if need_x1 && !mask.get(x1, y0) {
        return false;
    }
    if need_y1 && !mask.get(x0, y1) {
        return false;
    }
    if need_x1 && need_y1 && !mask.get(x1, y1) {
        return false;
    }
    true
}

/// Sample all channels of `img` at the warped coordinates. Output pixels are
/// masked false (value 0) where the warp was invalid, the target leaves the
/// image, or any contributing source pixel is invalid in `source_mask`.
pub fn bilinear_sample(
    img: &Image,
    field: &WarpField,
    source_mask: Option<&ValidMask>,
) -> (Image, ValidMask) {
    let (w, h) = (field.width, field.height);
    let mut out = Image::new(img.channels(), w, h);
    let mut mask = ValidMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let warp = field.get(x, y);
            if !warp.is_valid() || !in_hull(warp.coords.x, warp.coords.y, img.width(), img.height())
            {
                continue;
            }
            if let Some(sm) = source_mask {
                if !neighbors_valid(sm, warp.coords.x, warp.coords.y) {
                    continue;
                }
            }
            mask.set(x, y, true);
            for c in 0..img.channels() {
                out.set(c, x, y, bilinear_at(img, c, warp.coords.x, warp.coords.y));
            }
        }
    }
    (out, mask)
}

pub(crate) fn resize_coord(i: usize, from: usize, to: usize) -> f64 {
    if to <= 1 {
        0.0
    } else {
        i as f64 * (from - 1) as f64 / (to - 1) as f64
    }
}

/// Corner-aligned bilinear resampling: output corners map exactly onto input
/// corners, interior coordinates scale by (from-1)/(to-1).
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(invalid("resize target must be positive"));
    }
    let mut out = Image::new(img.channels(), width, height);
    for y in 0..height {
        let sy = resize_coord(y, img.height(), height);
        for x in 0..width {
            let sx = resize_coord(x, img.width(), width);
            for c in 0..img.channels() {
                out.set(c, x, y, bilinear_at(img, c, sx, sy));
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor mask resampling with the same corner-aligned mapping.
pub fn resize_mask_nearest(mask: &ValidMask, width: usize, height: usize) -> ValidMask {
    let mut out = ValidMask::filled(width, height, false);
    for y in 0..height {
        let sy = resize_coord(y, mask.height(), height).round() as usize;
        for x in 0..width {
            let sx = resize_coord(x, mask.width(), width).round() as usize;
            out.set(x, y, mask.get(sx.min(mask.width() - 1), sy.min(mask.height() - 1)));
        }
    }
    out
}

/// Concatenate a fine-scale patch image with its coarser neighbor upsampled
/// to the fine resolution. Output has 2*C*m*m channels (coarse block after
/// the fine one); the mask is the AND of the fine mask with the
/// nearest-upsampled coarse mask.
pub fn merge_patch_scales(
    fine: &PatchImage,
    fine_mask: &ValidMask,
    coarse: &PatchImage,
    coarse_mask: &ValidMask,
) -> Result<(PatchImage, ValidMask)> {
    if fine.base_channels() != coarse.base_channels() || fine.patch_size() != coarse.patch_size() {
        return Err(invalid("patch images to merge must share base channels and patch size"));
    }
    let (w, h) = (fine.image().width(), fine.image().height());
    let up = resize_bilinear(coarse.image(), w, h)?;
    let up_mask = resize_mask_nearest(coarse_mask, w, h);
    let block = fine.image().channels();
    let mut merged = Image::new(2 * block, w, h);
    merged.data_mut()[..block * w * h].copy_from_slice(fine.image().data());
    merged.data_mut()[block * w * h..].copy_from_slice(up.data());
    let patch = PatchImage::from_parts(2 * fine.base_channels(), fine.patch_size(), merged)?;
    Ok((patch, fine_mask.and(&up_mask)))
}
