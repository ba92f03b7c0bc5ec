//! Transform application: image resampling, field and affine composition,
//! landmark mapping, and the Jacobian determinant map.
//!
//! Warping uses the pull-back convention: each output pixel samples the
//! source image at the transformed coordinate. Samples beyond the image
//! rectangle clamp to the nearest edge pixel unless an explicit fill value
//! is supplied.

use crate::core::{AffineTransform2D, DisplacementField, LandmarkSet, ScalarImage};
use crate::error::{Error, Result};

/// Full fixed-to-moving mapping `x -> A(x + u(x))` recovered by the
/// two-stage pipeline: `field` samples into the affinely-resampled moving
/// image, `affine` carries the result into the original moving frame.
#[derive(Debug, Clone)]
pub struct TotalTransform {
    pub affine: AffineTransform2D,
    pub field: DisplacementField,
}

impl TotalTransform {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (ux, uy) = sample_field(&self.field, x, y);
        self.affine.apply(x + ux, y + uy)
    }
}

/// Bilinear sample with clamp-to-edge addressing.
#[inline]
pub(crate) fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let clamp_x = |v: i64| v.clamp(0, width as i64 - 1) as usize;
    let clamp_y = |v: i64| v.clamp(0, height as i64 - 1) as usize;
    let x0 = clamp_x(x0f as i64);
    let x1 = clamp_x(x0f as i64 + 1);
    let y0 = clamp_y(y0f as i64);
    let y1 = clamp_y(y0f as i64 + 1);
    let top = data[y0 * width + x0] * (1.0 - fx) + data[y0 * width + x1] * fx;
    let bot = data[y1 * width + x0] * (1.0 - fx) + data[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[inline]
fn bilinear_or_fill(
    data: &[f64],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    fill: Option<f64>,
) -> f64 {
    if let Some(v) = fill {
        if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
            return v;
        }
    }
    bilinear(data, width, height, x, y)
}

/// Bilinear sample of an image at a continuous coordinate (clamped
/// outside).
#[inline]
pub fn sample_image(img: &ScalarImage, x: f64, y: f64) -> f64 {
    bilinear(img.data(), img.width(), img.height(), x, y)
}

/// Bilinear sample of a displacement field (clamped outside).
#[inline]
pub fn sample_field(field: &DisplacementField, x: f64, y: f64) -> (f64, f64) {
    (
        bilinear(field.dx(), field.width(), field.height(), x, y),
        bilinear(field.dy(), field.width(), field.height(), x, y),
    )
}

/// Resamples `moving` through the displacement field:
/// `out(x) = moving(x + u(x))`.
pub fn warp_image(
    moving: &ScalarImage,
    field: &DisplacementField,
    fill: Option<f64>,
) -> Result<ScalarImage> {
    if moving.width() != field.width() || moving.height() != field.height() {
        return Err(Error::SizeMismatch(format!(
            "image {}x{} vs field {}x{}",
            moving.width(),
            moving.height(),
            field.width(),
            field.height()
        )));
    }
    let (w, h) = (moving.width(), moving.height());
    let mut out = vec![0.0; w * h];
    warp_image_into(&mut out, moving, field, fill);
    ScalarImage::new(w, h, out)
}

pub(crate) fn warp_image_into(
    out: &mut [f64],
    moving: &ScalarImage,
    field: &DisplacementField,
    fill: Option<f64>,
) {
    let (w, h) = (moving.width(), moving.height());
    let data = moving.data();
    let (dx, dy) = (field.dx(), field.dy());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + dx[i];
            let sy = y as f64 + dy[i];
            out[i] = bilinear_or_fill(data, w, h, sx, sy, fill);
        }
    }
}

/// Resamples through an affine map: `out(x) = moving(A(x))`.
pub fn warp_image_affine(
    moving: &ScalarImage,
    transform: &AffineTransform2D,
    fill: Option<f64>,
) -> Result<ScalarImage> {
    let (w, h) = (moving.width(), moving.height());
    let mut out = vec![0.0; w * h];
    warp_image_affine_into(&mut out, moving, transform, fill);
    ScalarImage::new(w, h, out)
}

pub(crate) fn warp_image_affine_into(
    out: &mut [f64],
    moving: &ScalarImage,
    transform: &AffineTransform2D,
    fill: Option<f64>,
) {
    let (w, h) = (moving.width(), moving.height());
    let data = moving.data();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = transform.apply(x as f64, y as f64);
            out[y * w + x] = bilinear_or_fill(data, w, h, sx, sy, fill);
        }
    }
}

/// Displacement of the composite map `x -> outer(inner(x))`:
/// `u(x) = v(x) + w(x + v(x))` with `v` the inner and `w` the outer field.
pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    if !outer.same_size(inner) {
        return Err(Error::SizeMismatch(format!(
            "outer {}x{} vs inner {}x{}",
            outer.width(),
            outer.height(),
            inner.width(),
            inner.height()
        )));
    }
    let (w, h) = (inner.width(), inner.height());
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let vx = inner.dx()[i];
            let vy = inner.dy()[i];
            let (wx, wy) = sample_field(outer, x as f64 + vx, y as f64 + vy);
            dx[i] = vx + wx;
            dy[i] = vy + wy;
        }
    }
    DisplacementField::new(w, h, dx, dy)
}

/// Maps fixed-frame landmarks into the moving frame via `A(x + u(x))`.
pub fn map_landmarks(points: &LandmarkSet, transform: &TotalTransform) -> Result<LandmarkSet> {
    LandmarkSet::new(
        points
            .points()
            .iter()
            .map(|&(x, y)| transform.apply(x, y))
            .collect(),
    )
}

/// Determinant of the Jacobian of `x -> x + u(x)`, central differences in
/// the interior and one-sided at borders.
pub fn jacobian_det(field: &DisplacementField) -> Result<ScalarImage> {
    let (w, h) = (field.width(), field.height());
    let dx = field.dx();
    let dy = field.dy();
    let mut out = vec![0.0; w * h];
    let deriv_x = |buf: &[f64], x: usize, y: usize| -> f64 {
        if w == 1 {
            return 0.0;
        }
        let row = y * w;
        if x == 0 {
            buf[row + 1] - buf[row]
        } else if x == w - 1 {
            buf[row + x] - buf[row + x - 1]
        } else {
            (buf[row + x + 1] - buf[row + x - 1]) / 2.0
        }
    };
    let deriv_y = |buf: &[f64], x: usize, y: usize| -> f64 {
        if h == 1 {
            return 0.0;
        }
        if y == 0 {
            buf[w + x] - buf[x]
        } else if y == h - 1 {
            buf[y * w + x] - buf[(y - 1) * w + x]
        } else {
            (buf[(y + 1) * w + x] - buf[(y - 1) * w + x]) / 2.0
        }
    };
    for y in 0..h {
        for x in 0..w {
            let ux_x = deriv_x(dx, x, y);
            let ux_y = deriv_y(dx, x, y);
            let uy_x = deriv_x(dy, x, y);
            let uy_y = deriv_y(dy, x, y);
            out[y * w + x] = (1.0 + ux_x) * (1.0 + uy_y) - ux_y * uy_x;
        }
    }
    ScalarImage::new(w, h, out)
}
