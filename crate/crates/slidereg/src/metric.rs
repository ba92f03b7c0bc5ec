//! Windowed normalized cross-correlation: scalar dissimilarity and its
//! per-pixel gradient with respect to the displacement field.
//!
//! Every masked pixel owns a `(2r+1)^2` clamp-padded window. The local
//! correlation of fixed and warped-moving intensities is averaged over
//! windows that pass a variance guard, negated, and reported as a
//! dissimilarity in `[-1, 1]` to be minimized. All window statistics come
//! from integral images, so the cost is O(pixels) regardless of `r`.

use crate::core::{BinaryMask, DisplacementField, ScalarImage};
use crate::error::{Error, Result};
use crate::warp;

/// Variance guard: windows where either image varies less than this (times
/// the window area) count as featureless and contribute nothing.
const VAR_GUARD: f64 = 1e-6;

/// Dissimilarity value plus its gradient with respect to the displacement
/// applied to the moving image.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub value: f64,
    pub gradient: DisplacementField,
    pub n_valid: usize,
}

/// Reusable buffers for repeated metric evaluations. The fixed-image tables
/// are cached by `prepare_fixed`, so scoring many candidate warps of the
/// moving image against one fixed image only rebuilds the moving-side
/// tables.
#[derive(Debug, Default)]
pub struct NccWorkspace {
    w: usize,
    h: usize,
    r: usize,
    ext_f: Vec<f64>,
    ext_j: Vec<f64>,
    sat_f: Vec<f64>,
    sat_j: Vec<f64>,
    sat_ff: Vec<f64>,
    sat_jj: Vec<f64>,
    sat_fj: Vec<f64>,
    coeff: [Vec<f64>; 4],
    csat: [Vec<f64>; 4],
    pub(crate) dmu: Vec<f64>,
    pub(crate) scratch: Vec<f64>,
}

/// Replicates edge pixels into a border of width `r`.
fn extend_clamped(src: &[f64], w: usize, h: usize, r: usize, out: &mut Vec<f64>) {
    let (we, he) = (w + 2 * r, h + 2 * r);
    out.resize(we * he, 0.0);
    for ye in 0..he {
        let sy = ye.saturating_sub(r).min(h - 1);
        let row = &src[sy * w..(sy + 1) * w];
        let orow = &mut out[ye * we..(ye + 1) * we];
        for (xe, o) in orow.iter_mut().enumerate() {
            let sx = xe.saturating_sub(r).min(w - 1);
            *o = row[sx];
        }
    }
}

/// Summed-area table with a zero top/left border; `sat` is (w+1) x (h+1).
fn integral<F: Fn(usize) -> f64>(value: F, w: usize, h: usize, sat: &mut Vec<f64>) {
    let sw = w + 1;
    sat.clear();
    sat.resize(sw * (h + 1), 0.0);
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += value(y * w + x);
            sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row_sum;
        }
    }
}

/// Inclusive box sum over `[x0,x1] x [y0,y1]` of the tabled raster.
#[inline]
fn box_sum(sat: &[f64], sw: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    sat[(y1 + 1) * sw + x1 + 1] - sat[y0 * sw + x1 + 1] - sat[(y1 + 1) * sw + x0]
        + sat[y0 * sw + x0]
}

struct WindowStats {
    sum_f: f64,
    sum_j: f64,
    var_f: f64,
    var_j: f64,
    cov: f64,
}

impl NccWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds and caches the fixed-image tables for a given geometry.
    pub(crate) fn prepare_fixed(&mut self, fixed: &[f64], w: usize, h: usize, r: usize) {
        self.w = w;
        self.h = h;
        self.r = r;
        let (we, he) = (w + 2 * r, h + 2 * r);
        let mut ext_f = std::mem::take(&mut self.ext_f);
        extend_clamped(fixed, w, h, r, &mut ext_f);
        integral(|i| ext_f[i], we, he, &mut self.sat_f);
        integral(|i| ext_f[i] * ext_f[i], we, he, &mut self.sat_ff);
        self.ext_f = ext_f;
    }

    fn prepare_moving(&mut self, j: &[f64]) {
        let (we, he) = (self.w + 2 * self.r, self.h + 2 * self.r);
        let mut ext_j = std::mem::take(&mut self.ext_j);
        extend_clamped(j, self.w, self.h, self.r, &mut ext_j);
        integral(|i| ext_j[i], we, he, &mut self.sat_j);
        integral(|i| ext_j[i] * ext_j[i], we, he, &mut self.sat_jj);
        let ext_f = &self.ext_f;
        integral(|i| ext_f[i] * ext_j[i], we, he, &mut self.sat_fj);
        self.ext_j = ext_j;
    }

    #[inline]
    fn stats(&self, x: usize, y: usize, inv_n: f64) -> WindowStats {
        let sw = self.w + 2 * self.r + 1;
        let (x1, y1) = (x + 2 * self.r, y + 2 * self.r);
        let sum_f = box_sum(&self.sat_f, sw, x, y, x1, y1);
        let sum_j = box_sum(&self.sat_j, sw, x, y, x1, y1);
        let sum_ff = box_sum(&self.sat_ff, sw, x, y, x1, y1);
        let sum_jj = box_sum(&self.sat_jj, sw, x, y, x1, y1);
        let sum_fj = box_sum(&self.sat_fj, sw, x, y, x1, y1);
        WindowStats {
            sum_f,
            sum_j,
            var_f: sum_ff - sum_f * sum_f * inv_n,
            var_j: sum_jj - sum_j * sum_j * inv_n,
            cov: sum_fj - sum_f * sum_j * inv_n,
        }
    }

    /// Dissimilarity of the cached fixed image against `j`.
    pub(crate) fn value_vs(&mut self, j: &[f64], mask: &[u8]) -> (f64, usize) {
        self.prepare_moving(j);
        let (w, h, r) = (self.w, self.h, self.r);
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        let inv_n = 1.0 / n;
        let guard = VAR_GUARD * n;
        let mut acc = 0.0;
        let mut n_valid = 0usize;
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] == 0 {
                    continue;
                }
                let s = self.stats(x, y, inv_n);
                if s.var_f.min(s.var_j) > guard {
                    acc += (s.cov / (s.var_f * s.var_j).sqrt()).clamp(-1.0, 1.0);
                    n_valid += 1;
                }
            }
        }
        let value = if n_valid > 0 {
            -acc / n_valid as f64
        } else {
            0.0
        };
        (value, n_valid)
    }

    /// Value plus the per-pixel intensity derivative d(value)/dJ(p),
    /// written into `self.dmu`. The derivative accumulates the closed-form
    /// local-CC derivative over the windows containing each pixel via box
    /// sums; border pixels use the plain window-adjacency rule, ignoring
    /// clamp multiplicity.
    pub(crate) fn value_and_dmu_vs(&mut self, j: &[f64], mask: &[u8]) -> (f64, usize) {
        self.prepare_moving(j);
        let (w, h, r) = (self.w, self.h, self.r);
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        let inv_n = 1.0 / n;
        let guard = VAR_GUARD * n;

        let mut coeff = std::mem::take(&mut self.coeff);
        for buf in coeff.iter_mut() {
            buf.clear();
            buf.resize(w * h, 0.0);
        }

        let mut acc = 0.0;
        let mut n_valid = 0usize;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if mask[i] == 0 {
                    continue;
                }
                let s = self.stats(x, y, inv_n);
                if s.var_f.min(s.var_j) <= guard {
                    continue;
                }
                let denom = (s.var_f * s.var_j).sqrt();
                acc += (s.cov / denom).clamp(-1.0, 1.0);
                n_valid += 1;
                // d(rho_q)/dJ(p) = alpha*(F(p)-meanF) - beta*(J(p)-meanJ)
                let alpha = 1.0 / denom;
                let beta = (s.cov / s.var_j) * alpha;
                coeff[0][i] = alpha;
                coeff[1][i] = alpha * s.sum_f * inv_n;
                coeff[2][i] = beta;
                coeff[3][i] = beta * s.sum_j * inv_n;
            }
        }

        let value = if n_valid > 0 {
            -acc / n_valid as f64
        } else {
            0.0
        };
        self.dmu.clear();
        self.dmu.resize(w * h, 0.0);
        if n_valid > 0 {
            let mut csat = std::mem::take(&mut self.csat);
            for (sat, src) in csat.iter_mut().zip(coeff.iter()) {
                integral(|i| src[i], w, h, sat);
            }
            let sw = w + 1;
            let we = w + 2 * r;
            let scale = -1.0 / n_valid as f64;
            // Every pixel a contributing window reads carries a derivative,
            // including pixels outside the mask near its boundary.
            for y in 0..h {
                let y0 = y.saturating_sub(r);
                let y1 = (y + r).min(h - 1);
                for x in 0..w {
                    let i = y * w + x;
                    let x0 = x.saturating_sub(r);
                    let x1 = (x + r).min(w - 1);
                    let sum_a = box_sum(&csat[0], sw, x0, y0, x1, y1);
                    let sum_am = box_sum(&csat[1], sw, x0, y0, x1, y1);
                    let sum_b = box_sum(&csat[2], sw, x0, y0, x1, y1);
                    let sum_bm = box_sum(&csat[3], sw, x0, y0, x1, y1);
                    let f_p = self.ext_f[(y + r) * we + x + r];
                    let j_p = self.ext_j[(y + r) * we + x + r];
                    self.dmu[i] = scale * (f_p * sum_a - sum_am - (j_p * sum_b - sum_bm));
                }
            }
            self.csat = csat;
        }
        self.coeff = coeff;
        (value, n_valid)
    }
}

fn check_sizes(
    fixed: &ScalarImage,
    other_w: usize,
    other_h: usize,
    mask: &BinaryMask,
    radius: usize,
) -> Result<()> {
    if fixed.width() != other_w
        || fixed.height() != other_h
        || mask.width() != fixed.width()
        || mask.height() != fixed.height()
    {
        return Err(Error::SizeMismatch(format!(
            "fixed {}x{}, moving {}x{}, mask {}x{}",
            fixed.width(),
            fixed.height(),
            other_w,
            other_h,
            mask.width(),
            mask.height()
        )));
    }
    if radius < 1 {
        return Err(Error::InvalidParameter("NCC radius must be >= 1".into()));
    }
    Ok(())
}

/// Windowed-NCC dissimilarity of a fixed image against an already-warped
/// moving image. `radius` is half the kernel size derived from the fixed
/// image extent.
pub fn ncc_value(
    fixed: &ScalarImage,
    warped_moving: &ScalarImage,
    mask: &BinaryMask,
    radius: usize,
) -> Result<f64> {
    check_sizes(fixed, warped_moving.width(), warped_moving.height(), mask, radius)?;
    let mut ws = NccWorkspace::new();
    ws.prepare_fixed(fixed.data(), fixed.width(), fixed.height(), radius);
    let (value, _) = ws.value_vs(warped_moving.data(), mask.data());
    Ok(value)
}

/// Warps `moving` by `field`, evaluates the dissimilarity, and returns its
/// gradient with respect to the displacement:
/// `d(value)/du(p) = d(value)/dJ(p) * grad J(p)` with `grad J` the
/// central-difference spatial gradient of the warped image.
pub fn ncc_gradient(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    field: &DisplacementField,
    mask: &BinaryMask,
    radius: usize,
) -> Result<MetricReport> {
    check_sizes(fixed, moving.width(), moving.height(), mask, radius)?;
    if field.width() != fixed.width() || field.height() != fixed.height() {
        return Err(Error::SizeMismatch(format!(
            "field {}x{} vs image {}x{}",
            field.width(),
            field.height(),
            fixed.width(),
            fixed.height()
        )));
    }
    let (w, h) = (fixed.width(), fixed.height());
    let mut ws = NccWorkspace::new();
    ws.prepare_fixed(fixed.data(), w, h, radius);
    ws.scratch.resize(w * h, 0.0);
    let mut warped = std::mem::take(&mut ws.scratch);
    warp::warp_image_into(&mut warped, moving, field, None);
    let (value, n_valid) = ws.value_and_dmu_vs(&warped, mask.data());

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    fill_intensity_gradient(&ws.dmu, &warped, mask.data(), w, h, &mut gx, &mut gy);
    ws.scratch = warped;
    Ok(MetricReport {
        value,
        gradient: DisplacementField::new(w, h, gx, gy)?,
        n_valid,
    })
}

/// Multiplies the intensity derivative by the central-difference spatial
/// gradient of the warped image.
pub(crate) fn fill_intensity_gradient(
    dmu: &[f64],
    warped: &[f64],
    mask: &[u8],
    w: usize,
    h: usize,
    gx: &mut [f64],
    gy: &mut [f64],
) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask[i] == 0 || dmu[i] == 0.0 {
                gx[i] = 0.0;
                gy[i] = 0.0;
                continue;
            }
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[i] = dmu[i] * (warped[y * w + xp] - warped[y * w + xm]) / 2.0;
            gy[i] = dmu[i] * (warped[yp * w + x] - warped[ym * w + x]) / 2.0;
        }
    }
}
