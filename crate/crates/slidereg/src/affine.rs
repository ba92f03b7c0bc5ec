//! Stage 1: rigid initialization by seeded random search, then LBFGS
//! refinement of all six affine parameters over the pyramid.
//!
//! The random search scores 5000 rigid candidates (candidate 0 is the
//! identity) at the coarsest pyramid level; the winner seeds a per-level
//! LBFGS minimization of the windowed-NCC dissimilarity with an analytic
//! parameter gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{AffineTransform2D, BinaryMask, RegistrationParams, ScalarImage};
use crate::error::{Error, Result};
use crate::filters::build_pyramid;
use crate::metric::NccWorkspace;
use crate::preprocess::PreprocessedPair;
use crate::warp::warp_image_affine_into;

const LBFGS_MEMORY: usize = 10;
const LBFGS_MAX_ITERS: usize = 100;
const LBFGS_GRAD_TOL: f64 = 1e-6;
const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;

/// Outcome of the affine stage. Refinement never worsens the objective:
/// `final_value <= init_value` up to rounding, falling back to the
/// initializer otherwise.
#[derive(Debug, Clone)]
pub struct AffineResult {
    pub transform: AffineTransform2D,
    pub final_value: f64,
    pub n_evals: usize,
    pub init_value: f64,
}

/// NCC window radius at a pyramid level: half the kernel size after
/// rescaling to the level, at least 1.
pub(crate) fn level_radius(k: usize, factor: u32) -> usize {
    ((k / factor as usize) / 2).max(1)
}

/// Border band excluded from the metric at a pyramid level.
pub(crate) fn level_band(k: usize, factor: u32) -> usize {
    (k / factor as usize).max(1)
}

fn image_center(img: &ScalarImage) -> (f64, f64) {
    (
        (img.width() - 1) as f64 / 2.0,
        (img.height() - 1) as f64 / 2.0,
    )
}

/// Seeded random rigid search at the coarsest pyramid level. Candidate 0 is
/// the identity; the rest draw a rotation in `[0, 2pi)` and translations in
/// `+-25%` of each coarse dimension (order: angle, tx, ty). Ties break
/// toward the lower candidate index; the winner's translation is rescaled
/// to working resolution.
pub fn brute_force_init(
    pair: &PreprocessedPair,
    params: &RegistrationParams,
) -> Result<AffineTransform2D> {
    params.validate()?;
    let factor = params.pyramid_factors[0];
    let fixed = crate::filters::downsample(&pair.fixed, factor)?;
    let moving = crate::filters::downsample(&pair.moving, factor)?;
    let (w, h) = (fixed.width(), fixed.height());
    let mask = BinaryMask::excluding_border(w, h, level_band(pair.k, factor))?;
    let radius = level_radius(pair.k, factor);
    let center = image_center(&fixed);

    let mut ws = NccWorkspace::new();
    ws.prepare_fixed(fixed.data(), w, h, radius);
    let mut warped = vec![0.0; w * h];

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, AffineTransform2D, f64, f64, f64)> = None;
    for i in 0..params.n_candidates {
        let (theta, tx, ty) = if i == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-0.25 * w as f64..0.25 * w as f64),
                rng.gen_range(-0.25 * h as f64..0.25 * h as f64),
            )
        };
        let candidate = AffineTransform2D::rigid(theta, tx, ty, center.0, center.1);
        warp_image_affine_into(&mut warped, &moving, &candidate, None);
        let (value, _) = ws.value_vs(&warped, mask.data());
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        if best.as_ref().is_none_or(|(bv, ..)| value < *bv) {
            best = Some((value, candidate, theta, tx, ty));
        }
    }
    let (_, _, theta, tx, ty) = best.expect("n_candidates >= 1");
    let scale = factor as f64;
    let work_center = image_center(&pair.fixed);
    Ok(AffineTransform2D::rigid(
        theta,
        tx * scale,
        ty * scale,
        work_center.0,
        work_center.1,
    ))
}

/// One objective evaluation: warp, score, and assemble the 6-parameter
/// gradient by contracting the metric's intensity derivative with the
/// spatial gradient of the warped image and the Jacobian of the affine map.
struct LevelObjective<'a> {
    moving: &'a ScalarImage,
    mask: &'a BinaryMask,
    center: (f64, f64),
    ws: NccWorkspace,
    warped: Vec<f64>,
    n_evals: usize,
}

impl<'a> LevelObjective<'a> {
    fn new(
        fixed: &ScalarImage,
        moving: &'a ScalarImage,
        mask: &'a BinaryMask,
        radius: usize,
    ) -> Self {
        let (w, h) = (fixed.width(), fixed.height());
        let mut ws = NccWorkspace::new();
        ws.prepare_fixed(fixed.data(), w, h, radius);
        Self {
            moving,
            mask,
            center: image_center(fixed),
            ws,
            warped: vec![0.0; w * h],
            n_evals: 0,
        }
    }

    fn transform_of(&self, x: &[f64; 6]) -> Result<AffineTransform2D> {
        AffineTransform2D::new(
            x[0], x[1], x[2], x[3], x[4], x[5], self.center.0, self.center.1,
        )
    }

    fn eval(&mut self, x: &[f64; 6]) -> Result<(f64, [f64; 6])> {
        self.n_evals += 1;
        let t = self.transform_of(x)?;
        let (w, h) = (self.moving.width(), self.moving.height());
        warp_image_affine_into(&mut self.warped, self.moving, &t, None);
        let (value, _) = self.ws.value_and_dmu_vs(&self.warped, self.mask.data());
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        // Total derivative over every pixel contributing windows read,
        // unmasked boundary pixels included.
        let dmu = &self.ws.dmu;
        let warped = &self.warped;
        let mut g = [0.0f64; 6];
        for y in 0..h {
            let py = y as f64 - self.center.1;
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            for x_pix in 0..w {
                let i = y * w + x_pix;
                let d = dmu[i];
                if d == 0.0 {
                    continue;
                }
                let xm = x_pix.saturating_sub(1);
                let xp = (x_pix + 1).min(w - 1);
                let gx = d * (warped[y * w + xp] - warped[y * w + xm]) / 2.0;
                let gy = d * (warped[yp * w + x_pix] - warped[ym * w + x_pix]) / 2.0;
                let px = x_pix as f64 - self.center.0;
                g[0] += gx * px;
                g[1] += gx * py;
                g[2] += gy * px;
                g[3] += gy * py;
                g[4] += gx;
                g[5] += gy;
            }
        }
        Ok((value, g))
    }
}

fn dot(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64; 6]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

type EvalFn<'a> = dyn FnMut(&[f64; 6]) -> Result<(f64, [f64; 6])> + 'a;

/// Strong-Wolfe line search (bracket then zoom with bisection).
/// Returns None when no acceptable step exists along `d`.
fn wolfe_search(
    eval: &mut EvalFn,
    x: &[f64; 6],
    d: &[f64; 6],
    f0: f64,
    g0_dot_d: f64,
    alpha_init: f64,
) -> Result<Option<(f64, f64, [f64; 6])>> {
    let mut eval_at = |alpha: f64| -> Result<(f64, [f64; 6], f64)> {
        let mut xa = *x;
        for (xi, di) in xa.iter_mut().zip(d) {
            *xi += alpha * di;
        }
        match eval(&xa) {
            Ok((f, g)) => {
                let gd = dot(&g, d);
                Ok((f, g, gd))
            }
            // A candidate step may leave the valid transform domain
            // (singular linear part); treat it as an over-long step.
            Err(Error::SingularTransform { .. }) => Ok((f64::INFINITY, [0.0; 6], f64::INFINITY)),
            Err(e) => Err(e),
        }
    };

    let mut bracket: Option<(f64, f64, f64)> = None; // lo, f_lo, hi
    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut alpha = alpha_init;
    for i in 0..20 {
        let (f, g, gd) = eval_at(alpha)?;
        if f > f0 + WOLFE_C1 * alpha * g0_dot_d || (i > 0 && f >= f_prev) {
            bracket = Some((alpha_prev, f_prev, alpha));
            break;
        }
        if gd.abs() <= -WOLFE_C2 * g0_dot_d {
            return Ok(Some((alpha, f, g)));
        }
        if gd >= 0.0 {
            bracket = Some((alpha, f, alpha_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = f;
        alpha *= 2.0;
    }
    let (mut lo, mut f_lo, mut hi) = match bracket {
        Some(b) => b,
        None => return Ok(None),
    };
    for _ in 0..30 {
        let alpha = 0.5 * (lo + hi);
        let (f, g, gd) = eval_at(alpha)?;
        if f > f0 + WOLFE_C1 * alpha * g0_dot_d || f >= f_lo {
            hi = alpha;
        } else {
            if gd.abs() <= -WOLFE_C2 * g0_dot_d {
                return Ok(Some((alpha, f, g)));
            }
            if gd * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = alpha;
            f_lo = f;
        }
        if (hi - lo).abs() < 1e-12 * lo.abs().max(1.0) {
            break;
        }
    }
    Ok(None)
}

/// LBFGS with the two-loop recursion. Returns the best parameters found at
/// this level and whether the very first line search failed.
///
/// The four linear parameters are optimized in units of displacement at the
/// image rim (scaled by half the image extent), which puts all six
/// gradient components on a comparable footing.
fn lbfgs_level(obj: &mut LevelObjective, x0: [f64; 6]) -> Result<([f64; 6], bool)> {
    let rim = obj.center.0.max(obj.center.1).max(1.0);
    let scale = [rim, rim, rim, rim, 1.0, 1.0];
    let to_params = move |u: &[f64; 6]| -> [f64; 6] {
        let mut x = *u;
        for (xi, s) in x.iter_mut().zip(&scale) {
            *xi /= s;
        }
        x
    };
    let mut eval_scaled = |u: &[f64; 6]| -> Result<(f64, [f64; 6])> {
        let (f, mut g) = obj.eval(&to_params(u))?;
        for (gi, s) in g.iter_mut().zip(&scale) {
            *gi /= s;
        }
        Ok((f, g))
    };

    let mut x = x0;
    for (xi, s) in x.iter_mut().zip(&scale) {
        *xi *= s;
    }
    let (mut f, mut g) = eval_scaled(&x)?;
    let mut s_hist: Vec<[f64; 6]> = Vec::new();
    let mut y_hist: Vec<[f64; 6]> = Vec::new();

    for iter in 0..LBFGS_MAX_ITERS {
        if norm_inf(&g) < LBFGS_GRAD_TOL {
            break;
        }
        // Two-loop recursion for d = -H g.
        let mut d = g;
        let mut alphas = vec![0.0; s_hist.len()];
        for (idx, (s, y)) in s_hist.iter().zip(&y_hist).enumerate().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &d);
            alphas[idx] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for (idx, (s, y)) in s_hist.iter().zip(&y_hist).enumerate() {
            let rho = 1.0 / dot(y, s);
            let beta = rho * dot(y, &d);
            let a = alphas[idx];
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - beta) * si;
            }
        }
        for di in d.iter_mut() {
            *di = -*di;
        }
        let mut g_dot_d = dot(&g, &d);
        if g_dot_d >= 0.0 {
            // History produced a non-descent direction; restart steepest.
            d = g.map(|v| -v);
            g_dot_d = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
        }
        let alpha_init = if s_hist.is_empty() {
            (1.0 / norm_inf(&g).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        match wolfe_search(&mut eval_scaled, &x, &d, f, g_dot_d, alpha_init)? {
            Some((alpha, f_new, g_new)) => {
                let mut s = [0.0; 6];
                let mut y = [0.0; 6];
                for j in 0..6 {
                    s[j] = alpha * d[j];
                    y[j] = g_new[j] - g[j];
                    x[j] += s[j];
                }
                if dot(&s, &y) > 1e-12 {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > LBFGS_MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                f = f_new;
                g = g_new;
            }
            None => {
                return Ok((to_params(&x), iter == 0));
            }
        }
    }
    Ok((to_params(&x), false))
}

/// Objective value and analytic gradient with respect to the six affine
/// parameters `(a11, a12, a21, a22, tx, ty)`, centered at the fixed-image
/// center. This is the quantity LBFGS minimizes; exposed for gradient
/// diagnostics.
pub fn objective_gradient(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    mask: &BinaryMask,
    radius: usize,
    params6: &[f64; 6],
) -> Result<(f64, [f64; 6])> {
    if !fixed.same_size(moving) || mask.width() != fixed.width() || mask.height() != fixed.height()
    {
        return Err(Error::SizeMismatch(format!(
            "fixed {}x{}, moving {}x{}, mask {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height(),
            mask.width(),
            mask.height()
        )));
    }
    let mut obj = LevelObjective::new(fixed, moving, mask, radius.max(1));
    obj.eval(params6)
}

/// Coarse-to-fine LBFGS refinement of the 6 affine parameters, warm-started
/// per level with translations rescaled by the factor ratio. Falls back to
/// `a0` if the first line search fails immediately or if refinement does
/// not improve the working-resolution objective.
pub fn lbfgs_refine(
    pair: &PreprocessedPair,
    a0: &AffineTransform2D,
    params: &RegistrationParams,
) -> Result<AffineResult> {
    params.validate()?;
    let fixed_pyr = build_pyramid(&pair.fixed, &params.pyramid_factors)?;
    let moving_pyr = build_pyramid(&pair.moving, &params.pyramid_factors)?;

    // Working-resolution objective for the initializer.
    let finest = params.pyramid_factors.len() - 1;
    let radius_full = level_radius(pair.k, 1);
    let mut full_obj = LevelObjective::new(
        &fixed_pyr.levels[finest],
        &moving_pyr.levels[finest],
        &pair.mask,
        radius_full,
    );
    let x_init = [a0.a11, a0.a12, a0.a21, a0.a22, a0.tx, a0.ty];
    let (init_value, _) = full_obj.eval(&x_init)?;
    let mut n_evals = full_obj.n_evals;

    // Parameters travel between levels with translations in level pixels.
    let mut x = x_init;
    let mut prev_factor: Option<u32> = None;
    let mut first_failed = false;
    for (level, &factor) in params.pyramid_factors.iter().enumerate() {
        let scale_in = match prev_factor {
            None => 1.0 / factor as f64,
            Some(pf) => pf as f64 / factor as f64,
        };
        x[4] *= scale_in;
        x[5] *= scale_in;

        let fixed = &fixed_pyr.levels[level];
        let moving = &moving_pyr.levels[level];
        let mask =
            BinaryMask::excluding_border(fixed.width(), fixed.height(), level_band(pair.k, factor))?;
        let mut obj = LevelObjective::new(fixed, moving, &mask, level_radius(pair.k, factor));
        let (x_opt, failed_first) = lbfgs_level(&mut obj, x)?;
        n_evals += obj.n_evals;
        if failed_first && level == 0 {
            first_failed = true;
        }
        x = x_opt;
        prev_factor = Some(factor);
    }
    // Back to working resolution (finest factor is 1, so x is already there).

    let (final_value, _) = full_obj.eval(&x)?;
    n_evals += 1;
    if first_failed || final_value > init_value {
        return Ok(AffineResult {
            transform: *a0,
            final_value: init_value,
            n_evals,
            init_value,
        });
    }
    let center = image_center(&pair.fixed);
    Ok(AffineResult {
        transform: AffineTransform2D::new(x[0], x[1], x[2], x[3], x[4], x[5], center.0, center.1)?,
        final_value,
        n_evals,
        init_value,
    })
}
