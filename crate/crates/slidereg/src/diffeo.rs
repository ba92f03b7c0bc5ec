//! Stage 2: greedy deformable registration. Each iteration takes the
//! metric gradient with respect to the current field, smooths it, scales it
//! to a bounded step, composes it onto the running field, and smooths the
//! result; levels run coarse to fine with the field upsampled in between.
//!
//! Smoothing widths are divided by the level factor (floored at 0.25 px) so
//! the physical regularization extent stays constant across the pyramid.

use crate::affine::level_radius;
use crate::core::{BinaryMask, DisplacementField, RegistrationParams, ScalarImage};
use crate::error::{Error, Result};
use crate::filters::{build_pyramid, smooth_field};
use crate::metric::{ncc_gradient, ncc_value};
use crate::warp::{compose, jacobian_det, warp_image};

const SIGMA_FLOOR: f64 = 0.25;

/// Final displacement field (working resolution, sampling offsets into the
/// affinely-resampled moving image) with per-level final dissimilarities
/// and the minimum Jacobian determinant of the recovered map.
#[derive(Debug, Clone)]
pub struct DiffeoResult {
    pub field: DisplacementField,
    pub per_level_values: Vec<f64>,
    pub min_jacobian: f64,
}

/// Bilinear upsampling of a field to new dimensions with displacement
/// values multiplied by the resolution ratio.
fn upsample_field(
    prev: &DisplacementField,
    width: usize,
    height: usize,
    scale: f64,
) -> Result<DisplacementField> {
    let mut dx = vec![0.0; width * height];
    let mut dy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let sx = x as f64 / scale;
            let sy = y as f64 / scale;
            let (ux, uy) = crate::warp::sample_field(prev, sx, sy);
            let i = y * width + x;
            dx[i] = ux * scale;
            dy[i] = uy * scale;
        }
    }
    DisplacementField::new(width, height, dx, dy)
}

/// Per-level schedule for the greedy loop.
#[derive(Debug, Clone, Copy)]
pub struct LevelSchedule {
    pub iters: usize,
    pub sigma_s: f64,
    pub sigma_t: f64,
    pub epsilon_max: f64,
    pub radius: usize,
}

/// Runs the scheduled greedy iterations at one resolution, starting from
/// `initial`. The loop is a pure fold: running `a + b` iterations equals
/// running `a` and warm-starting `b` more.
pub fn greedy_register_level(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    initial: DisplacementField,
    schedule: &LevelSchedule,
) -> Result<DisplacementField> {
    if !fixed.same_size(moving) {
        return Err(Error::SizeMismatch(format!(
            "fixed {}x{} vs moving {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }
    let (w, h) = (fixed.width(), fixed.height());
    if initial.width() != w || initial.height() != h {
        return Err(Error::SizeMismatch(format!(
            "field {}x{} vs image {}x{}",
            initial.width(),
            initial.height(),
            w,
            h
        )));
    }
    let mask = BinaryMask::full(w, h)?;
    let mut field = initial;
    for _ in 0..schedule.iters {
        let report = ncc_gradient(fixed, moving, &field, &mask, schedule.radius)?;
        if !report.value.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        let mut descent = report.gradient;
        for v in descent.dx_mut() {
            *v = -*v;
        }
        for v in descent.dy_mut() {
            *v = -*v;
        }
        let step = smooth_field(&descent, schedule.sigma_s)?;
        let max_mag = step.max_magnitude();
        if max_mag == 0.0 {
            continue;
        }
        let scale = schedule.epsilon_max / max_mag;
        let mut update = step;
        for v in update.dx_mut() {
            *v *= scale;
        }
        for v in update.dy_mut() {
            *v *= scale;
        }
        field = smooth_field(&compose(&field, &update)?, schedule.sigma_t)?;
    }
    Ok(field)
}

/// Full coarse-to-fine greedy registration of `moving` (already resampled
/// by the affine stage) onto `fixed`. `kernel_size` is the working-
/// resolution NCC kernel size; the per-level window radius is derived from
/// it.
pub fn greedy_register(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    kernel_size: usize,
    params: &RegistrationParams,
) -> Result<DiffeoResult> {
    params.validate()?;
    if !fixed.same_size(moving) {
        return Err(Error::SizeMismatch(format!(
            "fixed {}x{} vs moving {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }
    let fixed_pyr = build_pyramid(fixed, &params.pyramid_factors)?;
    let moving_pyr = build_pyramid(moving, &params.pyramid_factors)?;

    let mut field: Option<DisplacementField> = None;
    let mut prev_factor = 0u32;
    let mut per_level_values = Vec::with_capacity(params.pyramid_factors.len());
    for (level, &factor) in params.pyramid_factors.iter().enumerate() {
        let fixed_l = &fixed_pyr.levels[level];
        let moving_l = &moving_pyr.levels[level];
        let (w, h) = (fixed_l.width(), fixed_l.height());
        let start = match field.take() {
            None => DisplacementField::zeros(w, h)?,
            Some(prev) => upsample_field(&prev, w, h, prev_factor as f64 / factor as f64)?,
        };
        let schedule = LevelSchedule {
            iters: params.iters_per_level[level],
            sigma_s: (params.sigma_s / factor as f64).max(SIGMA_FLOOR),
            sigma_t: (params.sigma_t / factor as f64).max(SIGMA_FLOOR),
            epsilon_max: params.epsilon_max,
            radius: level_radius(kernel_size, factor),
        };
        let result = greedy_register_level(fixed_l, moving_l, start, &schedule)?;
        let mask = BinaryMask::full(w, h)?;
        let warped = warp_image(moving_l, &result, None)?;
        per_level_values.push(ncc_value(fixed_l, &warped, &mask, schedule.radius)?);
        field = Some(result);
        prev_factor = factor;
    }
    let field = field.expect("at least one pyramid level");
    let det = jacobian_det(&field)?;
    let min_jacobian = det.data().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DiffeoResult {
        field,
        per_level_values,
        min_jacobian,
    })
}
