//! Gaussian smoothing, anti-aliased downsampling, and multi-resolution
//! pyramids.
//!
//! All filtering replicates edge pixels (clamp), which preserves constant
//! rasters exactly and avoids spurious gradients along padded borders.

use crate::core::{validate_pyramid_factors, DisplacementField, ScalarImage};
use crate::error::{Error, Result};

/// Coarse-to-fine image stack; the last level is the input itself.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<ScalarImage>,
    pub factors: Vec<u32>,
}

/// Normalized FIR kernel truncated at radius `ceil(4*sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64) * (i as f64) * inv).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

/// Separable convolution of one channel with clamped boundaries.
pub(crate) fn smooth_channel(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; src.len()];
    // Horizontal pass.
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                let sx = (x as i64 + j as i64 - radius).clamp(0, width as i64 - 1) as usize;
                acc += w * row[sx];
            }
            *o = acc;
        }
    }
    // Vertical pass.
    let mut dst = vec![0.0; src.len()];
    for x in 0..width {
        for y in 0..height {
            let mut acc = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                let sy = (y as i64 + j as i64 - radius).clamp(0, height as i64 - 1) as usize;
                acc += w * tmp[sy * width + x];
            }
            dst[y * width + x] = acc;
        }
    }
    dst
}

/// Isotropic Gaussian smoothing; `sigma = 0` returns the input unchanged.
pub fn gaussian_smooth(img: &ScalarImage, sigma: f64) -> Result<ScalarImage> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let data = smooth_channel(img.data(), img.width(), img.height(), sigma);
    ScalarImage::new(img.width(), img.height(), data)
}

/// Smooths `dx` and `dy` independently with the same kernel.
pub fn smooth_field(field: &DisplacementField, sigma: f64) -> Result<DisplacementField> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let (w, h) = (field.width(), field.height());
    DisplacementField::new(
        w,
        h,
        smooth_channel(field.dx(), w, h, sigma),
        smooth_channel(field.dy(), w, h, sigma),
    )
}

/// Anti-aliased decimation: smooth with `sigma = factor/2`, then point-sample
/// every `factor` pixels starting at (0,0). Output is `ceil(size/factor)`.
pub fn downsample(img: &ScalarImage, factor: u32) -> Result<ScalarImage> {
    if factor < 1 {
        return Err(Error::InvalidParameter(format!(
            "downsample factor {factor} must be >= 1"
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let smoothed = gaussian_smooth(img, factor as f64 / 2.0)?;
    let f = factor as usize;
    let out_w = img.width().div_ceil(f);
    let out_h = img.height().div_ceil(f);
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            data.push(smoothed.at(x * f, y * f));
        }
    }
    ScalarImage::new(out_w, out_h, data)
}

/// Builds one level per factor; factors must be strictly decreasing and end
/// at 1.
pub fn build_pyramid(img: &ScalarImage, factors: &[u32]) -> Result<Pyramid> {
    validate_pyramid_factors(factors)?;
    let levels = factors
        .iter()
        .map(|&f| downsample(img, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid {
        levels,
        factors: factors.to_vec(),
    })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} must be >= 0"
        )));
    }
    Ok(())
}
