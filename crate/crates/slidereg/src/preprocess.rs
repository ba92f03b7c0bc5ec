//! Builds the working image pair: optional stain removal, grayscale
//! conversion with inversion, anti-aliased downsampling, size equalization,
//! margin padding, and the boundary mask.
//!
//! Grayscale is inverted so tissue (dark on a white slide) becomes bright
//! and padded background sits near zero, which lets the NCC variance guard
//! discard empty regions.

use crate::core::{BinaryMask, RegistrationParams, RgbImage, ScalarImage};
use crate::error::Result;
use crate::filters::downsample;
use crate::stains::{remove_stain, StainMatrix};

/// Which images of a pair get stain removal before grayscale conversion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeconvFlags {
    pub fixed: bool,
    pub moving: bool,
}

/// Offsets and factors linking working-image coordinates back to the
/// original inputs: `working = original / resample_factor + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub resample_factor: u32,
    pub kernel_size: usize,
    /// Total (left, top) pixel shift applied to the fixed image.
    pub fixed_offset: (usize, usize),
    /// Total (left, top) pixel shift applied to the moving image.
    pub moving_offset: (usize, usize),
    pub fixed_fill: f64,
    pub moving_fill: f64,
}

/// Equal-sized working pair plus the boundary mask used by the affine
/// stage.
#[derive(Debug, Clone)]
pub struct PreprocessedPair {
    pub fixed: ScalarImage,
    pub moving: ScalarImage,
    pub mask: BinaryMask,
    pub k: usize,
    pub provenance: Provenance,
}

/// Inverted luminance: `1 - (0.299 R + 0.587 G + 0.114 B) / 255`.
pub fn to_grayscale(rgb: &RgbImage) -> ScalarImage {
    let data = rgb
        .data()
        .chunks_exact(3)
        .map(|px| {
            1.0 - (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
        })
        .collect();
    ScalarImage::new(rgb.width(), rgb.height(), data).expect("rgb buffer already validated")
}

/// NCC kernel size: floor of the smaller fixed-image extent over the scale,
/// clamped to at least 1.
pub fn compute_kernel_size(fixed: &ScalarImage, scale: f64) -> usize {
    let size = fixed.width().min(fixed.height()) as f64;
    ((size / scale).floor() as usize).max(1)
}

fn corner_mean(img: &ScalarImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    (img.at(0, 0) + img.at(w - 1, 0) + img.at(0, h - 1) + img.at(w - 1, h - 1)) / 4.0
}

fn pad_image(
    img: &ScalarImage,
    left: usize,
    top: usize,
    right: usize,
    bottom: usize,
    fill: f64,
) -> ScalarImage {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = (w + left + right, h + top + bottom);
    let mut data = vec![fill; nw * nh];
    for y in 0..h {
        let src = &img.data()[y * w..(y + 1) * w];
        data[(y + top) * nw + left..(y + top) * nw + left + w].copy_from_slice(src);
    }
    ScalarImage::new(nw, nh, data).expect("padded buffer is consistent")
}

/// Equalizes the pair to a common size (odd differences put the extra pixel
/// on the right/bottom), adds a `4k` margin on every side filled with each
/// image's own corner mean, and builds the mask excluding a border band of
/// width `k`.
pub fn pad_and_center(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    k: usize,
) -> Result<PreprocessedPair> {
    let k = k.max(1);
    let target_w = fixed.width().max(moving.width());
    let target_h = fixed.height().max(moving.height());
    let margin = 4 * k;

    let pad_one = |img: &ScalarImage| -> (ScalarImage, (usize, usize), f64) {
        let ex = target_w - img.width();
        let ey = target_h - img.height();
        let (left, top) = (ex / 2, ey / 2);
        let (right, bottom) = (ex - left, ey - top);
        let fill = corner_mean(img);
        let padded = pad_image(
            img,
            left + margin,
            top + margin,
            right + margin,
            bottom + margin,
            fill,
        );
        (padded, (left + margin, top + margin), fill)
    };

    let (fixed_p, fixed_offset, fixed_fill) = pad_one(fixed);
    let (moving_p, moving_offset, moving_fill) = pad_one(moving);
    let mask = BinaryMask::excluding_border(fixed_p.width(), fixed_p.height(), k)?;
    Ok(PreprocessedPair {
        fixed: fixed_p,
        moving: moving_p,
        mask,
        k,
        provenance: Provenance {
            resample_factor: 1,
            kernel_size: k,
            fixed_offset,
            moving_offset,
            fixed_fill,
            moving_fill,
        },
    })
}

/// Full preprocessing chain: stain removal per flags, grayscale,
/// downsample by the resample factor, kernel-size derivation, padding.
pub fn prepare_pair(
    fixed_rgb: &RgbImage,
    moving_rgb: &RgbImage,
    params: &RegistrationParams,
    deconv: DeconvFlags,
    stain_matrix: &StainMatrix,
    stain_channel: usize,
) -> Result<PreprocessedPair> {
    params.validate()?;
    let stage_one = |img: &RgbImage, remove: bool| -> Result<ScalarImage> {
        let rgb = if remove {
            remove_stain(img, stain_matrix, stain_channel)?
        } else {
            img.clone()
        };
        downsample(&to_grayscale(&rgb), params.resample_factor)
    };
    let fixed = stage_one(fixed_rgb, deconv.fixed)?;
    let moving = stage_one(moving_rgb, deconv.moving)?;
    let k = compute_kernel_size(&fixed, params.ncc_scale);
    let mut pair = pad_and_center(&fixed, &moving, k)?;
    pair.provenance.resample_factor = params.resample_factor;
    Ok(pair)
}
