//! Shared synthetic-data helpers for the integration and acceptance
//! suites. Warping here goes through a local bilinear sampler rather than
//! the library's warp path, so generated pairs stay independent of the
//! code under test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidereg::core::{AffineTransform2D, DisplacementField, LandmarkSet, ScalarImage};
use slidereg::filters::gaussian_smooth;
use std::path::Path;

/// Test-local bilinear sampler with clamp-to-edge addressing.
pub fn sample_bilinear(img: &ScalarImage, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let cx = |v: i64| v.clamp(0, w - 1) as usize;
    let cy = |v: i64| v.clamp(0, h - 1) as usize;
    let (x0i, y0i) = (x0 as i64, y0 as i64);
    let v00 = img.at(cx(x0i), cy(y0i));
    let v10 = img.at(cx(x0i + 1), cy(y0i));
    let v01 = img.at(cx(x0i), cy(y0i + 1));
    let v11 = img.at(cx(x0i + 1), cy(y0i + 1));
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bottom = v01 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Single-scale smoothed noise, min-max normalized to [0, 1].
pub fn smooth_noise(n: usize, sigma: f64, seed: u64) -> ScalarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sm = gaussian_smooth(&ScalarImage::new(n, n, noise).unwrap(), sigma).unwrap();
    let lo = sm.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sm.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ScalarImage::new(
        n,
        n,
        sm.data().iter().map(|v| (v - lo) / (hi - lo)).collect(),
    )
    .unwrap()
}

/// Smoothed, min-max normalized noise with both fine and coarse detail.
pub fn texture(n: usize, seed: u64) -> ScalarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let fine = gaussian_smooth(&ScalarImage::new(n, n, noise(&mut rng)).unwrap(), 3.0).unwrap();
    let coarse = gaussian_smooth(&ScalarImage::new(n, n, noise(&mut rng)).unwrap(), 16.0).unwrap();
    let mixed: Vec<f64> = fine
        .data()
        .iter()
        .zip(coarse.data())
        .map(|(a, b)| 0.45 * a + 0.55 * b)
        .collect();
    let lo = mixed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mixed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = mixed
        .iter()
        .map(|v| 0.02 + 0.96 * (v - lo) / (hi - lo))
        .collect();
    ScalarImage::new(n, n, data).unwrap()
}

/// Smooth random displacement field rescaled to a peak magnitude.
pub fn smooth_field(n: usize, sigma: f64, max_mag: f64, seed: u64) -> DisplacementField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        gaussian_smooth(&ScalarImage::new(n, n, raw).unwrap(), sigma)
            .unwrap()
            .into_data()
    };
    let dx = channel(&mut rng);
    let dy = channel(&mut rng);
    let peak = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0f64, f64::max);
    let s = max_mag / peak;
    DisplacementField::new(
        n,
        n,
        dx.iter().map(|v| v * s).collect(),
        dy.iter().map(|v| v * s).collect(),
    )
    .unwrap()
}

/// Composite ground-truth map `T(q) = A(q + u(q))` from the moving frame
/// into the fixed frame.
pub struct TruthTransform {
    pub affine: AffineTransform2D,
    pub field: DisplacementField,
}

impl TruthTransform {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (ux, uy) = slidereg::warp::sample_field(&self.field, x, y);
        self.affine.apply(x + ux, y + uy)
    }
}

/// Builds the moving image by sampling the fixed image through the truth
/// map with the local sampler.
pub fn render_moving(fixed: &ScalarImage, truth: &TruthTransform) -> ScalarImage {
    let (w, h) = (fixed.width(), fixed.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = truth.apply(x as f64, y as f64);
            data.push(sample_bilinear(fixed, sx, sy));
        }
    }
    ScalarImage::new(w, h, data).unwrap()
}

/// Interior grid of `count x count` points over `[margin, n-1-margin]`.
pub fn landmark_grid(n: usize, count: usize, margin: f64) -> Vec<(f64, f64)> {
    let span = (n - 1) as f64 - 2.0 * margin;
    let mut points = Vec::with_capacity(count * count);
    for gy in 0..count {
        for gx in 0..count {
            points.push((
                margin + gx as f64 * span / (count - 1) as f64,
                margin + gy as f64 * span / (count - 1) as f64,
            ));
        }
    }
    points
}

pub fn write_landmark_csv(path: &Path, points: &[(f64, f64)]) {
    slidereg::io::write_landmarks(path, &LandmarkSet::new(points.to_vec()).unwrap()).unwrap();
}

pub fn read_landmark_csv(path: &Path) -> Vec<(f64, f64)> {
    slidereg::io::read_landmarks(path).unwrap().points().to_vec()
}

pub fn median(values: &[f64]) -> f64 {
    slidereg::eval::median(values)
}

pub fn tre_between(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
        .collect()
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_slidereg")
}
