//! Shared domain types and parameter defaults.
//!
//! Coordinate convention throughout the crate: `x` is the column index,
//! `y` the row index, and the origin sits at the center of pixel (0,0).
//! All units are pixels of the working image. Types are plain values and
//! freely sendable between threads.

use crate::error::{Error, Result};

/// Single-channel raster of finite `f64` intensities, row-major.
///
/// Pipeline images live in `[0,1]`; derived rasters (Jacobian maps,
/// gradients) may hold any finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(data.len(), width, height, 1)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "image data",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &ScalarImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// 8-bit RGB raster, row-major interleaved triples.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(data.len(), width, height, 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Replicates a grayscale image into three identical channels.
    pub fn from_scalar(img: &ScalarImage) -> Self {
        let mut data = Vec::with_capacity(3 * img.width() * img.height());
        for &v in img.data() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            data.extend_from_slice(&[g, g, g]);
        }
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }
}

/// Per-pixel displacement field `u(x)` in pixel units; the induced map is
/// `x -> x + u(x)` and the zero field is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl DisplacementField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(dx.len(), width, height, 1)?;
        check_len(dy.len(), width, height, 1)?;
        if !dx.iter().chain(dy.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "displacement field",
            });
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height], vec![
            0.0;
            width * height
        ])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn dx_mut(&mut self) -> &mut [f64] {
        &mut self.dx
    }

    pub fn dy_mut(&mut self) -> &mut [f64] {
        &mut self.dy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn same_size(&self, other: &DisplacementField) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest per-pixel Euclidean displacement magnitude.
    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Planar affine transform `T(x) = a * (x - c) + c + t` with a fixed
/// rotation/scaling center `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform2D {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
    pub cx: f64,
    pub cy: f64,
}

impl AffineTransform2D {
    pub const MIN_DET: f64 = 1e-12;

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a11: f64,
        a12: f64,
        a21: f64,
        a22: f64,
        tx: f64,
        ty: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let t = Self {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
            cx,
            cy,
        };
        let parts = [a11, a12, a21, a22, tx, ty, cx, cy];
        if !parts.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "affine parameters",
            });
        }
        let det = t.det();
        if det.abs() <= Self::MIN_DET {
            return Err(Error::SingularTransform { det });
        }
        Ok(t)
    }

    pub fn identity(cx: f64, cy: f64) -> Self {
        Self {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            tx: 0.0,
            ty: 0.0,
            cx,
            cy,
        }
    }

    /// Rotation by `theta` radians about the center plus a translation.
    pub fn rigid(theta: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            a11: c,
            a12: -s,
            a21: s,
            a22: c,
            tx,
            ty,
            cx,
            cy,
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let px = x - self.cx;
        let py = y - self.cy;
        (
            self.a11 * px + self.a12 * py + self.cx + self.tx,
            self.a21 * px + self.a22 * py + self.cy + self.ty,
        )
    }

    /// Rotation angle read off the linear part, meaningful for rigid
    /// transforms.
    pub fn rotation(&self) -> f64 {
        self.a21.atan2(self.a11)
    }
}

/// Ordered 2D points; index is the pairing key between fixed and moving
/// landmark sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if !points.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite {
                what: "landmark coordinates",
            });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Binary raster; 1 marks pixels that participate in metric evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(data.len(), width, height, 1)?;
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![1; width * height])
    }

    /// Mask that is 1 exactly on pixels at distance >= `band` from every
    /// image edge.
    pub fn excluding_border(width: usize, height: usize, band: usize) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = vec![0u8; width * height];
        for y in 0..height {
            for x in 0..width {
                let d = x.min(y).min(width - 1 - x).min(height - 1 - y);
                data[y * width + x] = u8::from(d >= band);
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Tunable parameters of the two-stage registration pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationParams {
    /// Gaussian width smoothing each update field, in pixels.
    pub sigma_s: f64,
    /// Gaussian width smoothing the total field after composition, in pixels.
    pub sigma_t: f64,
    /// Greedy iteration counts per pyramid level, coarse to fine.
    pub iters_per_level: Vec<usize>,
    /// Divisor deriving the NCC kernel size from the fixed-image extent.
    pub ncc_scale: f64,
    /// Largest per-iteration displacement of the smoothed update, in pixels.
    pub epsilon_max: f64,
    /// Seed for the brute-force rigid search.
    pub seed: u64,
    /// Number of random rigid candidates scored during initialization.
    pub n_candidates: usize,
    /// Pyramid downsample factors, strictly decreasing and ending at 1.
    pub pyramid_factors: Vec<u32>,
    /// Integer factor by which inputs are resampled during preprocessing.
    pub resample_factor: u32,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            sigma_s: 6.0,
            sigma_t: 5.0,
            iters_per_level: vec![100, 50, 10],
            ncc_scale: 25.0,
            epsilon_max: 1.0,
            seed: 42,
            n_candidates: 5000,
            pyramid_factors: vec![4, 2, 1],
            resample_factor: 25,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(Error::InvalidParameter("sigma_s must be >= 0".into()));
        }
        if !(self.sigma_t >= 0.0 && self.sigma_t.is_finite()) {
            return Err(Error::InvalidParameter("sigma_t must be >= 0".into()));
        }
        if !(self.ncc_scale >= 1.0 && self.ncc_scale.is_finite()) {
            return Err(Error::InvalidParameter("ncc_scale must be >= 1".into()));
        }
        if !(self.epsilon_max > 0.0 && self.epsilon_max.is_finite()) {
            return Err(Error::InvalidParameter("epsilon_max must be > 0".into()));
        }
        if self.n_candidates < 1 {
            return Err(Error::InvalidParameter("n_candidates must be >= 1".into()));
        }
        if self.resample_factor < 1 {
            return Err(Error::InvalidParameter(
                "resample_factor must be >= 1".into(),
            ));
        }
        if self.iters_per_level.len() != self.pyramid_factors.len() {
            return Err(Error::InvalidParameter(format!(
                "iters_per_level has {} entries but pyramid has {} levels",
                self.iters_per_level.len(),
                self.pyramid_factors.len()
            )));
        }
        validate_pyramid_factors(&self.pyramid_factors)
    }
}

/// Checks that pyramid factors are strictly decreasing and end at 1.
pub fn validate_pyramid_factors(factors: &[u32]) -> Result<()> {
    if factors.is_empty() {
        return Err(Error::InvalidParameter("empty pyramid factor list".into()));
    }
    if *factors.last().unwrap() != 1 {
        return Err(Error::InvalidParameter(
            "pyramid factors must end at 1".into(),
        ));
    }
    for w in factors.windows(2) {
        if w[0] <= w[1] {
            return Err(Error::InvalidParameter(
                "pyramid factors must be strictly decreasing".into(),
            ));
        }
    }
    if factors[0] < 1 {
        return Err(Error::InvalidParameter("pyramid factors must be >= 1".into()));
    }
    Ok(())
}

/// Returns the stock parameter set used by the CLI when no flags are given.
pub fn default_params() -> RegistrationParams {
    RegistrationParams::default()
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

fn check_len(got: usize, width: usize, height: usize, channels: usize) -> Result<()> {
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(Error::InvalidDimensions { width, height })?;
    if got != expected {
        return Err(Error::BufferSize {
            got,
            expected,
            width,
            height,
        });
    }
    Ok(())
}
