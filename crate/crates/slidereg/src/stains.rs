//! Color deconvolution for stained slides: per-pixel unmixing of optical
//! densities into stain concentrations through a stain-vector matrix, used
//! to erase one stain (typically DAB) before registration.
//!
//! Optical density is `-log10(max(I,1)/255)` per channel; the clamp at
//! intensity 1 keeps the transform finite and invertible on `[1,255]`.

use crate::core::RgbImage;
use crate::error::{Error, Result};

/// Default H-DAB stain vectors (hematoxylin, DAB, residual), one row per
/// stain. Shipped as a config file so deployments can swap in their own
/// calibration; rows are normalized on load.
pub const HDAB_CONFIG: &str = include_str!("../config/hdab.txt");

/// Index of the DAB row in [`HDAB_CONFIG`].
pub const HDAB_DAB_CHANNEL: usize = 1;

/// Three unit-length stain OD vectors, one per row, with the precomputed
/// inverse used for the per-pixel concentration solve.
#[derive(Debug, Clone)]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    /// Inverse of the matrix whose columns are the stain vectors.
    inv_t: [[f64; 3]; 3],
}

impl StainMatrix {
    /// Builds from three stain rows; rows are normalized to unit length.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut normed = rows;
        for row in &mut normed {
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            if !(norm > 1e-6 && norm.is_finite()) {
                return Err(Error::InvalidParameter(
                    "stain vector has near-zero norm".into(),
                ));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        // OD = M^T * C, so concentrations come from inverting M^T.
        let mt = transpose(&normed);
        let det = det3(&mt);
        if det.abs() <= 1e-6 {
            return Err(Error::SingularStainMatrix { det });
        }
        Ok(Self {
            rows: normed,
            inv_t: inverse3(&mt, det),
        })
    }

    /// Parses 9 whitespace-separated decimals, row-major.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("non-numeric stain value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 9 {
            return Err(Error::Parse(format!(
                "stain config has {} values, expected 9",
                values.len()
            )));
        }
        Self::new([
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        ])
    }

    pub fn from_config_file(path: &std::path::Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// The stock H-DAB matrix.
    pub fn hdab() -> Self {
        Self::from_config_str(HDAB_CONFIG).expect("shipped stain config is valid")
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Solves `OD = M^T * C` for the concentration vector.
    #[inline]
    fn concentrations(&self, od: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.inv_t, od)
    }

    /// Reconstructs optical densities from concentrations.
    #[inline]
    fn reconstruct_od(&self, c: [f64; 3]) -> [f64; 3] {
        [
            c[0] * self.rows[0][0] + c[1] * self.rows[1][0] + c[2] * self.rows[2][0],
            c[0] * self.rows[0][1] + c[1] * self.rows[1][1] + c[2] * self.rows[2][1],
            c[0] * self.rows[0][2] + c[1] * self.rows[1][2] + c[2] * self.rows[2][2],
        ]
    }
}

/// Three-channel optical-density raster.
#[derive(Debug, Clone)]
pub struct OdImage {
    pub width: usize,
    pub height: usize,
    pub od: Vec<[f64; 3]>,
}

#[inline]
pub(crate) fn od_of_channel(intensity: u8) -> f64 {
    -((intensity.max(1) as f64) / 255.0).log10()
}

/// Per-channel optical density; intensity 255 maps to OD 0.
pub fn od_transform(rgb: &RgbImage) -> OdImage {
    let od = rgb
        .data()
        .chunks_exact(3)
        .map(|px| [od_of_channel(px[0]), od_of_channel(px[1]), od_of_channel(px[2])])
        .collect();
    OdImage {
        width: rgb.width(),
        height: rgb.height(),
        od,
    }
}

/// Removes one stain: unmix concentrations, clamp negatives to zero, zero
/// the selected stain, and reconstruct the RGB pixel.
pub fn remove_stain(
    rgb: &RgbImage,
    matrix: &StainMatrix,
    channel_index: usize,
) -> Result<RgbImage> {
    if channel_index > 2 {
        return Err(Error::InvalidParameter(format!(
            "stain channel {channel_index} out of range 0..=2"
        )));
    }
    let mut out = Vec::with_capacity(rgb.data().len());
    for px in rgb.data().chunks_exact(3) {
        let od = [
            od_of_channel(px[0]),
            od_of_channel(px[1]),
            od_of_channel(px[2]),
        ];
        let mut c = matrix.concentrations(od);
        for v in &mut c {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        c[channel_index] = 0.0;
        let od_new = matrix.reconstruct_od(c);
        for d in od_new {
            let v = (255.0 * 10f64.powf(-d)).round().clamp(0.0, 255.0);
            out.push(v as u8);
        }
    }
    RgbImage::new(rgb.width(), rgb.height(), out)
}

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let inv_det = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ]
}

#[inline]
fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel_image(px: [u8; 3]) -> RgbImage {
        RgbImage::new(1, 1, px.to_vec()).unwrap()
    }

    #[test]
    fn od_of_white_is_zero() {
        let od = od_transform(&pixel_image([255, 255, 255]));
        assert_eq!(od.od[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn od_of_black_uses_clamp_at_one() {
        let od = od_transform(&pixel_image([0, 0, 0]));
        let expected = (255f64).log10();
        for v in od.od[0] {
            assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        }
        assert!((expected - 2.40654).abs() < 1e-5);
    }

    #[test]
    fn od_of_gray_26() {
        let od = od_transform(&pixel_image([26, 26, 26]));
        let expected = -(26.0f64 / 255.0).log10();
        for v in od.od[0] {
            assert!((v - expected).abs() < 1e-12, "{v}");
        }
        assert!((expected - 0.991567).abs() < 1e-6);
    }

    #[test]
    fn stain_rows_are_normalized_on_load() {
        let m = StainMatrix::hdab();
        for row in m.rows() {
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_rows_are_singular() {
        let row = [0.65, 0.70, 0.29];
        assert!(matches!(
            StainMatrix::new([row, row, [0.27, 0.57, 0.78]]),
            Err(Error::SingularStainMatrix { .. })
        ));
    }

    #[test]
    fn config_rejects_wrong_arity() {
        assert!(StainMatrix::from_config_str("1 0 0 0 1 0 0 0").is_err());
        assert!(StainMatrix::from_config_str("1 0 0 0 1 0 0 0 x").is_err());
    }

    #[test]
    fn white_image_is_unchanged() {
        let img = pixel_image([255, 255, 255]);
        let out = remove_stain(&img, &StainMatrix::hdab(), HDAB_DAB_CHANNEL).unwrap();
        assert_eq!(out.pixel(0, 0), [255, 255, 255]);
    }

    /// Exact-arithmetic reference for the unmix/zero/reconstruct path: a
    /// pure-DAB optical density solves to the DAB basis vector, so zeroing
    /// that concentration must leave a residual OD of zero.
    #[test]
    fn pure_dab_od_unmixes_exactly_in_float() {
        let m = StainMatrix::hdab();
        let dab = m.rows()[HDAB_DAB_CHANNEL];
        let od = dab; // concentration 1.0 of the DAB stain alone
        // Test-local Gaussian elimination on OD = M^T * C.
        let mt = transpose(m.rows());
        let mut a = [
            [mt[0][0], mt[0][1], mt[0][2], od[0]],
            [mt[1][0], mt[1][1], mt[1][2], od[1]],
            [mt[2][0], mt[2][1], mt[2][2], od[2]],
        ];
        for col in 0..3 {
            let piv = (col..3)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let pivot_row = a[col];
            for (row, entries) in a.iter_mut().enumerate() {
                if row != col {
                    let f = entries[col] / pivot_row[col];
                    for (dst, src) in entries.iter_mut().zip(&pivot_row).skip(col) {
                        *dst -= f * src;
                    }
                }
            }
        }
        let c = [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]];
        assert!((c[HDAB_DAB_CHANNEL] - 1.0).abs() < 1e-9);
        let mut zeroed = c;
        zeroed[HDAB_DAB_CHANNEL] = 0.0;
        let residual = m.reconstruct_od(zeroed);
        for v in residual {
            assert!(v.abs() < 1e-6, "residual OD {v}");
        }
    }

    /// Through the 8-bit API the same pixel lands within quantization of
    /// white after DAB removal.
    #[test]
    fn dab_only_pixel_becomes_near_white() {
        let m = StainMatrix::hdab();
        let dab = m.rows()[HDAB_DAB_CHANNEL];
        let px: Vec<u8> = dab
            .iter()
            .map(|&d| (255.0 * 10f64.powf(-d)).round() as u8)
            .collect();
        let img = RgbImage::new(1, 1, px).unwrap();
        let out = remove_stain(&img, &m, HDAB_DAB_CHANNEL).unwrap();
        for c in out.pixel(0, 0) {
            assert!(c >= 250, "channel {c} not near white");
        }
    }

    #[test]
    fn removing_an_absent_stain_changes_nothing_beyond_rounding() {
        // Pixels built from hematoxylin alone carry zero DAB concentration.
        let m = StainMatrix::hdab();
        let hema = m.rows()[0];
        for conc in [0.2, 0.5, 0.9] {
            let px: Vec<u8> = hema
                .iter()
                .map(|&d| (255.0 * 10f64.powf(-conc * d)).round() as u8)
                .collect();
            let img = RgbImage::new(1, 1, px.clone()).unwrap();
            let out = remove_stain(&img, &m, HDAB_DAB_CHANNEL).unwrap();
            for (a, b) in out.pixel(0, 0).iter().zip(&px) {
                assert!((*a as i32 - *b as i32).abs() <= 1, "{a} vs {b}");
            }
        }
    }

    fn mixture_pixel(m: &StainMatrix, c: [f64; 3]) -> Vec<u8> {
        let od = m.reconstruct_od(c);
        od.iter()
            .map(|&d| (255.0 * 10f64.powf(-d)).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    #[test]
    fn remove_stain_is_idempotent_up_to_quantization() {
        // A second pass re-quantizes through u8; the unmix/remix projection
        // amplifies that half-level noise by its conditioning, so weak
        // stains stay within one level and saturated mixtures within two.
        let m = StainMatrix::hdab();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (max_c, allowed) in [(0.25, 1i32), (1.0, 2i32)] {
            for _ in 0..500 {
                let c = [
                    rng.gen_range(0.0..max_c),
                    rng.gen_range(0.0..max_c),
                    rng.gen_range(0.0..max_c * 0.5),
                ];
                let img = RgbImage::new(1, 1, mixture_pixel(&m, c)).unwrap();
                let once = remove_stain(&img, &m, HDAB_DAB_CHANNEL).unwrap();
                let twice = remove_stain(&once, &m, HDAB_DAB_CHANNEL).unwrap();
                for (a, b) in once.data().iter().zip(twice.data()) {
                    assert!(
                        (*a as i32 - *b as i32).abs() <= allowed,
                        "max_c {max_c}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn full_reconstruction_reproduces_pixels_within_one_level() {
        // Solving for all three concentrations and reconstructing without
        // zeroing anything must reproduce the pixel (negative clamping only
        // bites on pixels outside the stain cone, so stay inside it).
        let m = StainMatrix::hdab();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let c = [
                rng.gen_range(0.0..1.2),
                rng.gen_range(0.0..1.2),
                rng.gen_range(0.0..0.6),
            ];
            let od = m.reconstruct_od(c);
            let px: Vec<u8> = od
                .iter()
                .map(|&d| (255.0 * 10f64.powf(-d)).round().clamp(0.0, 255.0) as u8)
                .collect();
            let img = RgbImage::new(1, 1, px.clone()).unwrap();
            // Remove a synthetic fourth channel: index that holds zero
            // concentration after the solve. Reconstruct with everything
            // kept by removing nothing: emulate via concentrations().
            let od_back = od_transform(&img).od[0];
            let c_back = m.concentrations(od_back);
            let od_full = m.reconstruct_od(c_back);
            for (a, b) in od_full.iter().zip(px.iter()) {
                let v = (255.0 * 10f64.powf(-a)).round().clamp(0.0, 255.0) as i32;
                assert!((v - *b as i32).abs() <= 1);
            }
        }
    }
}
