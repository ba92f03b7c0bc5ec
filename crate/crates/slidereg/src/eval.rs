//! Landmark-based evaluation: target registration error, its
//! diagonal-normalized form, per-pair medians, robustness, and the dataset
//! aggregate.

use crate::core::LandmarkSet;
use crate::error::{Error, Result};

/// Per-pair evaluation record. `rtres` are the after-registration errors
/// normalized by the diagonal of the `w` x `h` image the landmarks live in;
/// robustness is the fraction of landmarks whose error strictly decreased.
#[derive(Debug, Clone)]
pub struct PairScore {
    pub tres: Vec<f64>,
    pub rtres: Vec<f64>,
    pub median_rtre: f64,
    pub robustness: f64,
    pub w: usize,
    pub h: usize,
}

/// Dataset-level aggregate: arithmetic means across pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub avg_median_rtre: f64,
    pub avg_robustness: f64,
}

/// Elementwise Euclidean distances between paired landmarks.
pub fn tre(target: &LandmarkSet, warped: &LandmarkSet) -> Result<Vec<f64>> {
    if target.len() != warped.len() {
        return Err(Error::SizeMismatch(format!(
            "{} target landmarks vs {} warped",
            target.len(),
            warped.len()
        )));
    }
    Ok(target
        .points()
        .iter()
        .zip(warped.points())
        .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
        .collect())
}

/// Normalizes errors by the image diagonal `sqrt(w^2 + h^2)`.
pub fn rtre(tres: &[f64], w: usize, h: usize) -> Vec<f64> {
    let diagonal = ((w * w + h * h) as f64).sqrt();
    tres.iter().map(|t| t / diagonal).collect()
}

/// Median with the even-count convention of averaging the two central
/// order statistics.
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Scores one pair from the target landmarks and the fixed landmarks as
/// mapped before and after registration. Ties in the per-landmark error
/// count as not improved.
pub fn score_pair(
    target: &LandmarkSet,
    warped_before: &LandmarkSet,
    warped_after: &LandmarkSet,
    w: usize,
    h: usize,
) -> Result<PairScore> {
    if target.is_empty() {
        return Err(Error::Empty("landmark set"));
    }
    let tre_before = tre(target, warped_before)?;
    let tre_after = tre(target, warped_after)?;
    let rtres = rtre(&tre_after, w, h);
    let improved = tre_after
        .iter()
        .zip(&tre_before)
        .filter(|(a, b)| a < b)
        .count();
    Ok(PairScore {
        median_rtre: median(&rtres),
        robustness: improved as f64 / tre_after.len() as f64,
        tres: tre_after,
        rtres,
        w,
        h,
    })
}

/// Means of the per-pair medians and robustness values.
pub fn aggregate(scores: &[PairScore]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let n = scores.len() as f64;
    Ok(Summary {
        avg_median_rtre: scores.iter().map(|s| s.median_rtre).sum::<f64>() / n,
        avg_robustness: scores.iter().map(|s| s.robustness).sum::<f64>() / n,
    })
}
