//! Grid sweep over the two smoothing widths: every cell runs the full
//! pipeline for every pair and the aggregate lands in one sorted CSV.

use std::path::{Path, PathBuf};

use slidereg::core::RegistrationParams;
use slidereg::{Error, Result};

use crate::sidecar::atomic_write_bytes;
use crate::stages::{stage_run, DeconvOptions, RunSpec};

#[derive(Debug, Clone)]
pub struct SweepPair {
    pub pair_id: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_landmarks: PathBuf,
    pub target_landmarks: PathBuf,
}

/// Pair manifest: one `pair_id,fixed,moving,fixed_landmarks,target_landmarks`
/// line per pair.
pub fn read_pairs(path: &Path) -> Result<Vec<SweepPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "pair line has {} fields, expected 5: {line:?}",
                fields.len()
            )));
        }
        pairs.push(SweepPair {
            pair_id: fields[0].to_string(),
            fixed: fields[1].into(),
            moving: fields[2].into(),
            fixed_landmarks: fields[3].into(),
            target_landmarks: fields[4].into(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Empty("pair manifest"));
    }
    Ok(pairs)
}

struct CellResult {
    sigma_s: f64,
    sigma_t: f64,
    avg_median_rtre: f64,
    avg_robustness: f64,
    error: Option<Error>,
}

/// Runs the grid and writes `sweep.csv` sorted by ascending average median
/// error. Failed cells keep a sentinel row (`inf`) and the sweep continues;
/// the worst per-cell exit status is reported back.
pub fn stage_sweep(
    pairs_path: &Path,
    out_dir: &Path,
    sigma_s_values: &[f64],
    sigma_t_values: &[f64],
    base: &RegistrationParams,
    deconv: &DeconvOptions,
) -> Result<i32> {
    if sigma_s_values.is_empty() || sigma_t_values.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one sigma-s and one sigma-t value".into(),
        ));
    }
    let pairs = read_pairs(pairs_path)?;
    std::fs::create_dir_all(out_dir)?;

    let mut cells = Vec::new();
    for &sigma_s in sigma_s_values {
        for &sigma_t in sigma_t_values {
            let cell_dir = out_dir.join(format!("cell_ss{sigma_s}_st{sigma_t}"));
            let mut params = base.clone();
            params.sigma_s = sigma_s;
            params.sigma_t = sigma_t;
            let outcome = run_cell(&cell_dir, &pairs, &params, deconv);
            let cell = match outcome {
                Ok(summary) => CellResult {
                    sigma_s,
                    sigma_t,
                    avg_median_rtre: summary.avg_median_rtre,
                    avg_robustness: summary.avg_robustness,
                    error: None,
                },
                Err(e) => {
                    eprintln!("cell sigma_s={sigma_s} sigma_t={sigma_t} failed: {e}");
                    CellResult {
                        sigma_s,
                        sigma_t,
                        avg_median_rtre: f64::INFINITY,
                        avg_robustness: 0.0,
                        error: Some(e),
                    }
                }
            };
            let status = match &cell.error {
                None => "0".to_string(),
                Some(e) => crate::exit_code_of(e).to_string(),
            };
            let _ = atomic_write_bytes(&cell_dir.join("status.txt"), status.as_bytes());
            cells.push(cell);
        }
    }

    cells.sort_by(|a, b| {
        a.avg_median_rtre
            .total_cmp(&b.avg_median_rtre)
            .then(a.sigma_s.total_cmp(&b.sigma_s))
            .then(a.sigma_t.total_cmp(&b.sigma_t))
    });
    let mut csv = String::from("sigma_s,sigma_t,avg_median_rtre,avg_robustness\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.sigma_s, c.sigma_t, c.avg_median_rtre, c.avg_robustness
        ));
    }
    atomic_write_bytes(&out_dir.join("sweep.csv"), csv.as_bytes())?;

    Ok(cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(crate::exit_code_of))
        .max()
        .unwrap_or(0))
}

fn run_cell(
    cell_dir: &Path,
    pairs: &[SweepPair],
    params: &RegistrationParams,
    deconv: &DeconvOptions,
) -> Result<slidereg::eval::Summary> {
    std::fs::create_dir_all(cell_dir)?;
    let mut scores = Vec::new();
    for pair in pairs {
        let spec = RunSpec {
            pair_id: pair.pair_id.clone(),
            fixed: pair.fixed.clone(),
            moving: pair.moving.clone(),
            fixed_landmarks: Some(pair.fixed_landmarks.clone()),
            target_landmarks: Some(pair.target_landmarks.clone()),
            out_dir: cell_dir.join(&pair.pair_id),
        };
        let outcome = stage_run(&spec, params, deconv)?;
        scores.push(outcome.score.expect("sweep pairs always carry landmarks"));
    }
    slidereg::eval::aggregate(&scores)
}
