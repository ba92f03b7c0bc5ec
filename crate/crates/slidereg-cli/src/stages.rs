//! Pipeline stages as filesystem-to-filesystem functions. `run` chains the
//! same functions the standalone subcommands call, so a full run and a
//! stage-by-stage run produce identical bytes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use slidereg::core::{
    AffineTransform2D, BinaryMask, LandmarkSet, RegistrationParams, ScalarImage,
};
use slidereg::io::{
    read_affine, read_field, read_image, read_landmarks, write_affine, write_field_to,
    write_landmarks, write_scalar_image, LoadedImage,
};
use slidereg::preprocess::{prepare_pair, DeconvFlags};
use slidereg::stains::StainMatrix;
use slidereg::warp::{map_landmarks, warp_image, warp_image_affine, TotalTransform};
use slidereg::{Error, Result};

use crate::sidecar::{atomic_write, read_provenance, write_provenance, PrepInfo, Record};

pub const FIXED_PGM: &str = "fixed.pgm";
pub const MOVING_PGM: &str = "moving.pgm";
pub const MASK_PGM: &str = "mask.pgm";
pub const PREP_TXT: &str = "prep.txt";
pub const AFFINE_TXT: &str = "affine.txt";
pub const FIELD_DF2D: &str = "field.df2d";
pub const WARPED_PGM: &str = "warped.pgm";
pub const SCORES_CSV: &str = "scores.csv";
pub const MANIFEST_TXT: &str = "manifest.txt";
pub const BEFORE_CSV: &str = "landmarks_before.csv";
pub const AFTER_CSV: &str = "landmarks_after.csv";
pub const TARGET_CSV: &str = "landmarks_target.csv";

/// Which images of the pair receive DAB removal, plus the stain basis.
#[derive(Debug, Clone)]
pub struct DeconvOptions {
    pub flags: DeconvFlags,
    pub stain_matrix: StainMatrix,
    pub stain_channel: usize,
}

impl Default for DeconvOptions {
    fn default() -> Self {
        Self {
            flags: DeconvFlags::default(),
            stain_matrix: StainMatrix::hdab(),
            stain_channel: slidereg::stains::HDAB_DAB_CHANNEL,
        }
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing input {}", path.display()),
        )));
    }
    Ok(())
}

fn load_scalar(path: &Path) -> Result<ScalarImage> {
    match read_image(path)? {
        LoadedImage::Gray(img) => Ok(img),
        LoadedImage::Rgb(_) => Err(Error::UnsupportedImage(format!(
            "{} should be a grayscale working image",
            path.display()
        ))),
    }
}

fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_scalar(path)?;
    let data = img.data().iter().map(|&v| u8::from(v > 0.5)).collect();
    BinaryMask::new(img.width(), img.height(), data)
}

fn write_scalar_atomic(path: &Path, img: &ScalarImage) -> Result<()> {
    atomic_write(path, |tmp| write_scalar_image(tmp, img))
}

/// Preprocess both slides into the working pair and its sidecars.
pub fn stage_preprocess(
    fixed_path: &Path,
    moving_path: &Path,
    out_dir: &Path,
    params: &RegistrationParams,
    deconv: &DeconvOptions,
) -> Result<()> {
    require_exists(fixed_path)?;
    require_exists(moving_path)?;
    std::fs::create_dir_all(out_dir)?;
    let fixed_rgb = read_image(fixed_path)?.into_rgb();
    let moving_rgb = read_image(moving_path)?.into_rgb();
    let pair = prepare_pair(
        &fixed_rgb,
        &moving_rgb,
        params,
        deconv.flags,
        &deconv.stain_matrix,
        deconv.stain_channel,
    )?;
    write_scalar_atomic(&out_dir.join(FIXED_PGM), &pair.fixed)?;
    write_scalar_atomic(&out_dir.join(MOVING_PGM), &pair.moving)?;
    let mask_img = ScalarImage::new(
        pair.mask.width(),
        pair.mask.height(),
        pair.mask.data().iter().map(|&v| f64::from(v)).collect(),
    )?;
    write_scalar_atomic(&out_dir.join(MASK_PGM), &mask_img)?;
    write_provenance(
        &out_dir.join(PREP_TXT),
        &pair.provenance,
        pair.fixed.width(),
        pair.fixed.height(),
    )
}

pub struct PrepDir {
    pub fixed: ScalarImage,
    pub moving: ScalarImage,
    pub mask: BinaryMask,
    pub info: PrepInfo,
}

pub fn load_prep_dir(dir: &Path) -> Result<PrepDir> {
    for name in [FIXED_PGM, MOVING_PGM, MASK_PGM, PREP_TXT] {
        require_exists(&dir.join(name))?;
    }
    Ok(PrepDir {
        fixed: load_scalar(&dir.join(FIXED_PGM))?,
        moving: load_scalar(&dir.join(MOVING_PGM))?,
        mask: load_mask(&dir.join(MASK_PGM))?,
        info: read_provenance(&dir.join(PREP_TXT))?,
    })
}

/// Brute-force initialization plus LBFGS refinement; writes the affine
/// text file and returns the optimizer statistics.
pub fn stage_affine(
    prep_dir: &Path,
    out_path: &Path,
    params: &RegistrationParams,
) -> Result<slidereg::affine::AffineResult> {
    let prep = load_prep_dir(prep_dir)?;
    let pair = slidereg::preprocess::PreprocessedPair {
        fixed: prep.fixed,
        moving: prep.moving,
        mask: prep.mask,
        k: prep.info.provenance.kernel_size,
        provenance: prep.info.provenance,
    };
    let a0 = slidereg::affine::brute_force_init(&pair, params)?;
    let result = slidereg::affine::lbfgs_refine(&pair, &a0, params)?;
    atomic_write(out_path, |tmp| write_affine(tmp, &result.transform))?;
    Ok(result)
}

/// Greedy deformable registration of the affinely-resampled moving image;
/// writes the displacement field container.
pub fn stage_diffeo(
    prep_dir: &Path,
    affine_path: &Path,
    out_path: &Path,
    params: &RegistrationParams,
) -> Result<slidereg::diffeo::DiffeoResult> {
    let prep = load_prep_dir(prep_dir)?;
    require_exists(affine_path)?;
    let transform = read_affine(affine_path)?;
    let moving_resampled = warp_image_affine(&prep.moving, &transform, None)?;
    let result = slidereg::diffeo::greedy_register(
        &prep.fixed,
        &moving_resampled,
        prep.info.provenance.kernel_size,
        params,
    )?;
    atomic_write(out_path, |tmp| {
        let file = std::fs::File::create(tmp)?;
        let mut out = std::io::BufWriter::new(file);
        write_field_to(&mut out, &result.field)?;
        use std::io::Write;
        Ok(out.flush()?)
    })?;
    Ok(result)
}

/// Converts landmarks from original-image coordinates into the working
/// frame of the given role.
pub fn landmarks_to_working(
    set: &LandmarkSet,
    info: &PrepInfo,
    role_offset: (usize, usize),
) -> Result<LandmarkSet> {
    let f = info.provenance.resample_factor as f64;
    LandmarkSet::new(
        set.points()
            .iter()
            .map(|&(x, y)| {
                (
                    x / f + role_offset.0 as f64,
                    y / f + role_offset.1 as f64,
                )
            })
            .collect(),
    )
}

fn identity_for(field: Option<&slidereg::core::DisplacementField>) -> AffineTransform2D {
    let (cx, cy) = field
        .map(|f| {
            (
                (f.width() - 1) as f64 / 2.0,
                (f.height() - 1) as f64 / 2.0,
            )
        })
        .unwrap_or((0.0, 0.0));
    AffineTransform2D::identity(cx, cy)
}

/// Warps an image through affine then field, mirroring the pipeline's
/// two-resampling view of the moving image.
pub fn apply_to_image(
    image_path: &Path,
    affine_path: Option<&Path>,
    field_path: Option<&Path>,
    out_path: &Path,
) -> Result<()> {
    require_exists(image_path)?;
    let img = load_scalar(image_path)?;
    let field = field_path
        .map(|p| {
            require_exists(p)?;
            read_field(p)
        })
        .transpose()?;
    let affine = affine_path
        .map(|p| {
            require_exists(p)?;
            read_affine(p)
        })
        .transpose()?
        .unwrap_or_else(|| identity_for(field.as_ref()));
    let resampled = warp_image_affine(&img, &affine, None)?;
    let warped = match &field {
        Some(f) => warp_image(&resampled, f, None)?,
        None => resampled,
    };
    write_scalar_atomic(out_path, &warped)
}

/// Which image of the pair a landmark file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Fixed,
    Moving,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(Role::Fixed),
            "moving" => Ok(Role::Moving),
            other => Err(format!("role must be fixed or moving, got {other:?}")),
        }
    }
}

/// Maps a landmark CSV through the analytic composition `A(x + u(x))`.
/// With a prep sidecar the input is first converted from original to
/// working coordinates for the named role.
pub fn apply_to_landmarks(
    landmarks_path: &Path,
    affine_path: Option<&Path>,
    field_path: Option<&Path>,
    prep: Option<(&Path, Role)>,
    out_path: &Path,
) -> Result<()> {
    require_exists(landmarks_path)?;
    let mut set = read_landmarks(landmarks_path)?;
    if let Some((prep_path, role)) = prep {
        let info = read_provenance(prep_path)?;
        let offset = match role {
            Role::Fixed => info.provenance.fixed_offset,
            Role::Moving => info.provenance.moving_offset,
        };
        set = landmarks_to_working(&set, &info, offset)?;
    }
    let field = field_path
        .map(|p| {
            require_exists(p)?;
            read_field(p)
        })
        .transpose()?;
    let affine = affine_path
        .map(|p| {
            require_exists(p)?;
            read_affine(p)
        })
        .transpose()?
        .unwrap_or_else(|| identity_for(field.as_ref()));
    let mapped = match field {
        Some(field) => map_landmarks(&set, &TotalTransform { affine, field })?,
        None => LandmarkSet::new(
            set.points()
                .iter()
                .map(|&(x, y)| affine.apply(x, y))
                .collect(),
        )?,
    };
    atomic_write(out_path, |tmp| write_landmarks(tmp, &mapped))
}

/// Scores one pair from target/before/after landmark CSVs; writes the
/// score CSV and returns the score.
pub fn stage_evaluate(
    target_path: &Path,
    before_path: &Path,
    after_path: &Path,
    width: usize,
    height: usize,
    pair_id: &str,
    out_path: &Path,
) -> Result<slidereg::eval::PairScore> {
    for p in [target_path, before_path, after_path] {
        require_exists(p)?;
    }
    let target = read_landmarks(target_path)?;
    let before = read_landmarks(before_path)?;
    let after = read_landmarks(after_path)?;
    let score = slidereg::eval::score_pair(&target, &before, &after, width, height)?;
    let mut csv = String::from("pair_id,median_rtre,robustness\n");
    csv.push_str(&format!(
        "{pair_id},{},{}\n",
        score.median_rtre, score.robustness
    ));
    crate::sidecar::atomic_write_bytes(out_path, csv.as_bytes())?;
    Ok(score)
}

/// Everything `run` needs beyond the pipeline parameters.
pub struct RunSpec {
    pub pair_id: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_landmarks: Option<PathBuf>,
    pub target_landmarks: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub score: Option<slidereg::eval::PairScore>,
    pub min_jacobian: f64,
}

/// Chains preprocess, affine, diffeo, landmark mapping, and evaluation,
/// then writes the manifest.
pub fn stage_run(
    spec: &RunSpec,
    params: &RegistrationParams,
    deconv: &DeconvOptions,
) -> Result<RunOutcome> {
    require_exists(&spec.fixed)?;
    require_exists(&spec.moving)?;
    if let Some(p) = &spec.fixed_landmarks {
        require_exists(p)?;
    }
    if let Some(p) = &spec.target_landmarks {
        require_exists(p)?;
    }
    if spec.fixed_landmarks.is_some() != spec.target_landmarks.is_some() {
        return Err(Error::InvalidParameter(
            "landmark evaluation needs both --fixed-landmarks and --target-landmarks".into(),
        ));
    }
    std::fs::create_dir_all(&spec.out_dir)?;
    let dir = spec.out_dir.as_path();

    let t0 = Instant::now();
    stage_preprocess(&spec.fixed, &spec.moving, dir, params, deconv)?;
    let prep_ms = t0.elapsed().as_millis();

    let t1 = Instant::now();
    let affine_result = stage_affine(dir, &dir.join(AFFINE_TXT), params)?;
    let affine_ms = t1.elapsed().as_millis();

    let t2 = Instant::now();
    let diffeo_result = stage_diffeo(dir, &dir.join(AFFINE_TXT), &dir.join(FIELD_DF2D), params)?;
    let diffeo_ms = t2.elapsed().as_millis();

    let t3 = Instant::now();
    apply_to_image(
        &dir.join(MOVING_PGM),
        Some(&dir.join(AFFINE_TXT)),
        Some(&dir.join(FIELD_DF2D)),
        &dir.join(WARPED_PGM),
    )?;
    let mut score = None;
    if let (Some(fixed_lm), Some(target_lm)) = (&spec.fixed_landmarks, &spec.target_landmarks) {
        let info = read_provenance(&dir.join(PREP_TXT))?;
        let before =
            landmarks_to_working(&read_landmarks(fixed_lm)?, &info, info.provenance.fixed_offset)?;
        let target = landmarks_to_working(
            &read_landmarks(target_lm)?,
            &info,
            info.provenance.moving_offset,
        )?;
        atomic_write(&dir.join(BEFORE_CSV), |tmp| write_landmarks(tmp, &before))?;
        atomic_write(&dir.join(TARGET_CSV), |tmp| write_landmarks(tmp, &target))?;
        apply_to_landmarks(
            &dir.join(BEFORE_CSV),
            Some(&dir.join(AFFINE_TXT)),
            Some(&dir.join(FIELD_DF2D)),
            None,
            &dir.join(AFTER_CSV),
        )?;
        score = Some(stage_evaluate(
            &dir.join(TARGET_CSV),
            &dir.join(BEFORE_CSV),
            &dir.join(AFTER_CSV),
            info.width,
            info.height,
            &spec.pair_id,
            &dir.join(SCORES_CSV),
        )?);
    }
    let apply_ms = t3.elapsed().as_millis();

    let mut manifest = Record::new();
    manifest.push("pair_id", &spec.pair_id);
    manifest.push("fixed", spec.fixed.display());
    manifest.push("moving", spec.moving.display());
    if let Some(p) = &spec.fixed_landmarks {
        manifest.push("fixed_landmarks", p.display());
    }
    if let Some(p) = &spec.target_landmarks {
        manifest.push("target_landmarks", p.display());
    }
    manifest.push("out_dir", dir.display());
    manifest.push("sigma_s", params.sigma_s);
    manifest.push("sigma_t", params.sigma_t);
    manifest.push(
        "iters",
        params
            .iters_per_level
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("x"),
    );
    manifest.push(
        "pyramid",
        params
            .pyramid_factors
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("x"),
    );
    manifest.push("ncc_scale", params.ncc_scale);
    manifest.push("epsilon_max", params.epsilon_max);
    manifest.push("seed", params.seed);
    manifest.push("candidates", params.n_candidates);
    manifest.push("factor", params.resample_factor);
    manifest.push("affine_init_value", affine_result.init_value);
    manifest.push("affine_final_value", affine_result.final_value);
    manifest.push("affine_n_evals", affine_result.n_evals);
    manifest.push("min_jacobian", diffeo_result.min_jacobian);
    manifest.push(
        "per_level_values",
        diffeo_result
            .per_level_values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    if let Some(s) = &score {
        manifest.push("median_rtre", s.median_rtre);
        manifest.push("robustness", s.robustness);
    }
    manifest.push("prep_ms", prep_ms);
    manifest.push("affine_ms", affine_ms);
    manifest.push("diffeo_ms", diffeo_ms);
    manifest.push("apply_ms", apply_ms);
    manifest.write(&dir.join(MANIFEST_TXT))?;

    Ok(RunOutcome {
        score,
        min_jacobian: diffeo_result.min_jacobian,
    })
}
