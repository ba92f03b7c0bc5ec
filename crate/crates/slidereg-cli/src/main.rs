//! Command-line driver for the two-stage slide registration pipeline.
//!
//! Exit codes: 1 usage, 2 missing/corrupt files, 3 numeric failure.

mod sidecar;
mod stages;
mod sweep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use slidereg::core::{default_params, RegistrationParams};
use slidereg::preprocess::DeconvFlags;
use slidereg::stains::StainMatrix;
use slidereg::{Error, Result};

use stages::{DeconvOptions, Role, RunSpec};

#[derive(Parser)]
#[command(
    name = "slidereg",
    version,
    about = "Greedy diffeomorphic registration of 2D slide images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the working image pair: stain removal, grayscale,
    /// downsampling, padding, boundary mask.
    Preprocess(PreprocessArgs),
    /// Brute-force rigid search plus LBFGS affine refinement.
    Affine(AffineArgs),
    /// Greedy deformable registration on top of the affine result.
    Diffeo(DiffeoArgs),
    /// Warp an image or map a landmark CSV through affine + field.
    Apply(ApplyArgs),
    /// Score landmark CSVs: median relative error and robustness.
    Evaluate(EvaluateArgs),
    /// Full pipeline for one pair, with optional landmark evaluation.
    Run(RunArgs),
    /// Grid search over the two smoothing widths across a pair manifest.
    Sweep(SweepArgs),
}

/// Registration parameters; unset flags keep the stock defaults.
#[derive(Args, Clone, Default)]
struct ParamArgs {
    /// Update-field smoothing width in pixels.
    #[arg(long)]
    sigma_s: Option<f64>,
    /// Total-field smoothing width in pixels.
    #[arg(long)]
    sigma_t: Option<f64>,
    /// Iterations per pyramid level, coarse to fine, e.g. 100x50x10.
    #[arg(long)]
    iters: Option<String>,
    /// Pyramid downsample factors, e.g. 4x2x1.
    #[arg(long)]
    pyramid: Option<String>,
    /// Divisor deriving the NCC kernel size from the image extent.
    #[arg(long)]
    ncc_scale: Option<f64>,
    /// Integer resampling factor applied during preprocessing.
    #[arg(long)]
    factor: Option<u32>,
    /// Seed for the brute-force rigid search.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random rigid candidates.
    #[arg(long)]
    candidates: Option<usize>,
    /// Largest per-iteration displacement of the smoothed update.
    #[arg(long)]
    epsilon_max: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<RegistrationParams> {
        let mut p = default_params();
        if let Some(v) = self.sigma_s {
            p.sigma_s = v;
        }
        if let Some(v) = self.sigma_t {
            p.sigma_t = v;
        }
        if let Some(s) = &self.iters {
            p.iters_per_level = parse_x_list(s, "--iters")?;
        }
        if let Some(s) = &self.pyramid {
            p.pyramid_factors = parse_x_list(s, "--pyramid")?;
        }
        if let Some(v) = self.ncc_scale {
            p.ncc_scale = v;
        }
        if let Some(v) = self.factor {
            p.resample_factor = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.candidates {
            p.n_candidates = v;
        }
        if let Some(v) = self.epsilon_max {
            p.epsilon_max = v;
        }
        p.validate()?;
        Ok(p)
    }
}

fn parse_x_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>> {
    s.split('x')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidParameter(format!("bad {flag} entry {part:?}")))
        })
        .collect()
}

fn parse_comma_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad {flag} entry {part:?}")))
        })
        .collect()
}

/// Stain-removal flags shared by preprocess, run, and sweep.
#[derive(Args, Clone, Default)]
struct DeconvArgs {
    /// Comma-separated roles to deconvolve before grayscale, e.g.
    /// "fixed,moving".
    #[arg(long)]
    deconv_dab: Option<String>,
    /// Stain matrix config (9 decimals, row-major); default is H-DAB.
    #[arg(long)]
    stain_matrix: Option<PathBuf>,
    /// Stain row to remove (0-based).
    #[arg(long, default_value_t = slidereg::stains::HDAB_DAB_CHANNEL)]
    stain_channel: usize,
}

impl DeconvArgs {
    fn resolve(&self) -> Result<DeconvOptions> {
        let mut flags = DeconvFlags::default();
        if let Some(roles) = &self.deconv_dab {
            for role in roles.split(',').filter(|r| !r.trim().is_empty()) {
                match role.trim() {
                    "fixed" => flags.fixed = true,
                    "moving" => flags.moving = true,
                    other => {
                        return Err(Error::InvalidParameter(format!(
                            "--deconv-dab role {other:?} (expected fixed and/or moving)"
                        )))
                    }
                }
            }
        }
        let stain_matrix = match &self.stain_matrix {
            Some(path) => StainMatrix::from_config_file(path)?,
            None => StainMatrix::hdab(),
        };
        if self.stain_channel > 2 {
            return Err(Error::InvalidParameter(
                "--stain-channel must be 0, 1, or 2".into(),
            ));
        }
        Ok(DeconvOptions {
            flags,
            stain_matrix,
            stain_channel: self.stain_channel,
        })
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    deconv: DeconvArgs,
}

#[derive(Args)]
struct AffineArgs {
    /// Directory produced by `preprocess`.
    #[arg(long)]
    prep_dir: PathBuf,
    /// Output path; defaults to affine.txt inside the prep directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct DiffeoArgs {
    #[arg(long)]
    prep_dir: PathBuf,
    /// Affine stage output; defaults to affine.txt inside the prep dir.
    #[arg(long)]
    affine: Option<PathBuf>,
    /// Output path; defaults to field.df2d inside the prep directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ApplyArgs {
    /// Grayscale image to warp.
    #[arg(long, conflicts_with = "landmarks")]
    image: Option<PathBuf>,
    /// Landmark CSV to map.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    affine: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    /// Prep sidecar: converts landmarks from original to working
    /// coordinates first (requires --role).
    #[arg(long, requires = "landmarks")]
    prep: Option<PathBuf>,
    /// Which image of the pair the landmarks belong to.
    #[arg(long, requires = "prep")]
    role: Option<Role>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth landmarks in the moving working frame.
    #[arg(long)]
    target: PathBuf,
    /// Fixed-image landmarks before registration.
    #[arg(long)]
    before: PathBuf,
    /// Fixed-image landmarks mapped through the recovered transform.
    #[arg(long)]
    after: PathBuf,
    /// Working-image width; defaults to the field header when given.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Field file to take dimensions from.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value = "pair")]
    pair_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Landmarks in the fixed image (original coordinates).
    #[arg(long, requires = "target_landmarks")]
    fixed_landmarks: Option<PathBuf>,
    /// Corresponding landmarks in the moving image (original coordinates).
    #[arg(long, requires = "fixed_landmarks")]
    target_landmarks: Option<PathBuf>,
    #[arg(long, default_value = "pair")]
    pair_id: String,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    deconv: DeconvArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Pair manifest: pair_id,fixed,moving,fixed_landmarks,target_landmarks.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated sigma-s values.
    #[arg(long)]
    sigma_s: String,
    /// Comma-separated sigma-t values.
    #[arg(long)]
    sigma_t: String,
    #[command(flatten)]
    deconv: DeconvArgs,
    /// Iterations per pyramid level, coarse to fine.
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    pyramid: Option<String>,
    #[arg(long)]
    ncc_scale: Option<f64>,
    #[arg(long)]
    factor: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    epsilon_max: Option<f64>,
}

/// Maps library errors onto process exit codes.
pub(crate) fn exit_code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => 1,
        Error::NonFiniteObjective
        | Error::NonFinite { .. }
        | Error::SingularTransform { .. }
        | Error::SingularStainMatrix { .. } => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_of(&e));
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Preprocess(args) => {
            let params = args.params.resolve()?;
            let deconv = args.deconv.resolve()?;
            stages::stage_preprocess(&args.fixed, &args.moving, &args.out_dir, &params, &deconv)?;
            println!("preprocessed pair written to {}", args.out_dir.display());
            Ok(0)
        }
        Command::Affine(args) => {
            let params = args.params.resolve()?;
            let out = args
                .out
                .unwrap_or_else(|| args.prep_dir.join(stages::AFFINE_TXT));
            let result = stages::stage_affine(&args.prep_dir, &out, &params)?;
            println!(
                "affine written to {} (value {} -> {}, {} evaluations)",
                out.display(),
                result.init_value,
                result.final_value,
                result.n_evals
            );
            Ok(0)
        }
        Command::Diffeo(args) => {
            let params = args.params.resolve()?;
            let affine = args
                .affine
                .unwrap_or_else(|| args.prep_dir.join(stages::AFFINE_TXT));
            let out = args
                .out
                .unwrap_or_else(|| args.prep_dir.join(stages::FIELD_DF2D));
            let result = stages::stage_diffeo(&args.prep_dir, &affine, &out, &params)?;
            println!(
                "field written to {} (per-level values {:?}, min jacobian {})",
                out.display(),
                result.per_level_values,
                result.min_jacobian
            );
            Ok(0)
        }
        Command::Apply(args) => {
            match (&args.image, &args.landmarks) {
                (Some(image), None) => {
                    stages::apply_to_image(
                        image,
                        args.affine.as_deref(),
                        args.field.as_deref(),
                        &args.out,
                    )?;
                }
                (None, Some(landmarks)) => {
                    let prep = match (&args.prep, args.role) {
                        (Some(p), Some(r)) => Some((p.as_path(), r)),
                        (None, None) => None,
                        _ => {
                            return Err(Error::InvalidParameter(
                                "--prep and --role go together".into(),
                            ))
                        }
                    };
                    stages::apply_to_landmarks(
                        landmarks,
                        args.affine.as_deref(),
                        args.field.as_deref(),
                        prep,
                        &args.out,
                    )?;
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "apply needs exactly one of --image or --landmarks".into(),
                    ))
                }
            }
            println!("wrote {}", args.out.display());
            Ok(0)
        }
        Command::Evaluate(args) => {
            let (width, height) = match (args.width, args.height, &args.field) {
                (Some(w), Some(h), _) => (w, h),
                (None, None, Some(field_path)) => {
                    let field = slidereg::io::read_field(field_path)?;
                    (field.width(), field.height())
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "evaluate needs --width and --height, or --field".into(),
                    ))
                }
            };
            let score = stages::stage_evaluate(
                &args.target,
                &args.before,
                &args.after,
                width,
                height,
                &args.pair_id,
                &args.out,
            )?;
            println!(
                "pairs=1 avg_median_rtre={} avg_robustness={}",
                score.median_rtre, score.robustness
            );
            Ok(0)
        }
        Command::Run(args) => {
            let params = args.params.resolve()?;
            let deconv = args.deconv.resolve()?;
            let spec = RunSpec {
                pair_id: args.pair_id,
                fixed: args.fixed,
                moving: args.moving,
                fixed_landmarks: args.fixed_landmarks,
                target_landmarks: args.target_landmarks,
                out_dir: args.out_dir,
            };
            let outcome = stages::stage_run(&spec, &params, &deconv)?;
            match &outcome.score {
                Some(s) => println!(
                    "pair {} done: median_rtre={} robustness={} min_jacobian={}",
                    spec.pair_id, s.median_rtre, s.robustness, outcome.min_jacobian
                ),
                None => println!(
                    "pair {} done: min_jacobian={}",
                    spec.pair_id, outcome.min_jacobian
                ),
            }
            Ok(0)
        }
        Command::Sweep(args) => {
            let base = ParamArgs {
                sigma_s: None,
                sigma_t: None,
                iters: args.iters.clone(),
                pyramid: args.pyramid.clone(),
                ncc_scale: args.ncc_scale,
                factor: args.factor,
                seed: args.seed,
                candidates: args.candidates,
                epsilon_max: args.epsilon_max,
            }
            .resolve()?;
            let deconv = args.deconv.resolve()?;
            let sigma_s = parse_comma_list(&args.sigma_s, "--sigma-s")?;
            let sigma_t = parse_comma_list(&args.sigma_t, "--sigma-t")?;
            let code = sweep::stage_sweep(
                &args.pairs,
                &args.out_dir,
                &sigma_s,
                &sigma_t,
                &base,
                &deconv,
            )?;
            println!("sweep written to {}", args.out_dir.join("sweep.csv").display());
            Ok(code)
        }
    }
}
