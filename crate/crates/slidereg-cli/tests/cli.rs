//! Contract tests for the command-line surface: file outputs, exit codes,
//! stage/run equivalence, and the sweep CSV.

mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use slidereg::core::{AffineTransform2D, DisplacementField};

fn run(args: &[&str]) -> std::process::Output {
    Command::new(binary()).args(args).output().expect("spawn")
}

fn run_in(dir: &Path, args: &[String]) -> std::process::Output {
    Command::new(binary())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// Writes a self-pair (identical fixed/moving) with a coincident landmark
/// grid; registration of it is cheap and exact.
fn write_self_pair(dir: &Path, n: usize, seed: u64) {
    let img = texture(n, seed);
    slidereg::io::write_scalar_image(&dir.join("fixed.pgm"), &img).unwrap();
    slidereg::io::write_scalar_image(&dir.join("moving.pgm"), &img).unwrap();
    let grid = landmark_grid(n, 4, 16.0);
    write_landmark_csv(&dir.join("fixed_lm.csv"), &grid);
    write_landmark_csv(&dir.join("target_lm.csv"), &grid);
}

#[test]
fn preprocess_writes_contracted_files() {
    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 100, 11);
    let out = run(&[
        "preprocess",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--out-dir",
        &s(&dir.path().join("prep")),
        "--factor",
        "1",
    ]);
    assert!(out.status.success());
    for name in ["fixed.pgm", "moving.pgm", "mask.pgm", "prep.txt"] {
        assert!(dir.path().join("prep").join(name).exists(), "{name} missing");
    }
    // factor 1: only padding; 100x100 with k=4 becomes 132x132.
    let prep = std::fs::read_to_string(dir.path().join("prep/prep.txt")).unwrap();
    assert!(prep.contains("k=4"));
    assert!(prep.contains("width=132"));
    assert!(prep.contains("fixed_pad_left=16"));
}

#[test]
fn deconv_flag_changes_only_the_named_role() {
    let dir = tempfile::tempdir().unwrap();
    // A color pair so stain removal has an effect.
    let mut rgb = Vec::new();
    for i in 0..(3 * 64 * 64) {
        rgb.push((60 + (i * 29) % 160) as u8);
    }
    let img = slidereg::core::RgbImage::new(64, 64, rgb).unwrap();
    slidereg::io::write_rgb_image(&dir.path().join("fixed.ppm"), &img).unwrap();
    slidereg::io::write_rgb_image(&dir.path().join("moving.ppm"), &img).unwrap();
    let mut base_args: Vec<String> = vec![
        "preprocess".into(),
        "--fixed".into(),
        s(&dir.path().join("fixed.ppm")),
        "--moving".into(),
        s(&dir.path().join("moving.ppm")),
        "--factor".into(),
        "1".into(),
        "--out-dir".into(),
        s(&dir.path().join("plain")),
    ];
    assert!(run_in(dir.path(), &base_args).status.success());
    base_args[8] = s(&dir.path().join("flagged"));
    base_args.push("--deconv-dab".into());
    base_args.push("fixed".into());
    assert!(run_in(dir.path(), &base_args).status.success());

    let read = |p: &str, name: &str| std::fs::read(dir.path().join(p).join(name)).unwrap();
    assert_eq!(read("plain", "moving.pgm"), read("flagged", "moving.pgm"));
    assert_ne!(read("plain", "fixed.pgm"), read("flagged", "fixed.pgm"));
}

#[test]
fn run_on_identical_pair_reports_zero_median() {
    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 96, 12);
    let out = run(&[
        "run",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--fixed-landmarks",
        &s(&dir.path().join("fixed_lm.csv")),
        "--target-landmarks",
        &s(&dir.path().join("target_lm.csv")),
        "--out-dir",
        &s(&dir.path().join("out")),
        "--factor",
        "1",
        "--candidates",
        "50",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let scores = std::fs::read_to_string(dir.path().join("out/scores.csv")).unwrap();
    let row = scores.lines().nth(1).unwrap();
    let median: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(median, 0.0, "scores: {scores}");
}

#[test]
fn apply_identity_transform_round_trips_image_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let img = texture(40, 13);
    let img_path = dir.path().join("img.pgm");
    slidereg::io::write_scalar_image(&img_path, &img).unwrap();
    let affine_path = dir.path().join("id.txt");
    slidereg::io::write_affine(&affine_path, &AffineTransform2D::identity(19.5, 19.5)).unwrap();
    let field_path = dir.path().join("zero.df2d");
    slidereg::io::write_field(&field_path, &DisplacementField::zeros(40, 40).unwrap()).unwrap();
    let out_path = dir.path().join("warped.pgm");
    let out = run(&[
        "apply",
        "--image",
        &s(&img_path),
        "--affine",
        &s(&affine_path),
        "--field",
        &s(&field_path),
        "--out",
        &s(&out_path),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&img_path).unwrap(), std::fs::read(&out_path).unwrap());
}

#[test]
fn apply_maps_landmarks_through_affine_and_field() {
    let dir = tempfile::tempdir().unwrap();
    write_landmark_csv(&dir.path().join("lm.csv"), &[(10.0, 10.0), (3.0, 4.0)]);
    let affine_path = dir.path().join("a.txt");
    slidereg::io::write_affine(
        &affine_path,
        &AffineTransform2D::new(1.0, 0.0, 0.0, 1.0, 2.5, -1.5, 0.0, 0.0).unwrap(),
    )
    .unwrap();
    let out_path = dir.path().join("mapped.csv");
    let out = run(&[
        "apply",
        "--landmarks",
        &s(&dir.path().join("lm.csv")),
        "--affine",
        &s(&affine_path),
        "--out",
        &s(&out_path),
    ]);
    assert!(out.status.success());
    let mapped = read_landmark_csv(&out_path);
    assert_eq!(mapped, vec![(12.5, 8.5), (5.5, 2.5)]);
}

#[test]
fn apply_converts_landmarks_to_working_frame_with_prep() {
    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 60, 17);
    let prep_dir = dir.path().join("prep");
    let out = run(&[
        "preprocess",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--out-dir",
        &s(&prep_dir),
        "--factor",
        "1",
    ]);
    assert!(out.status.success());
    write_landmark_csv(&dir.path().join("lm.csv"), &[(10.0, 20.0)]);
    let out_path = dir.path().join("mapped.csv");
    // Identity transform: mapping reduces to the frame conversion, which
    // for a 60x60 input (k = 2) is a (8, 8) pad shift.
    let affine_path = dir.path().join("id.txt");
    slidereg::io::write_affine(&affine_path, &AffineTransform2D::identity(0.0, 0.0)).unwrap();
    let out = run(&[
        "apply",
        "--landmarks",
        &s(&dir.path().join("lm.csv")),
        "--affine",
        &s(&affine_path),
        "--prep",
        &s(&prep_dir.join("prep.txt")),
        "--role",
        "fixed",
        "--out",
        &s(&out_path),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mapped = read_landmark_csv(&out_path);
    assert_eq!(mapped, vec![(18.0, 28.0)]);
}

#[test]
fn evaluate_three_four_five_example() {
    let dir = tempfile::tempdir().unwrap();
    write_landmark_csv(&dir.path().join("target.csv"), &[(10.0, 10.0)]);
    write_landmark_csv(&dir.path().join("before.csv"), &[(20.0, 20.0)]);
    write_landmark_csv(&dir.path().join("after.csv"), &[(13.0, 14.0)]);
    let out = run(&[
        "evaluate",
        "--target",
        &s(&dir.path().join("target.csv")),
        "--before",
        &s(&dir.path().join("before.csv")),
        "--after",
        &s(&dir.path().join("after.csv")),
        "--width",
        "100",
        "--height",
        "100",
        "--out",
        &s(&dir.path().join("scores.csv")),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("avg_median_rtre="), "stdout: {stdout}");
    let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let median: f64 = scores
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((median - 0.035_355_339_059_327_38).abs() < 1e-9);
}

#[test]
fn stage_commands_match_full_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let n = 96;
    let fixed = texture(n, 14);
    let gen = AffineTransform2D::new(1.0, 0.0, 0.0, 1.0, -3.0, 2.0, 0.0, 0.0).unwrap();
    let moving = slidereg::warp::warp_image_affine(&fixed, &gen, None).unwrap();
    slidereg::io::write_scalar_image(&dir.path().join("fixed.pgm"), &fixed).unwrap();
    slidereg::io::write_scalar_image(&dir.path().join("moving.pgm"), &moving).unwrap();

    let shared = [
        "--factor",
        "1",
        "--candidates",
        "300",
        "--iters",
        "20x10x5",
    ];
    // Full run.
    let mut args = vec![
        "run",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--out-dir",
        &s(&dir.path().join("full")),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(shared.iter().map(|t| t.to_string()));
    assert!(run_in(dir.path(), &args).status.success());

    // Stage by stage into another directory.
    let staged = dir.path().join("staged");
    let mut pre = vec![
        "preprocess".to_string(),
        "--fixed".into(),
        s(&dir.path().join("fixed.pgm")),
        "--moving".into(),
        s(&dir.path().join("moving.pgm")),
        "--out-dir".into(),
        s(&staged),
    ];
    pre.extend(shared.iter().map(|t| t.to_string()));
    assert!(run_in(dir.path(), &pre).status.success());

    let mut aff = vec!["affine".to_string(), "--prep-dir".into(), s(&staged)];
    aff.extend(shared.iter().map(|t| t.to_string()));
    assert!(run_in(dir.path(), &aff).status.success());

    let mut dif = vec!["diffeo".to_string(), "--prep-dir".into(), s(&staged)];
    dif.extend(shared.iter().map(|t| t.to_string()));
    assert!(run_in(dir.path(), &dif).status.success());

    let apply = vec![
        "apply".to_string(),
        "--image".into(),
        s(&staged.join("moving.pgm")),
        "--affine".into(),
        s(&staged.join("affine.txt")),
        "--field".into(),
        s(&staged.join("field.df2d")),
        "--out".into(),
        s(&staged.join("warped.pgm")),
    ];
    assert!(run_in(dir.path(), &apply).status.success());

    for name in ["fixed.pgm", "moving.pgm", "mask.pgm", "prep.txt", "affine.txt", "field.df2d", "warped.pgm"] {
        let a = std::fs::read(dir.path().join("full").join(name)).unwrap();
        let b = std::fs::read(staged.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between run and staged commands");
    }
}

#[test]
fn sweep_grid_is_sorted_and_matches_run_on_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 72, 15);
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(
        &pairs,
        format!(
            "p0,{},{},{},{}\n",
            s(&dir.path().join("fixed.pgm")),
            s(&dir.path().join("moving.pgm")),
            s(&dir.path().join("fixed_lm.csv")),
            s(&dir.path().join("target_lm.csv")),
        ),
    )
    .unwrap();

    // 2x2 grid on a self-pair: rows sorted, every median tiny.
    let out = run(&[
        "sweep",
        "--pairs",
        &s(&pairs),
        "--out-dir",
        &s(&dir.path().join("grid")),
        "--sigma-s",
        "4,6",
        "--sigma-t",
        "3,5",
        "--factor",
        "1",
        "--candidates",
        "50",
        "--iters",
        "10x5x2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("grid/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let medians: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    for pair in medians.windows(2) {
        assert!(pair[0] <= pair[1], "rows not sorted: {medians:?}");
    }
    for m in &medians {
        assert!(*m < 1e-3, "self-pair median rtre {m}");
    }

    // 1x1 grid equals the aggregate of a direct run with the same settings.
    let out = run(&[
        "sweep",
        "--pairs",
        &s(&pairs),
        "--out-dir",
        &s(&dir.path().join("single")),
        "--sigma-s",
        "6",
        "--sigma-t",
        "5",
        "--factor",
        "1",
        "--candidates",
        "50",
        "--iters",
        "10x5x2",
    ]);
    assert!(out.status.success());
    let single = std::fs::read_to_string(dir.path().join("single/sweep.csv")).unwrap();
    let row = single.lines().nth(1).unwrap();
    let sweep_median: f64 = row.split(',').nth(2).unwrap().parse().unwrap();

    let run_out = run(&[
        "run",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--fixed-landmarks",
        &s(&dir.path().join("fixed_lm.csv")),
        "--target-landmarks",
        &s(&dir.path().join("target_lm.csv")),
        "--out-dir",
        &s(&dir.path().join("direct")),
        "--factor",
        "1",
        "--candidates",
        "50",
        "--iters",
        "10x5x2",
    ]);
    assert!(run_out.status.success());
    let scores = std::fs::read_to_string(dir.path().join("direct/scores.csv")).unwrap();
    let direct_median: f64 = scores
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(sweep_median, direct_median);
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 48, 18);
    // The landmark path is wrong, so every cell fails.
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(
        &pairs,
        format!(
            "p0,{},{},{},{}\n",
            s(&dir.path().join("fixed.pgm")),
            s(&dir.path().join("moving.pgm")),
            s(&dir.path().join("missing_lm.csv")),
            s(&dir.path().join("target_lm.csv")),
        ),
    )
    .unwrap();
    let out = run(&[
        "sweep",
        "--pairs",
        &s(&pairs),
        "--out-dir",
        &s(&dir.path().join("grid")),
        "--sigma-s",
        "6",
        "--sigma-t",
        "5,4",
        "--factor",
        "1",
        "--candidates",
        "50",
        "--iters",
        "2x1x1",
    ]);
    assert_eq!(out.status.code(), Some(2), "worst cell status propagates");
    let csv = std::fs::read_to_string(dir.path().join("grid/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!(row.contains("inf"), "sentinel row missing: {row}");
    }
    assert_eq!(
        std::fs::read_to_string(dir.path().join("grid/cell_ss6_st5/status.txt")).unwrap(),
        "2"
    );
}

#[test]
fn png_images_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = texture(24, 19);
    let gray_path = dir.path().join("g.png");
    slidereg::io::write_scalar_image(&gray_path, &img).unwrap();
    match slidereg::io::read_image(&gray_path).unwrap() {
        slidereg::io::LoadedImage::Gray(back) => {
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        _ => panic!("expected grayscale PNG"),
    }

    let rgb = slidereg::core::RgbImage::new(5, 4, (0..60).map(|i| (i * 4) as u8).collect()).unwrap();
    let rgb_path = dir.path().join("c.png");
    slidereg::io::write_rgb_image(&rgb_path, &rgb).unwrap();
    match slidereg::io::read_image(&rgb_path).unwrap() {
        slidereg::io::LoadedImage::Rgb(back) => assert_eq!(back.data(), rgb.data()),
        _ => panic!("expected RGB PNG"),
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    write_self_pair(dir.path(), 48, 16);
    // Invalid parameter value: factor 0.
    let out = run(&[
        "run",
        "--fixed",
        &s(&dir.path().join("fixed.pgm")),
        "--moving",
        &s(&dir.path().join("moving.pgm")),
        "--out-dir",
        &s(&dir.path().join("out")),
        "--factor",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--fixed",
        &s(&dir.path().join("nope.pgm")),
        "--moving",
        &s(&dir.path().join("also-nope.pgm")),
        "--out-dir",
        &s(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "diffeo",
        "--prep-dir",
        &s(&dir.path().join("not-a-prep-dir")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_image_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.pgm"), b"P5\n10 10\n255\nshort").unwrap();
    std::fs::write(dir.path().join("ok.pgm"), {
        let mut v = b"P5\n2 2\n255\n".to_vec();
        v.extend_from_slice(&[0, 1, 2, 3]);
        v
    })
    .unwrap();
    let out = run(&[
        "preprocess",
        "--fixed",
        &s(&dir.path().join("bad.pgm")),
        "--moving",
        &s(&dir.path().join("ok.pgm")),
        "--out-dir",
        &s(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
