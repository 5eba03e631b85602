//! End-to-end checks of the `mfseg` binary: artifact formats, replay
//! determinism, exit codes, and parity between CLI records and the
//! library calls they wrap.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfseg::metrics::score_segmentation;
use mfseg::Grid;
use mfseg_cli::io::{read_mask, write_image, write_mask};
use mfseg_cli::report::{parse, strip_timings};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfseg"))
}

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn mfseg")
}

fn expect_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mfseg-cli-tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn value<'a>(pairs: &'a [(String, String)], key: &str) -> &'a str {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .unwrap_or_else(|| panic!("record is missing {key}"))
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_replays_byte_identical() {
    let dir = fresh_dir("synth-replay");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let args = [
            "synth", "--n", "64", "--seed", "7", "--out",
            out.to_str().unwrap(),
        ];
        expect_ok(&run(&args));
    }
    assert_eq!(read(&a.join("image.mfg1")), read(&b.join("image.mfg1")));
    assert_eq!(read(&a.join("mask.pgm")), read(&b.join("mask.pgm")));

    let image = read(&a.join("image.mfg1"));
    assert_eq!(&image[0..4], b"MFG1");
    let mask = read_mask(&a.join("mask.pgm")).unwrap();
    assert_eq!(mask.rows(), 64);
    assert!(mask.data().iter().all(|&l| l == 1 || l == 2));
}

#[test]
fn synth_rejects_non_power_of_two_side() {
    let dir = fresh_dir("synth-bad-n");
    let out = run(&["synth", "--n", "100", "--out", dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("power of two"), "stderr was: {msg}");
}

#[test]
fn segment_scale_overflow_exits_2_with_state_dump() {
    let dir = fresh_dir("segment-overflow");
    expect_ok(&run(&[
        "synth", "--n", "32", "--seed", "2", "--out",
        dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let out = run(&[
        "segment", img.to_str().unwrap(), "--k", "2", "--j1", "1", "--j2", "3",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let dump = fs::read_to_string(dir.join("error-state.txt")).unwrap();
    assert!(dump.contains("error: "));
    assert!(dump.contains("config-j2: 3"));
}

#[test]
fn segment_wants_at_least_two_classes() {
    let dir = fresh_dir("segment-k1");
    expect_ok(&run(&[
        "synth", "--n", "32", "--seed", "2", "--out",
        dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let out = run(&[
        "segment", img.to_str().unwrap(), "--k", "1", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn eval_scores_identical_and_complementary_masks() {
    let dir = fresh_dir("eval-identity");
    let half = Grid::from_fn(16, 16, |r, _| if r < 8 { 1u8 } else { 2 });
    let flipped = half.map(|&l| 3 - l);
    let (pa, pb) = (dir.join("a.pgm"), dir.join("b.pgm"));
    write_mask(&pa, &half).unwrap();
    write_mask(&pb, &flipped).unwrap();

    let same = run(&["eval", pa.to_str().unwrap(), pa.to_str().unwrap()]);
    expect_ok(&same);
    let rec = parse(&String::from_utf8_lossy(&same.stdout));
    assert_eq!(value(&rec, "error-pct"), "0.0000");
    assert_eq!(value(&rec, "dsc-class-1"), "1.000000");
    assert_eq!(value(&rec, "dsc-class-2"), "1.000000");
    assert_eq!(value(&rec, "permutation"), "1,2");

    // Swapped labels are the same partition; the permutation absorbs it.
    let swapped = run(&["eval", pb.to_str().unwrap(), pa.to_str().unwrap()]);
    expect_ok(&swapped);
    let rec = parse(&String::from_utf8_lossy(&swapped.stdout));
    assert_eq!(value(&rec, "error-pct"), "0.0000");
    assert_eq!(value(&rec, "dsc-class-1"), "1.000000");
    assert_eq!(value(&rec, "permutation"), "2,1");
}

#[test]
fn eval_shape_mismatch_exits_3() {
    let dir = fresh_dir("eval-shape");
    let small = Grid::from_fn(16, 16, |_, _| 1u8);
    let large = Grid::from_fn(32, 32, |_, _| 1u8);
    let (pa, pb) = (dir.join("a.pgm"), dir.join("b.pgm"));
    write_mask(&pa, &small).unwrap();
    write_mask(&pb, &large).unwrap();
    let out = run(&["eval", pa.to_str().unwrap(), pb.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn estimate_flags_constant_input() {
    let dir = fresh_dir("estimate-const");
    let img_path = dir.join("flat.mfg1");
    write_image(&img_path, &Grid::from_fn(64, 64, |_, _| 3.25)).unwrap();
    let out = run(&[
        "estimate", img_path.to_str().unwrap(), "--out",
        dir.to_str().unwrap(),
    ]);
    expect_ok(&out);
    let rec = parse(&fs::read_to_string(dir.join("report.txt")).unwrap());
    assert_eq!(value(&rec, "degenerate"), "true");
    assert_eq!(value(&rec, "regression-c2"), "0.000000");
    assert_eq!(value(&rec, "c2-mmse"), "-0.000000");
}

#[test]
fn estimate_recovers_homogeneous_c2_and_replays() {
    let dir = fresh_dir("estimate-mrw");
    expect_ok(&run(&[
        "synth", "--preset", "mrw", "--n", "512", "--c2=-0.08", "--seed", "11",
        "--out", dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        expect_ok(&run(&[
            "estimate", img.to_str().unwrap(), "--iters", "150", "--burnin", "20",
            "--seed", "2", "--out", out.to_str().unwrap(),
        ]));
    }
    let ra = fs::read_to_string(a.join("report.txt")).unwrap();
    let rb = fs::read_to_string(b.join("report.txt")).unwrap();
    assert_eq!(ra, rb, "same seed, different reports");

    let rec = parse(&ra);
    let c2: f64 = value(&rec, "c2-mmse").parse().unwrap();
    assert!((-0.13..=-0.05).contains(&c2), "c2-mmse {c2}");
    assert_eq!(value(&rec, "degenerate"), "false");
    let lo: f64 = value(&rec, "theta1-ci-low").parse().unwrap();
    let hi: f64 = value(&rec, "theta1-ci-high").parse().unwrap();
    assert!(lo < hi && lo > 0.0);
}

/// One reduced-budget segmentation of a two-class scene: the mask beats
/// a loose error bound and the CLI score record equals the library's
/// scoring of the same files.
#[test]
fn segment_smoke_and_eval_parity() {
    let dir = fresh_dir("segment-smoke");
    expect_ok(&run(&[
        "synth", "--n", "256", "--c2=-0.02,-0.2", "--seed", "9", "--out",
        dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let seg = dir.join("seg");
    expect_ok(&run(&[
        "segment", img.to_str().unwrap(), "--k", "2", "--iters", "60",
        "--burnin", "15", "--seed", "5", "--out", seg.to_str().unwrap(),
    ]));

    let pred_path = seg.join("mask.pgm");
    let truth_path = dir.join("mask.pgm");
    let out = run(&[
        "eval", pred_path.to_str().unwrap(), truth_path.to_str().unwrap(),
    ]);
    expect_ok(&out);
    let rec = parse(&String::from_utf8_lossy(&out.stdout));

    let pred = read_mask(&pred_path).unwrap();
    let truth = read_mask(&truth_path).unwrap();
    let score = score_segmentation(&pred, &truth, 2).unwrap();
    assert_eq!(value(&rec, "error-pct"), format!("{:.4}", score.error_pct));
    for c in 0..2 {
        assert_eq!(
            value(&rec, &format!("dsc-class-{}", c + 1)),
            format!("{:.6}", score.dsc[c])
        );
    }
    assert!(score.error_pct <= 25.0, "error {}%", score.error_pct);
}

#[test]
fn segment_with_chains_reports_psrf() {
    let dir = fresh_dir("segment-chains");
    expect_ok(&run(&[
        "synth", "--n", "128", "--c2=-0.02,-0.2", "--seed", "3", "--out",
        dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let seg = dir.join("seg");
    expect_ok(&run(&[
        "segment", img.to_str().unwrap(), "--k", "2", "--iters", "40",
        "--burnin", "10", "--chains", "3", "--seed", "5", "--out",
        seg.to_str().unwrap(),
    ]));
    let rec = parse(&fs::read_to_string(seg.join("report.txt")).unwrap());
    assert_eq!(value(&rec, "chains"), "3");
    for key in [
        "psrf-class-1-theta1",
        "psrf-class-1-theta2",
        "psrf-class-2-theta1",
        "psrf-class-2-theta2",
    ] {
        let r: f64 = value(&rec, key).parse().unwrap();
        assert!(r.is_finite() && r > 0.0, "{key} = {r}");
    }
}

#[test]
fn repro_t3_single_rep_is_well_formed() {
    let dir = fresh_dir("repro-tiny");
    let table = dir.join("t3.txt");
    let out = run(&[
        "repro", "t3", "--reps", "1", "--n", "128", "--iters", "30",
        "--burnin", "10", "--seed", "4", "--out", table.to_str().unwrap(),
    ]);
    expect_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(stdout, fs::read_to_string(&table).unwrap());
    let rec = parse(&stdout);
    assert_eq!(value(&rec, "table"), "t3");
    assert_eq!(value(&rec, "realizations"), "1");
    for r in 1..=3 {
        let err: f64 = value(&rec, &format!("row-{r}-error-mean")).parse().unwrap();
        assert!((0.0..=100.0).contains(&err));
        // Single realization: no spread.
        assert_eq!(value(&rec, &format!("row-{r}-error-std")), "0.00");
        let d: f64 = value(&rec, &format!("row-{r}-dsc-class-1-mean"))
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&d));
    }
    assert_eq!(value(&rec, "row-2-error-ref-mean"), "13.20");
}

#[test]
fn thread_count_never_changes_artifact_bytes() {
    let dir = fresh_dir("threads");
    expect_ok(&run(&[
        "synth", "--n", "128", "--c2=-0.02,-0.2", "--seed", "6", "--out",
        dir.to_str().unwrap(),
    ]));
    let img = dir.join("image.mfg1");
    let seg = dir.join("seg");
    let args = [
        "segment",
        img.to_str().unwrap(),
        "--k",
        "2",
        "--iters",
        "40",
        "--burnin",
        "10",
        "--seed",
        "5",
        "--out",
        seg.to_str().unwrap(),
    ];
    expect_ok(&run_env(&args, &[("MFSEG_THREADS", "1")]));
    let mask_single = read(&seg.join("mask.pgm"));
    let report_single = fs::read_to_string(seg.join("report.txt")).unwrap();
    let manifest_single = fs::read_to_string(seg.join("manifest.txt")).unwrap();

    expect_ok(&run_env(&args, &[("MFSEG_THREADS", "4")]));
    assert_eq!(mask_single, read(&seg.join("mask.pgm")));
    assert_eq!(
        report_single,
        fs::read_to_string(seg.join("report.txt")).unwrap()
    );
    assert_eq!(
        strip_timings(&manifest_single),
        strip_timings(&fs::read_to_string(seg.join("manifest.txt")).unwrap())
    );

    let bad = run_env(
        &["synth", "--n", "64", "--out", dir.to_str().unwrap()],
        &[("MFSEG_THREADS", "zebra")],
    );
    assert_eq!(exit_code(&bad), 2);
}
