//! `mfseg`: synthesize benchmark scenes, segment images into regions of
//! distinct multifractality, estimate homogeneous parameters, score
//! masks, and rerun the benchmark tables.
//!
//! Every command is a pure function of its input files, flags, and seed:
//! rerunning with the same inputs reproduces every artifact byte for
//! byte (manifest `timing-` lines excepted). `MFSEG_THREADS` caps the
//! worker pool; results do not depend on it. Exit codes: 0 success,
//! 2 input or configuration error, 3 shape mismatch, 4 numeric abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use mfseg::fft::Fft2;
use mfseg::metrics::{mean_std, score_segmentation};
use mfseg::sampler::{estimate_map_labels, SamplerConfig};
use mfseg::synth::{scene_k2, scene_k3, synthesize, MrwSpec, DEFAULT_K2_C2, DEFAULT_K3_C2};
use mfseg::transform::analyze;
use mfseg::{Grid, MfError, Result};

use mfseg_cli::io::{read_image, read_mask, write_image, write_mask};
use mfseg_cli::report::Record;
use mfseg_cli::run::{
    estimate_homogeneous, fixed_label_protocol, joint_protocol, run_chains, t1_record,
    t2_record, t3_record, Budget, ChainSet, VERSION,
};

#[derive(Parser)]
#[command(
    name = "mfseg",
    version,
    about = "Multifractal image segmentation and parameter estimation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a benchmark scene: image, ground-truth mask, manifest.
    Synth(SynthArgs),
    /// Segment an image into K classes and report per-class parameters.
    Segment(SegmentArgs),
    /// Fit the homogeneous (single-class) model to a whole image.
    Estimate(EstimateArgs),
    /// Score a predicted mask against a ground-truth mask.
    Eval(EvalArgs),
    /// Rerun a benchmark table and print it beside the reference values.
    Repro(ReproArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Background plus one centered disk, two classes.
    K2Default,
    /// Background plus two disks, three classes.
    K3Default,
    /// One homogeneous multifractal field.
    Mrw,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Scene layout.
    #[arg(long, value_enum, default_value = "k2-default")]
    preset: Preset,
    /// Image side; power of two.
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Per-class second log-cumulants, comma separated, overriding the
    /// preset defaults; length must match the preset's class count.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    c2: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for image.mfg1, mask.pgm, manifest.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SegmentArgs {
    /// Input image (MFG1).
    image: PathBuf,
    /// Number of classes, at least 2.
    #[arg(long)]
    k: usize,
    /// Finest analysis scale.
    #[arg(long, default_value_t = 1)]
    j1: u32,
    /// Coarsest analysis scale; defaults to 3 for K <= 2, else 2.
    #[arg(long)]
    j2: Option<u32>,
    /// Sampler iterations.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Burn-in iterations (granularity adapts during these).
    #[arg(long, default_value_t = 30)]
    burnin: usize,
    /// Granularity updates per sampler iteration.
    #[arg(long, default_value_t = 2)]
    v: usize,
    /// Granularity ceiling.
    #[arg(long, default_value_t = 10.0)]
    q: f64,
    /// Analysis wavelet order (vanishing moments), 1..=3.
    #[arg(long, default_value_t = 2)]
    wavelet_order: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Independent chains; more than one adds convergence diagnostics.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Output directory for mask.pgm, report.txt, manifest.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EstimateArgs {
    /// Input image (MFG1).
    image: PathBuf,
    #[arg(long, default_value_t = 1)]
    j1: u32,
    #[arg(long, default_value_t = 3)]
    j2: u32,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    burnin: usize,
    #[arg(long, default_value_t = 2)]
    wavelet_order: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for report.txt, manifest.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Predicted mask (PGM, labels 1..=K).
    pred: PathBuf,
    /// Ground-truth mask (PGM, labels 1..=K).
    truth: PathBuf,
    /// Also write the score record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    /// Per-class estimates with labels fixed to the truth.
    T1,
    /// Per-class estimates with labels estimated jointly.
    T2,
    /// Segmentation quality of the jointly estimated labels.
    T3,
}

#[derive(clap::Args)]
struct ReproArgs {
    /// Which table to rerun.
    #[arg(value_enum)]
    table: Table,
    /// Realizations per row, at least 1.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Image side of each realization; power of two.
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the table record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = init_threads().and_then(|()| match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Segment(a) => cmd_segment(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Repro(a) => cmd_repro(a),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &MfError) -> u8 {
    match e {
        MfError::ShapeMismatch(_) => 3,
        MfError::Numeric(_) | MfError::EmptyClass { .. } => 4,
        _ => 2,
    }
}

/// `MFSEG_THREADS` caps the worker pool (default: all cores). Thread
/// count never changes results, only wall-clock time.
fn init_threads() -> Result<()> {
    match std::env::var("MFSEG_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                MfError::Config(format!("MFSEG_THREADS must be a positive integer, got {v:?}"))
            })?;
            if n == 0 {
                return Err(MfError::Config(
                    "MFSEG_THREADS must be a positive integer, got 0".into(),
                ));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .ok();
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| MfError::Config(format!("{}: cannot create: {e}", path.display())))
}

fn push_paths(rec: &mut Record, out: &Path, names: &[&str]) {
    for name in names {
        let key = format!("output-{}", name.split('.').next().unwrap_or(name));
        rec.push(key, out.join(name).display());
    }
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

fn chosen_c2(flag: Option<Vec<f64>>, default: &[f64]) -> Result<Vec<f64>> {
    match flag {
        None => Ok(default.to_vec()),
        Some(v) if v.len() == default.len() => Ok(v),
        Some(v) => Err(MfError::Config(format!(
            "--c2 lists {} values, preset has {} classes",
            v.len(),
            default.len()
        ))),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let t0 = Instant::now();
    let mut fft = Fft2::new();
    let (preset_name, scene) = match a.preset {
        Preset::K2Default => {
            let c2 = chosen_c2(a.c2, &DEFAULT_K2_C2)?;
            ("k2-default", scene_k2(a.n, a.seed, [c2[0], c2[1]], &mut fft)?)
        }
        Preset::K3Default => {
            let c2 = chosen_c2(a.c2, &DEFAULT_K3_C2)?;
            ("k3-default", scene_k3(a.n, a.seed, [c2[0], c2[1], c2[2]], &mut fft)?)
        }
        Preset::Mrw => {
            let c2 = chosen_c2(a.c2, &[-0.08])?;
            let spec = MrwSpec::new(a.n, c2[0], a.seed);
            let image = synthesize(&spec, &mut fft)?;
            let labels = Grid::from_fn(a.n, a.n, |_, _| 0u8);
            ("mrw", mfseg::synth::Scene { image, labels, c2 })
        }
    };
    let t_synth = t0.elapsed().as_secs_f64();

    write_image(&a.out.join("image.mfg1"), &scene.image)?;
    write_mask(&a.out.join("mask.pgm"), &scene.labels.map(|&l| l + 1))?;

    let template = MrwSpec::new(a.n, 0.0, 0);
    let mut m = Record::new();
    m.push("command", "synth");
    m.push("version", VERSION);
    m.push("preset", preset_name);
    m.push("image-side", a.n);
    m.push("classes", scene.c2.len());
    let c2_line: Vec<String> = scene.c2.iter().map(|v| format!("{v:.4}")).collect();
    m.push("class-c2", c2_line.join(","));
    m.push_f("c1", template.c1, 4);
    m.push_f("integral-scale", template.integral_scale, 4);
    m.push("seed", a.seed);
    push_paths(&mut m, &a.out, &["image.mfg1", "mask.pgm"]);
    m.push_timing("synthesis", t_synth);
    m.push_timing("total", t0.elapsed().as_secs_f64());
    m.write(&a.out.join("manifest.txt"))
}

// ---------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------

fn segment_config(a: &SegmentArgs) -> SamplerConfig {
    let mut cfg = SamplerConfig::new(a.k, a.seed);
    cfg.j1 = a.j1;
    if let Some(j2) = a.j2 {
        cfg.j2 = j2;
    }
    cfg.iterations = a.iters;
    cfg.burn_in = a.burnin;
    cfg.granularity_iters = a.v;
    cfg.q = a.q;
    cfg.wavelet_order = a.wavelet_order;
    cfg
}

fn push_config(rec: &mut Record, cfg: &SamplerConfig, chains: usize) {
    rec.push("config-k", cfg.k);
    rec.push("config-j1", cfg.j1);
    rec.push("config-j2", cfg.j2);
    rec.push("config-iterations", cfg.iterations);
    rec.push("config-burn-in", cfg.burn_in);
    rec.push("config-granularity-iters", cfg.granularity_iters);
    rec.push_f("config-q", cfg.q, 4);
    rec.push_f("config-beta-init", cfg.beta_init, 4);
    rec.push("config-alpha", cfg.alpha);
    rec.push("config-gamma", cfg.gamma);
    rec.push("config-wavelet-order", cfg.wavelet_order);
    rec.push("config-freq-divisor", cfg.freq_divisor);
    rec.push("config-variance-law", format!("{:?}", cfg.variance_law));
    rec.push_f("config-theta-init-scale", cfg.theta_init_scale, 4);
    rec.push("config-seed", cfg.seed);
    rec.push("config-chains", chains);
}

fn segment_report(set: &ChainSet, cfg: &SamplerConfig, chains: usize) -> Record {
    let mut r = Record::new();
    r.push("command", "segment");
    r.push("version", VERSION);
    r.push("classes", cfg.k);
    r.push("chains", chains);
    for c in 0..cfg.k {
        let d1: Vec<f64> = set.primary.theta.iter().map(|d| d[c].theta1).collect();
        let d2: Vec<f64> = set.primary.theta.iter().map(|d| d[c].theta2).collect();
        let (m1, s1) = mean_std(&d1);
        let (m2, s2) = mean_std(&d2);
        let prefix = format!("class-{}", c + 1);
        r.push_f(format!("{prefix}-theta1-mean"), m1, 6);
        r.push_f(format!("{prefix}-theta1-std"), s1, 6);
        r.push_f(format!("{prefix}-theta2-mean"), m2, 6);
        r.push_f(format!("{prefix}-theta2-std"), s2, 6);
        r.push_f(format!("{prefix}-c2"), -m1, 6);
    }
    r.push_f("beta-scale", set.primary.granularity.scale, 6);
    for (i, b) in set.primary.granularity.spatial.iter().enumerate() {
        r.push_f(format!("beta-spatial-j{}", cfg.j1 + i as u32), *b, 6);
    }
    r.push("repairs", set.primary.repairs);
    r.push("clamped-weights", set.primary.clamped_weights);
    if chains > 1 {
        for c in 0..cfg.k {
            r.push_f(format!("psrf-class-{}-theta1", c + 1), set.psrf_theta1[c], 4);
            r.push_f(format!("psrf-class-{}-theta2", c + 1), set.psrf_theta2[c], 4);
        }
    }
    r
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    if a.k < 2 {
        return Err(MfError::Config(format!(
            "segmentation wants at least 2 classes, got {} (use `estimate` for one)",
            a.k
        )));
    }
    ensure_dir(&a.out)?;
    let cfg = segment_config(&a);
    segment_pipeline(&a, &cfg).inspect_err(|e| dump_state(&a.out, &cfg, a.chains, e))
}

/// On failure, leave a replayable account of what was attempted.
fn dump_state(out: &Path, cfg: &SamplerConfig, chains: usize, e: &MfError) {
    let mut d = Record::new();
    d.push("command", "segment");
    d.push("version", VERSION);
    d.push("error", e);
    push_config(&mut d, cfg, chains);
    let path = out.join("error-state.txt");
    if d.write(&path).is_ok() {
        eprintln!("state dump: {}", path.display());
    }
}

fn segment_pipeline(a: &SegmentArgs, cfg: &SamplerConfig) -> Result<()> {
    let t0 = Instant::now();
    let img = read_image(&a.image)?;
    let ll = analyze(&img, cfg.wavelet_order, cfg.j1, cfg.j2)?;
    let t_transform = t0.elapsed().as_secs_f64();

    let set = run_chains(&ll, cfg, a.chains)?;
    let t_sample = t0.elapsed().as_secs_f64() - t_transform;

    let t_write0 = Instant::now();
    let mask = estimate_map_labels(&set.primary.votes, cfg.j1).map(|&l| l + 1);
    write_mask(&a.out.join("mask.pgm"), &mask)?;
    let report = segment_report(&set, cfg, a.chains);
    report.write(&a.out.join("report.txt"))?;

    let mut m = Record::new();
    m.push("command", "segment");
    m.push("version", VERSION);
    m.push("input-image", a.image.display());
    push_paths(&mut m, &a.out, &["mask.pgm", "report.txt"]);
    push_config(&mut m, cfg, a.chains);
    for c in 0..cfg.k {
        m.push_f(format!("class-{}-c2", c + 1), -set.mmse[0][c].theta1, 6);
    }
    m.push_f("beta-scale", set.primary.granularity.scale, 6);
    for (i, b) in set.primary.granularity.spatial.iter().enumerate() {
        m.push_f(format!("beta-spatial-j{}", cfg.j1 + i as u32), *b, 6);
    }
    m.push("leaders-floored", ll.floored);
    m.push_timing("transform", t_transform);
    m.push_timing("sample", t_sample);
    m.push_timing("write", t_write0.elapsed().as_secs_f64());
    m.push_timing("total", t0.elapsed().as_secs_f64());
    m.write(&a.out.join("manifest.txt"))
}

// ---------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let t0 = Instant::now();
    let img = read_image(&a.image)?;
    let mut cfg = SamplerConfig::new(1, a.seed);
    cfg.j1 = a.j1;
    cfg.j2 = a.j2;
    cfg.iterations = a.iters;
    cfg.burn_in = a.burnin;
    cfg.wavelet_order = a.wavelet_order;
    // A constant (or otherwise scale-free) image has no usable leaders;
    // report that as a degenerate fit rather than aborting.
    let analyzed = analyze(&img, cfg.wavelet_order, cfg.j1, cfg.j2);
    let t_transform = t0.elapsed().as_secs_f64();
    let (fit, floored) = match analyzed {
        Ok(ll) => {
            let floored = ll.floored;
            (Some(estimate_homogeneous(&ll, &cfg)?), floored)
        }
        Err(MfError::Degenerate(_)) => (None, 0),
        Err(e) => return Err(e),
    };
    let t_fit = t0.elapsed().as_secs_f64() - t_transform;

    let zero = (0.0, 0.0);
    let (mmse1, mmse2, std, ci1, ci2, reg_c2, reg_r2, degenerate) = match &fit {
        Some(f) => (
            f.mmse.theta1,
            f.mmse.theta2,
            f.std,
            f.ci_theta1,
            f.ci_theta2,
            f.regression.c2,
            f.regression.r_squared,
            f.regression.degenerate,
        ),
        None => (0.0, 0.0, zero, zero, zero, 0.0, 0.0, true),
    };
    let mut r = Record::new();
    r.push("command", "estimate");
    r.push("version", VERSION);
    r.push_f("theta1-mean", mmse1, 6);
    r.push_f("theta1-std", std.0, 6);
    r.push_f("theta1-ci-low", ci1.0, 6);
    r.push_f("theta1-ci-high", ci1.1, 6);
    r.push_f("theta2-mean", mmse2, 6);
    r.push_f("theta2-std", std.1, 6);
    r.push_f("theta2-ci-low", ci2.0, 6);
    r.push_f("theta2-ci-high", ci2.1, 6);
    r.push_f("c2-mmse", -mmse1, 6);
    r.push_f("regression-c2", reg_c2, 6);
    r.push_f("regression-r-squared", reg_r2, 6);
    r.push("degenerate", degenerate);
    r.push("leaders-floored", floored);
    r.write(&a.out.join("report.txt"))?;

    let mut m = Record::new();
    m.push("command", "estimate");
    m.push("version", VERSION);
    m.push("input-image", a.image.display());
    push_paths(&mut m, &a.out, &["report.txt"]);
    push_config(&mut m, &cfg, 1);
    m.push_f("c2-mmse", -mmse1, 6);
    m.push_timing("transform", t_transform);
    m.push_timing("fit", t_fit);
    m.push_timing("total", t0.elapsed().as_secs_f64());
    m.write(&a.out.join("manifest.txt"))
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pred = read_mask(&a.pred)?;
    let truth = read_mask(&a.truth)?;
    let k = pred
        .data()
        .iter()
        .chain(truth.data())
        .map(|&l| l as usize)
        .max()
        .unwrap_or(0);
    let score = score_segmentation(&pred, &truth, k)?;

    let mut r = Record::new();
    r.push("command", "eval");
    r.push("classes", k);
    r.push_f("error-pct", score.error_pct, 4);
    for (c, d) in score.dsc.iter().enumerate() {
        r.push_f(format!("dsc-class-{}", c + 1), *d, 6);
    }
    let perm: Vec<String> = score
        .permutation
        .iter()
        .map(|&t| (t + 1).to_string())
        .collect();
    r.push("permutation", perm.join(","));
    for (c, m) in score.confusion.iter().enumerate() {
        r.push(
            format!("confusion-class-{}", c + 1),
            format!("tp={} fp={} fn={} tn={}", m.tp, m.fp, m.fn_, m.tn),
        );
    }
    print!("{}", r.render());
    match &a.out {
        Some(path) => r.write(path),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------
// repro
// ---------------------------------------------------------------------

fn cmd_repro(a: ReproArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(MfError::Config("--reps must be at least 1".into()));
    }
    let b = Budget {
        n: a.n,
        reps: a.reps,
        iterations: a.iters,
        burn_in: a.burnin,
        seed: a.seed,
    };
    let rec = match a.table {
        Table::T1 => t1_record(b, &fixed_label_protocol(b)?),
        Table::T2 => t2_record(b, &joint_protocol(b)?)?,
        Table::T3 => t3_record(b, &joint_protocol(b)?),
    };
    print!("{}", rec.render());
    match &a.out {
        Some(path) => rec.write(path),
        None => Ok(()),
    }
}
