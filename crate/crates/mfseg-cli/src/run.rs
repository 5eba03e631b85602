//! Shared run pipelines: multi-chain segmentation with convergence
//! diagnostics, the homogeneous (single-class) estimation path, and the
//! Monte Carlo reproduction protocols behind `mfseg repro`.
//!
//! The reproduction protocols and their reference statistics live here,
//! not in the binary, so the acceptance suite drives exactly the code
//! the CLI ships.

use mfseg::fft::Fft2;
use mfseg::metrics::{mean_std, monte_carlo_stats, psrf, score_segmentation, McStats};
use mfseg::potts::LabelPyramid;
use mfseg::rng::{derive, tag};
use mfseg::sampler::{
    downsample_labels, estimate_map_labels, estimate_mmse, regression_estimate_c2,
    run_gibbs, run_gibbs_fixed_labels, RegressionFit, SamplerConfig, SamplerOutput,
};
use mfseg::synth::scene_k2;
use mfseg::transform::{analyze, LogLeaders};
use mfseg::whittle::ClassParams;
use mfseg::{MfError, Result};
use rayon::prelude::*;

use crate::report::Record;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Multipliers applied to the initial `θ` of successive chains so the
/// convergence diagnostic starts from over-dispersed points. Chain 0
/// keeps the undispersed initialization and provides the reported
/// labels.
pub const CHAIN_DISPERSION: [f64; 5] = [1.0, 0.2, 5.0, 0.5, 2.0];

/// A multi-chain segmentation run.
pub struct ChainSet {
    /// Chain 0: canonical labels, votes, and granularity.
    pub primary: SamplerOutput,
    /// Posterior-mean parameters per chain, classes aligned to chain 0.
    pub mmse: Vec<Vec<ClassParams>>,
    /// Potential scale reduction factor per class for `θ1`/`θ2`; empty
    /// for a single chain.
    pub psrf_theta1: Vec<f64>,
    pub psrf_theta2: Vec<f64>,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, used: &mut [bool]) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(out, cur, used);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut out, &mut Vec::new(), &mut vec![false; k]);
    out
}

/// Chains mix class identities independently, so before comparing draws
/// across chains each chain's classes are matched to the reference by
/// the permutation minimizing the total `θ` distance.
fn align_classes(reference: &[ClassParams], candidate: &[ClassParams]) -> Vec<usize> {
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(reference.len()) {
        let cost: f64 = reference
            .iter()
            .zip(&perm)
            .map(|(r, &p)| {
                (candidate[p].theta1 - r.theta1).abs() + (candidate[p].theta2 - r.theta2).abs()
            })
            .sum();
        if cost < best.0 {
            best = (cost, perm);
        }
    }
    best.1
}

/// Run `chains` independent samplers on the same log-leaders. Chain `i`
/// draws its seed as `derive(seed, [CHAIN, i])` and scales its initial
/// `θ` by `CHAIN_DISPERSION[i % 5]`; a single chain runs under the base
/// seed unchanged, so `--chains 1` reproduces a plain sampler call.
pub fn run_chains(ll: &LogLeaders, base: &SamplerConfig, chains: usize) -> Result<ChainSet> {
    if chains == 0 {
        return Err(MfError::Config("need at least one chain".into()));
    }
    let mut runs = Vec::with_capacity(chains);
    for i in 0..chains {
        let cfg = SamplerConfig {
            seed: if chains == 1 {
                base.seed
            } else {
                derive(base.seed, &[tag::CHAIN, i as u64])
            },
            theta_init_scale: base.theta_init_scale
                * CHAIN_DISPERSION[i % CHAIN_DISPERSION.len()],
            ..base.clone()
        };
        runs.push(run_gibbs(ll, &cfg)?);
    }

    let reference = estimate_mmse(&runs[0].theta)?;
    let k = reference.len();
    let mut mmse = Vec::with_capacity(chains);
    // seq1[c][i]: chain i's retained θ1 draws for aligned class c.
    let mut seq1 = vec![Vec::with_capacity(chains); k];
    let mut seq2 = vec![Vec::with_capacity(chains); k];
    for run in &runs {
        let own = estimate_mmse(&run.theta)?;
        let perm = align_classes(&reference, &own);
        mmse.push(perm.iter().map(|&p| own[p]).collect::<Vec<_>>());
        for (c, &p) in perm.iter().enumerate() {
            seq1[c].push(run.theta.iter().map(|d| d[p].theta1).collect::<Vec<f64>>());
            seq2[c].push(run.theta.iter().map(|d| d[p].theta2).collect::<Vec<f64>>());
        }
    }
    let (mut psrf_theta1, mut psrf_theta2) = (Vec::new(), Vec::new());
    if chains > 1 {
        for c in 0..k {
            psrf_theta1.push(psrf(&seq1[c])?);
            psrf_theta2.push(psrf(&seq2[c])?);
        }
    }
    Ok(ChainSet {
        primary: runs.swap_remove(0),
        mmse,
        psrf_theta1,
        psrf_theta2,
    })
}

/// Posterior summary of a single-class (whole-image) fit.
pub struct HomogeneousFit {
    pub mmse: ClassParams,
    /// Posterior standard deviation of `(θ1, θ2)`.
    pub std: (f64, f64),
    /// Central 95% credible intervals.
    pub ci_theta1: (f64, f64),
    pub ci_theta2: (f64, f64),
    /// Variance-vs-scale regression on the same leaders, for comparison.
    pub regression: RegressionFit,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Fit the homogeneous model: every site in one class, labels fixed.
pub fn estimate_homogeneous(ll: &LogLeaders, cfg: &SamplerConfig) -> Result<HomogeneousFit> {
    if cfg.k != 1 {
        return Err(MfError::Config(format!(
            "homogeneous fit wants k = 1, got {}",
            cfg.k
        )));
    }
    let n = ll.grid(ll.j1).rows() << ll.j1;
    let pyr = LabelPyramid::uniform(n, cfg.j1, cfg.j2, 1, 0)?;
    let out = run_gibbs_fixed_labels(ll, &pyr, cfg)?;
    let mmse = estimate_mmse(&out.theta)?[0];
    let mut d1: Vec<f64> = out.theta.iter().map(|d| d[0].theta1).collect();
    let mut d2: Vec<f64> = out.theta.iter().map(|d| d[0].theta2).collect();
    let (_, s1) = mean_std(&d1);
    let (_, s2) = mean_std(&d2);
    d1.sort_by(f64::total_cmp);
    d2.sort_by(f64::total_cmp);
    Ok(HomogeneousFit {
        mmse,
        std: (s1, s2),
        ci_theta1: (quantile(&d1, 0.025), quantile(&d1, 0.975)),
        ci_theta2: (quantile(&d2, 0.025), quantile(&d2, 0.975)),
        regression: regression_estimate_c2(ll),
    })
}

// ---------------------------------------------------------------------
// Reproduction protocols
// ---------------------------------------------------------------------

/// Per-class second log-cumulants of the three benchmark rows: a
/// `c2 = -0.02` background against an increasingly distinct second
/// class.
pub const ROW_C2: [[f64; 2]; 3] = [[-0.02, -0.005], [-0.02, -0.08], [-0.02, -0.2]];

/// Reference statistic a reproduction row is printed against.
#[derive(Clone, Copy, Debug)]
pub struct RefStat {
    pub mean: f64,
    pub std: f64,
    pub rmse: f64,
}

/// Reference per-class `c2` estimates with labels fixed to the ground
/// truth (protocol `t1`), rows as in [`ROW_C2`].
pub const FIXED_LABEL_REF: [[RefStat; 2]; 3] = [
    [
        RefStat { mean: -0.032, std: 0.005, rmse: 0.013 },
        RefStat { mean: -0.014, std: 0.003, rmse: 0.010 },
    ],
    [
        RefStat { mean: -0.034, std: 0.005, rmse: 0.015 },
        RefStat { mean: -0.087, std: 0.016, rmse: 0.018 },
    ],
    [
        RefStat { mean: -0.034, std: 0.004, rmse: 0.015 },
        RefStat { mean: -0.184, std: 0.028, rmse: 0.032 },
    ],
];

/// Reference per-class `c2` estimates under joint label and parameter
/// estimation (protocol `t2`).
pub const JOINT_PARAM_REF: [[RefStat; 2]; 3] = [
    [
        RefStat { mean: -0.041, std: 0.014, rmse: 0.025 },
        RefStat { mean: -0.023, std: 0.013, rmse: 0.022 },
    ],
    [
        RefStat { mean: -0.033, std: 0.006, rmse: 0.014 },
        RefStat { mean: -0.113, std: 0.025, rmse: 0.041 },
    ],
    [
        RefStat { mean: -0.037, std: 0.011, rmse: 0.020 },
        RefStat { mean: -0.238, std: 0.058, rmse: 0.069 },
    ],
];

/// Reference segmentation quality (protocol `t3`): per-class Dice
/// similarity and overall error percentage, mean and standard deviation.
#[derive(Clone, Copy, Debug)]
pub struct RefSeg {
    pub dsc: [f64; 2],
    pub dsc_std: [f64; 2],
    pub err: f64,
    pub err_std: f64,
}

pub const SEG_REF: [RefSeg; 3] = [
    RefSeg { dsc: [0.649, 0.487], dsc_std: [0.103, 0.223], err: 39.4, err_std: 8.3 },
    RefSeg { dsc: [0.909, 0.752], dsc_std: [0.034, 0.117], err: 13.2, err_std: 4.8 },
    RefSeg { dsc: [0.940, 0.816], dsc_std: [0.030, 0.140], err: 9.0, err_std: 5.0 },
];

/// Iteration budget of a reproduction protocol.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub n: usize,
    pub reps: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { n: 512, reps: 20, iterations: 300, burn_in: 30, seed: 1 }
    }
}

fn row_config(b: Budget, rseed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations: b.iterations,
        burn_in: b.burn_in,
        seed: rseed,
        ..SamplerConfig::new(2, rseed)
    }
}

/// Signed `c2` estimates (`-θ1`) per class, one row per benchmark pair.
pub struct McRow {
    pub c2: [f64; 2],
    pub per_class: [McStats; 2],
}

/// Protocol `t1`: estimate per-class parameters with the true labels
/// held fixed. Realization `i` of row `r` is seeded
/// `derive(seed, [REALIZATION, r, i])`; realizations run in parallel
/// and aggregation is order-independent.
pub fn fixed_label_protocol(b: Budget) -> Result<Vec<McRow>> {
    let jobs: Vec<(usize, usize)> = (0..ROW_C2.len())
        .flat_map(|r| (0..b.reps).map(move |i| (r, i)))
        .collect();
    let ests: Vec<[f64; 2]> = jobs
        .into_par_iter()
        .map(|(r, i)| -> Result<[f64; 2]> {
            let rseed = derive(b.seed, &[tag::REALIZATION, r as u64, i as u64]);
            let mut fft = Fft2::new();
            let scene = scene_k2(b.n, rseed, ROW_C2[r], &mut fft)?;
            let cfg = row_config(b, rseed);
            let ll = analyze(&scene.image, cfg.wavelet_order, cfg.j1, cfg.j2)?;
            let pyr = downsample_labels(&scene.labels, cfg.j1, cfg.j2, cfg.k)?;
            let out = run_gibbs_fixed_labels(&ll, &pyr, &cfg)?;
            let mmse = estimate_mmse(&out.theta)?;
            Ok([-mmse[0].theta1, -mmse[1].theta1])
        })
        .collect::<Result<_>>()?;
    ROW_C2
        .iter()
        .enumerate()
        .map(|(r, &c2)| {
            let rows = &ests[r * b.reps..(r + 1) * b.reps];
            let class = |c: usize| -> Result<McStats> {
                let xs: Vec<f64> = rows.iter().map(|e| e[c]).collect();
                monte_carlo_stats(&xs, c2[c])
            };
            Ok(McRow { c2, per_class: [class(0)?, class(1)?] })
        })
        .collect()
}

/// One joint segmentation-and-estimation realization, classes aligned
/// to the ground truth (index 0 = background).
pub struct JointOutcome {
    pub c2_est: [f64; 2],
    pub dsc: [f64; 2],
    pub error_pct: f64,
}

pub struct JointRow {
    pub c2: [f64; 2],
    pub outcomes: Vec<JointOutcome>,
}

/// Protocols `t2`/`t3` share one run: segment each scene jointly, score
/// the decoded labels against the truth, and report the parameter draws
/// of whichever predicted class the scoring permutation matched to each
/// true class.
pub fn joint_protocol(b: Budget) -> Result<Vec<JointRow>> {
    let jobs: Vec<(usize, usize)> = (0..ROW_C2.len())
        .flat_map(|r| (0..b.reps).map(move |i| (r, i)))
        .collect();
    let outcomes: Vec<JointOutcome> = jobs
        .into_par_iter()
        .map(|(r, i)| -> Result<JointOutcome> {
            let rseed = derive(b.seed, &[tag::REALIZATION, r as u64, i as u64]);
            let mut fft = Fft2::new();
            let scene = scene_k2(b.n, rseed, ROW_C2[r], &mut fft)?;
            let cfg = row_config(b, rseed);
            let ll = analyze(&scene.image, cfg.wavelet_order, cfg.j1, cfg.j2)?;
            let out = run_gibbs(&ll, &cfg)?;
            let mmse = estimate_mmse(&out.theta)?;
            let pred = estimate_map_labels(&out.votes, cfg.j1).map(|&l| l + 1);
            let truth = scene.labels.map(|&l| l + 1);
            let score = score_segmentation(&pred, &truth, cfg.k)?;
            let mut c2_est = [0.0f64; 2];
            for (p, &t) in score.permutation.iter().enumerate() {
                c2_est[t] = -mmse[p].theta1;
            }
            Ok(JointOutcome {
                c2_est,
                dsc: [score.dsc[0], score.dsc[1]],
                error_pct: score.error_pct,
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ROW_C2.len());
    let mut it = outcomes.into_iter();
    for &c2 in ROW_C2.iter() {
        rows.push(JointRow {
            c2,
            outcomes: it.by_ref().take(b.reps).collect(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Table rendering
// ---------------------------------------------------------------------

fn table_header(rec: &mut Record, table: &str, what: &str, b: Budget) {
    rec.push("table", table);
    rec.push("protocol", what);
    rec.push("realizations", b.reps);
    rec.push("image-side", b.n);
    rec.push("iterations", b.iterations);
    rec.push("burn-in", b.burn_in);
    rec.push("seed", b.seed);
}

fn push_stat_pair(rec: &mut Record, prefix: &str, est: &McStats, reference: &RefStat) {
    rec.push_f(format!("{prefix}-mean"), est.mean, 4);
    rec.push_f(format!("{prefix}-std"), est.std, 4);
    rec.push_f(format!("{prefix}-rmse"), est.rmse, 4);
    rec.push_f(format!("{prefix}-ref-mean"), reference.mean, 4);
    rec.push_f(format!("{prefix}-ref-std"), reference.std, 4);
    rec.push_f(format!("{prefix}-ref-rmse"), reference.rmse, 4);
}

fn true_c2_line(c2: [f64; 2]) -> String {
    format!("{:.4},{:.4}", c2[0], c2[1])
}

/// Render a `t1` table beside its reference column.
pub fn t1_record(b: Budget, rows: &[McRow]) -> Record {
    let mut rec = Record::new();
    table_header(&mut rec, "t1", "per-class c2, labels fixed to truth", b);
    for (r, row) in rows.iter().enumerate() {
        rec.push(format!("row-{}-true-c2", r + 1), true_c2_line(row.c2));
        for c in 0..2 {
            let prefix = format!("row-{}-class-{}", r + 1, c + 1);
            push_stat_pair(&mut rec, &prefix, &row.per_class[c], &FIXED_LABEL_REF[r][c]);
        }
    }
    rec
}

/// Render a `t2` table (joint estimation, parameter rows).
pub fn t2_record(b: Budget, rows: &[JointRow]) -> Result<Record> {
    let mut rec = Record::new();
    table_header(&mut rec, "t2", "per-class c2, labels estimated jointly", b);
    for (r, row) in rows.iter().enumerate() {
        rec.push(format!("row-{}-true-c2", r + 1), true_c2_line(row.c2));
        for c in 0..2 {
            let ests: Vec<f64> = row.outcomes.iter().map(|o| o.c2_est[c]).collect();
            let stats = monte_carlo_stats(&ests, row.c2[c])?;
            let prefix = format!("row-{}-class-{}", r + 1, c + 1);
            push_stat_pair(&mut rec, &prefix, &stats, &JOINT_PARAM_REF[r][c]);
        }
    }
    Ok(rec)
}

/// Render a `t3` table (segmentation quality rows).
pub fn t3_record(b: Budget, rows: &[JointRow]) -> Record {
    let mut rec = Record::new();
    table_header(&mut rec, "t3", "segmentation quality, labels estimated jointly", b);
    for (r, row) in rows.iter().enumerate() {
        rec.push(format!("row-{}-true-c2", r + 1), true_c2_line(row.c2));
        let reference = &SEG_REF[r];
        for c in 0..2 {
            let ds: Vec<f64> = row.outcomes.iter().map(|o| o.dsc[c]).collect();
            let (m, s) = mean_std(&ds);
            let prefix = format!("row-{}-dsc-class-{}", r + 1, c + 1);
            rec.push_f(format!("{prefix}-mean"), m, 4);
            rec.push_f(format!("{prefix}-std"), s, 4);
            rec.push_f(format!("{prefix}-ref-mean"), reference.dsc[c], 4);
            rec.push_f(format!("{prefix}-ref-std"), reference.dsc_std[c], 4);
        }
        let errs: Vec<f64> = row.outcomes.iter().map(|o| o.error_pct).collect();
        let (m, s) = mean_std(&errs);
        rec.push_f(format!("row-{}-error-mean", r + 1), m, 2);
        rec.push_f(format!("row-{}-error-std", r + 1), s, 2);
        rec.push_f(format!("row-{}-error-ref-mean", r + 1), reference.err, 2);
        rec.push_f(format!("row-{}-error-ref-std", r + 1), reference.err_std, 2);
    }
    rec
}
