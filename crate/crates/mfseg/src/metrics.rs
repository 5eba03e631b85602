//! Scoring and diagnostics: label-permutation-aligned DSC and error,
//! Monte Carlo summaries, the Gelman–Rubin convergence statistic and the
//! log-cumulant spectrum curve.

use crate::error::{MfError, Result};
use crate::grid::Grid;

/// Per-class confusion counts after label alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Segmentation score under the best label permutation.
#[derive(Clone, Debug)]
pub struct SegScore {
    /// Dice similarity per class (index = class label - 1), in [0, 1].
    pub dsc: Vec<f64>,
    /// Overall mismatch percentage in [0, 100].
    pub error_pct: f64,
    /// One-vs-rest confusion counts per class.
    pub confusion: Vec<Confusion>,
    /// `permutation[i]` is the 0-based true class assigned to predicted
    /// class `i + 1`.
    pub permutation: Vec<usize>,
}

/// Convergence diagnostic over several parameters.
#[derive(Clone, Debug)]
pub struct ChainDiag {
    pub psrf: Vec<f64>,
    pub chain_count: usize,
    pub chain_len: usize,
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Score a predicted label mask against the truth. Labels are `1..=k` in
/// both masks. All `k!` relabelings of the prediction are evaluated
/// (lexicographically; first minimum wins) and the one with the fewest
/// mismatches is reported. A class absent from both masks scores DSC 1.
pub fn score_segmentation(pred: &Grid<u8>, truth: &Grid<u8>, k: usize) -> Result<SegScore> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(MfError::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    if k < 1 || k > 8 {
        return Err(MfError::Config(format!("class count {k} outside 1..=8")));
    }
    for (name, g) in [("prediction", pred), ("truth", truth)] {
        if let Some(&bad) = g.data().iter().find(|&&l| l < 1 || l as usize > k) {
            return Err(MfError::Config(format!(
                "{name} label {bad} outside 1..={k}"
            )));
        }
    }
    let total = pred.len();
    // Joint counts: conf[p][t] = sites predicted p+1 with truth t+1.
    let mut conf = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        conf[(p - 1) as usize][(t - 1) as usize] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_hits = 0usize;
    loop {
        let hits: usize = perm.iter().enumerate().map(|(p, &t)| conf[p][t]).sum();
        if hits > best_hits {
            best_hits = hits;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    // One-vs-rest confusion for each aligned class.
    let mut confusion = vec![Confusion::default(); k];
    for t_class in 0..k {
        let mut cm = Confusion::default();
        for p in 0..k {
            for t in 0..k {
                let n = conf[p][t];
                let pred_is = best[p] == t_class;
                let true_is = t == t_class;
                match (pred_is, true_is) {
                    (true, true) => cm.tp += n,
                    (true, false) => cm.fp += n,
                    (false, true) => cm.fn_ += n,
                    (false, false) => cm.tn += n,
                }
            }
        }
        confusion[t_class] = cm;
    }
    let dsc = confusion
        .iter()
        .map(|c| {
            let denom = 2 * c.tp + c.fp + c.fn_;
            if denom == 0 {
                1.0
            } else {
                2.0 * c.tp as f64 / denom as f64
            }
        })
        .collect();
    Ok(SegScore {
        dsc,
        error_pct: 100.0 * (total - best_hits) as f64 / total as f64,
        confusion,
        permutation: best,
    })
}

/// Gelman–Rubin potential scale reduction factor over parallel chains.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(MfError::Config(format!(
            "need at least 2 chains, got {m}"
        )));
    }
    let n = chains[0].len();
    if n < 10 {
        return Err(MfError::Config(format!(
            "need chain length >= 10, got {n}"
        )));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(MfError::ShapeMismatch("unequal chain lengths".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64
        * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return if b <= 0.0 {
            Ok(1.0)
        } else {
            Err(MfError::Numeric(
                "zero within-chain variance with nonzero between-chain variance".into(),
            ))
        };
    }
    Ok(((n - 1) as f64 / n as f64 + b / (n as f64 * w)).sqrt())
}

/// Optional third-order term of the spectrum expansion. `Printed` keeps
/// the `(h - c2)/c2` argument exactly as published; `Centered` uses the
/// `(h - c1)/c2` argument consistent with the quadratic term. Display-only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CubicTerm {
    None,
    Printed { c3: f64 },
    Centered { c3: f64 },
}

/// Sample the log-cumulant expansion of the multifractal spectrum,
/// `D(h) = 2 + (c2/2)((h - c1)/c2)^2` plus the optional cubic term, on a
/// uniform grid of `samples` points over `[h_lo, h_hi]`.
pub fn spectrum_curve(
    c1: f64,
    c2: f64,
    cubic: CubicTerm,
    h_lo: f64,
    h_hi: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(c2 < 0.0) {
        return Err(MfError::Config(format!(
            "spectrum expansion needs c2 < 0, got {c2}"
        )));
    }
    if samples < 2 || !(h_lo < h_hi) {
        return Err(MfError::Config(format!(
            "bad sampling grid [{h_lo}, {h_hi}] x {samples}"
        )));
    }
    let step = (h_hi - h_lo) / (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let h = h_lo + step * i as f64;
            let mut d = 2.0 + c2 / 2.0 * ((h - c1) / c2).powi(2);
            d += match cubic {
                CubicTerm::None => 0.0,
                CubicTerm::Printed { c3 } => -c3 / 6.0 * ((h - c2) / c2).powi(3),
                CubicTerm::Centered { c3 } => -c3 / 6.0 * ((h - c1) / c2).powi(3),
            };
            (h, d)
        })
        .collect())
}

/// Monte Carlo summary of a set of estimates against the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single run).
    pub std: f64,
    pub rmse: f64,
}

/// Sample mean and standard deviation (n - 1 denominator; std is 0 for
/// fewer than two values, and both are 0 for an empty slice).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn monte_carlo_stats(estimates: &[f64], truth: f64) -> Result<McStats> {
    if estimates.is_empty() {
        return Err(MfError::Config("no estimates to summarize".into()));
    }
    let n = estimates.len() as f64;
    let (mean, std) = mean_std(estimates);
    let rmse = (estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / n).sqrt();
    Ok(McStats { mean, std, rmse })
}
