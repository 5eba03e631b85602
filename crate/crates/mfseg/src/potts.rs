//! Multiscale Potts prior over label pyramids and checkerboard Gibbs sweeps.
//!
//! Labels live on the leader grids of scales `j1..=j2` (side halving per
//! scale). The prior couples each site to its four spatial neighbours
//! (periodic), to its parent cell at the next coarser scale and to its four
//! children at the next finer scale:
//!
//! ```text
//! p(z(j,n) = k | rest) ∝ exp[ β_xy(j) · #{spatial neighbours = k}
//!                            + β_s · #{parent = k} + β_s · #{children = k} ]
//!                        · (data factor)
//! ```
//!
//! This conditional is the Gibbs conditional of the joint whose energy
//! counts each (unordered) edge once with weight β. The *potential
//! statistics* used by the granularity update ([`spatial_potential`],
//! [`scale_potential`]) instead sum over ordered site/neighbour pairs, i.e.
//! count each spatial edge twice and each cross-scale edge once per
//! endpoint scale — exactly the statistics the update rule is defined on.
//!
//! Sweeps update one parity class of one scale at a time (even sites then
//! odd, scales coarse to fine). Same-parity sites share no spatial edge and
//! cross-scale neighbours are frozen during a pass, so the parallel update
//! is a valid blocked Gibbs move. Every draw uses a keyed RNG, making the
//! result independent of thread scheduling.

use crate::error::{MfError, Result};
use crate::grid::Grid;
use crate::rng::{derive, KeyRng};
use rayon::prelude::*;

/// Maximum number of label classes supported by the samplers.
pub const MAX_CLASSES: usize = 8;

/// Label fields for scales `j1..=j2`; `scales[j - j1]` has side
/// `side(j1) / 2^(j - j1)`. Labels are `0..k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPyramid {
    pub j1: u32,
    pub j2: u32,
    pub k: usize,
    pub scales: Vec<Grid<u8>>,
}

impl LabelPyramid {
    /// Uniform pyramid for an `n x n` image (side `n / 2^j` at scale `j`).
    pub fn uniform(n: usize, j1: u32, j2: u32, k: usize, label: u8) -> Result<Self> {
        if j1 < 1 || j1 > j2 {
            return Err(MfError::ScaleRange(format!(
                "need 1 <= j1 <= j2, got [{j1}, {j2}]"
            )));
        }
        if k == 0 || k > MAX_CLASSES {
            return Err(MfError::Config(format!(
                "class count {k} outside 1..={MAX_CLASSES}"
            )));
        }
        if (label as usize) >= k {
            return Err(MfError::Config(format!("label {label} outside 0..{k}")));
        }
        let mut scales = Vec::new();
        for j in j1..=j2 {
            let side = n >> j;
            if side == 0 {
                return Err(MfError::ScaleRange(format!(
                    "scale {j} empty for image side {n}"
                )));
            }
            scales.push(Grid::fill(side, side, label));
        }
        Ok(Self { j1, j2, k, scales })
    }

    #[inline]
    pub fn grid(&self, j: u32) -> &Grid<u8> {
        &self.scales[(j - self.j1) as usize]
    }

    #[inline]
    pub fn grid_mut(&mut self, j: u32) -> &mut Grid<u8> {
        &mut self.scales[(j - self.j1) as usize]
    }

    /// Sites per class at scale `j`.
    pub fn class_counts(&self, j: u32) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &l in self.grid(j).data() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// 0/1 indicator of class `k` at scale `j`.
    pub fn class_mask(&self, j: u32, k: u8) -> Grid<u8> {
        self.grid(j).map(|&l| u8::from(l == k))
    }

    /// Total site count across scales.
    pub fn total_sites(&self) -> usize {
        self.scales.iter().map(|g| g.len()).sum()
    }
}

/// Granularity coefficients: one spatial `β_xy` per scale plus the
/// cross-scale `β_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Granularity {
    /// `spatial[j - j1]` is `β_xy` at scale `j`.
    pub spatial: Vec<f64>,
    pub scale: f64,
}

impl Granularity {
    pub fn constant(j1: u32, j2: u32, beta_xy: f64, beta_s: f64) -> Self {
        Self {
            spatial: vec![beta_xy; (j2 - j1 + 1) as usize],
            scale: beta_s,
        }
    }

    #[inline]
    pub fn spatial_at(&self, j1: u32, j: u32) -> f64 {
        self.spatial[(j - j1) as usize]
    }
}

/// Spatial potential statistic as the update rule defines it:
/// `β · Σ_n Σ_{m ∈ V(n)} δ(z_n = z_m)` over ordered pairs (each unordered
/// edge counted twice; 4-neighbourhood, periodic).
pub fn spatial_potential(labels: &Grid<u8>, beta: f64) -> f64 {
    let rows = labels.rows() as i64;
    let cols = labels.cols() as i64;
    let mut agree = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let z = *labels.get_wrap(r, c);
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                if *labels.get_wrap(r + dr, c + dc) == z {
                    agree += 1;
                }
            }
        }
    }
    beta * agree as f64
}

/// Cross-scale potential statistic at scale `j`:
/// `β_s · Σ_n [ δ(z(j,n) = parent) + Σ_children δ(z(j,n) = child) ]`,
/// with only the parent term at `j = j1` absent children... the finest
/// scale has no children and the coarsest no parent.
pub fn scale_potential(pyr: &LabelPyramid, j: u32, beta_s: f64) -> f64 {
    let g = pyr.grid(j);
    let mut agree = 0usize;
    if j < pyr.j2 {
        let parent = pyr.grid(j + 1);
        for (r, c, &z) in g.iter_indexed() {
            if *parent.get_wrap(r as i64 / 2, c as i64 / 2) == z {
                agree += 1;
            }
        }
    }
    if j > pyr.j1 {
        let child = pyr.grid(j - 1);
        for (r, c, &z) in g.iter_indexed() {
            for dr in 0..2usize {
                for dc in 0..2usize {
                    if child[(2 * r + dr, 2 * c + dc)] == z {
                        agree += 1;
                    }
                }
            }
        }
    }
    beta_s * agree as f64
}

/// Prior part of the single-site conditional energy, one entry per class:
/// spatial agreement at `β_xy(j)` plus parent/child agreement at `β_s`.
fn prior_logits(
    cur: &Grid<u8>,
    parent: Option<&Grid<u8>>,
    child: Option<&Grid<u8>>,
    r: usize,
    c: usize,
    beta_xy: f64,
    beta_s: f64,
    out: &mut [f64],
) {
    out.fill(0.0);
    let (ri, ci) = (r as i64, c as i64);
    let (rows, cols) = (cur.rows() as i64, cur.cols() as i64);
    for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
        let rr = (ri + dr).rem_euclid(rows);
        let cc = (ci + dc).rem_euclid(cols);
        // A neighbour that wraps onto the site itself contributes equally
        // to every class and can be dropped from the conditional.
        if rr == ri && cc == ci {
            continue;
        }
        out[cur[(rr as usize, cc as usize)] as usize] += beta_xy;
    }
    if let Some(p) = parent {
        out[*p.get_wrap(ri / 2, ci / 2) as usize] += beta_s;
    }
    if let Some(ch) = child {
        for dr in 0..2i64 {
            for dc in 0..2i64 {
                out[*ch.get_wrap(2 * ri + dr, 2 * ci + dc) as usize] += beta_s;
            }
        }
    }
}

/// Normalized conditional distribution of the label at `(j, r, c)` given
/// the rest of the pyramid. `data_loglik[k]` is the per-class data term.
pub fn label_conditional(
    pyr: &LabelPyramid,
    j: u32,
    r: usize,
    c: usize,
    g: &Granularity,
    data_loglik: &[f64],
) -> Vec<f64> {
    assert_eq!(data_loglik.len(), pyr.k);
    let mut logits = vec![0.0; pyr.k];
    prior_logits(
        pyr.grid(j),
        (j < pyr.j2).then(|| pyr.grid(j + 1)),
        (j > pyr.j1).then(|| pyr.grid(j - 1)),
        r,
        c,
        g.spatial_at(pyr.j1, j),
        g.scale,
        &mut logits,
    );
    for (l, d) in logits.iter_mut().zip(data_loglik) {
        *l += d;
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
    logits
}

#[inline]
fn sample_from_logits(logits: &mut [f64], u: f64) -> u8 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        total += *l;
    }
    let target = u * total;
    let mut acc = 0.0;
    for (k, &w) in logits.iter().enumerate() {
        acc += w;
        if target < acc {
            return k as u8;
        }
    }
    (logits.len() - 1) as u8
}

/// One full checkerboard sweep of the pyramid: scales coarse to fine, even
/// parity then odd. `data(j, r, c, k)` supplies per-class data log-factors
/// (return 0 for prior-only moves). `key` must already identify the sweep
/// (seed, purpose, iteration); every site dervies its own stream from it.
pub fn checkerboard_sweep<F>(pyr: &mut LabelPyramid, g: &Granularity, data: &F, key: u64)
where
    F: Fn(u32, usize, usize, u8) -> f64 + Sync,
{
    let k = pyr.k;
    let j1 = pyr.j1;
    for j in (pyr.j1..=pyr.j2).rev() {
        let parent = (j < pyr.j2).then(|| pyr.grid(j + 1).clone());
        let child = (j > pyr.j1).then(|| pyr.grid(j - 1).clone());
        let beta_xy = g.spatial_at(j1, j);
        let side = pyr.grid(j).rows();
        for parity in 0..2usize {
            // Same-parity sites share no spatial edge, so reads of the
            // frozen snapshot equal reads of the live grid.
            let snap = pyr.grid(j).clone();
            let updates: Vec<(usize, u8)> = (0..side)
                .into_par_iter()
                .flat_map_iter(|r| {
                    let snap = &snap;
                    let parent = parent.as_ref();
                    let child = child.as_ref();
                    let data = &data;
                    let c0 = (parity + r) % 2;
                    (c0..side).step_by(2).map(move |c| {
                        let mut logits = [0.0f64; MAX_CLASSES];
                        prior_logits(
                            snap,
                            parent,
                            child,
                            r,
                            c,
                            beta_xy,
                            g.scale,
                            &mut logits[..k],
                        );
                        for (kk, l) in logits[..k].iter_mut().enumerate() {
                            *l += data(j, r, c, kk as u8);
                        }
                        let mut rng = KeyRng::new(derive(
                            key,
                            &[j as u64, r as u64, c as u64],
                        ));
                        let z = sample_from_logits(&mut logits[..k], rng.uniform());
                        (r * side + c, z)
                    })
                })
                .collect();
            let grid = pyr.grid_mut(j);
            for (idx, z) in updates {
                grid.data_mut()[idx] = z;
            }
        }
    }
}
