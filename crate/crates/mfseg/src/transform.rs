//! 2-D orthonormal wavelet transform, wavelet leaders and log-leaders.
//!
//! The multifractal front end. An image is decomposed with a separable
//! Daubechies transform (periodic boundaries, filter order 1..=3). Detail
//! coefficients are kept orthonormal in [`Dwt2`]; the leader stage applies
//! the dimensional renormalization `d = 2^{-j} D` and takes
//!
//! ```text
//! L(j, n) = sup |d(m, j', n')|   over  m in {1,2,3},
//!                                      j' <= j,
//!                                      cubes at scale j' contained in the
//!                                      3x3 neighbourhood of (j, n)
//! ```
//!
//! Log-leaders `ln L` centred per scale are the statistic whose variance
//! decays linearly in `ln 2^j` with slope `c2` (the multifractality
//! log-cumulant); they feed the spectral likelihood downstream.

use crate::error::{MfError, Result};
use crate::grid::Grid;

/// Relative zero floor applied to leaders: entries below
/// `ZERO_FLOOR_REL * max(L)` are raised to it and counted.
pub const ZERO_FLOOR_REL: f64 = 1e-12;

/// Orthonormal Daubechies filter pair (lowpass, highpass) in correlation
/// form: `a[i] = Σ_k h[k] x[2i+k]`. Orders 1..=3 (2, 4, 6 taps).
pub fn daubechies(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let h: Vec<f64> = match order {
        1 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![s, s]
        }
        2 => {
            let r3 = 3f64.sqrt();
            let s = 4.0 * 2f64.sqrt();
            vec![(1.0 + r3) / s, (3.0 + r3) / s, (3.0 - r3) / s, (1.0 - r3) / s]
        }
        3 => vec![
            0.332_670_552_950_082_63,
            0.806_891_509_311_092_5,
            0.459_877_502_118_491_54,
            -0.135_011_020_010_254_58,
            -0.085_441_273_882_026_66,
            0.035_226_291_885_709_53,
        ],
        _ => {
            return Err(MfError::Config(format!(
                "wavelet order {order} unsupported (expected 1..=3)"
            )))
        }
    };
    let l = h.len();
    let g: Vec<f64> = (0..l)
        .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
        .collect();
    Ok((h, g))
}

/// Largest usable decomposition depth for an `n x n` image: `log2(n) - 2`.
pub fn max_levels(n: usize) -> u32 {
    n.trailing_zeros().saturating_sub(2)
}

fn validate_square_pow2(img: &Grid<f64>) -> Result<usize> {
    let n = img.rows();
    if img.cols() != n {
        return Err(MfError::Dim(format!(
            "image must be square, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    if !n.is_power_of_two() || n < 8 {
        return Err(MfError::Dim(format!(
            "image side must be a power of two >= 8, got {n}"
        )));
    }
    Ok(n)
}

/// Orthonormal 2-D wavelet decomposition. `details[j-1][m-1]` holds the
/// unrenormalized detail plane of orientation `m` at scale `j`
/// (side `n / 2^j`); `approx` is the deepest approximation.
#[derive(Clone, Debug)]
pub struct Dwt2 {
    pub order: usize,
    pub levels: u32,
    pub details: Vec<[Grid<f64>; 3]>,
    pub approx: Grid<f64>,
}

/// One level of the separable analysis: filter along columns inside each
/// row, then along rows inside each column, decimating by two each time.
fn level_forward(a: &Grid<f64>, h: &[f64], g: &[f64]) -> (Grid<f64>, [Grid<f64>; 3]) {
    let n = a.rows();
    let half = n / 2;
    let taps = h.len();

    // Along x (column index): n x half planes.
    let mut lo = Grid::fill(n, half, 0.0);
    let mut hi = Grid::fill(n, half, 0.0);
    for r in 0..n {
        for i in 0..half {
            let mut sl = 0.0;
            let mut sh = 0.0;
            for k in 0..taps {
                let x = *a.get_wrap(r as i64, (2 * i + k) as i64);
                sl += h[k] * x;
                sh += g[k] * x;
            }
            lo[(r, i)] = sl;
            hi[(r, i)] = sh;
        }
    }

    // Along y (row index): half x half planes.
    let mut ll = Grid::fill(half, half, 0.0);
    let mut d1 = Grid::fill(half, half, 0.0); // x-high, y-low
    let mut d2 = Grid::fill(half, half, 0.0); // x-low,  y-high
    let mut d3 = Grid::fill(half, half, 0.0); // diagonal
    for c in 0..half {
        for i in 0..half {
            let mut ll_s = 0.0;
            let mut d1_s = 0.0;
            let mut d2_s = 0.0;
            let mut d3_s = 0.0;
            for k in 0..taps {
                let xl = *lo.get_wrap((2 * i + k) as i64, c as i64);
                let xh = *hi.get_wrap((2 * i + k) as i64, c as i64);
                ll_s += h[k] * xl;
                d1_s += h[k] * xh;
                d2_s += g[k] * xl;
                d3_s += g[k] * xh;
            }
            ll[(i, c)] = ll_s;
            d1[(i, c)] = d1_s;
            d2[(i, c)] = d2_s;
            d3[(i, c)] = d3_s;
        }
    }
    (ll, [d1, d2, d3])
}

/// Adjoint of [`level_forward`]; for an orthonormal filter bank this is the
/// exact inverse.
fn level_inverse(a: &Grid<f64>, d: &[Grid<f64>; 3], h: &[f64], g: &[f64]) -> Grid<f64> {
    let half = a.rows();
    let n = 2 * half;
    let taps = h.len();

    let mut lo = Grid::fill(n, half, 0.0);
    let mut hi = Grid::fill(n, half, 0.0);
    for c in 0..half {
        for i in 0..half {
            for k in 0..taps {
                let r = (2 * i + k) % n;
                lo[(r, c)] += h[k] * a[(i, c)] + g[k] * d[1][(i, c)];
                hi[(r, c)] += h[k] * d[0][(i, c)] + g[k] * d[2][(i, c)];
            }
        }
    }

    let mut out = Grid::fill(n, n, 0.0);
    for r in 0..n {
        for i in 0..half {
            for k in 0..taps {
                let c = (2 * i + k) % n;
                out[(r, c)] += h[k] * lo[(r, i)] + g[k] * hi[(r, i)];
            }
        }
    }
    out
}

/// Forward transform to the given depth.
pub fn dwt2(img: &Grid<f64>, order: usize, levels: u32) -> Result<Dwt2> {
    let n = validate_square_pow2(img)?;
    if levels == 0 {
        return Err(MfError::ScaleRange("levels must be >= 1".into()));
    }
    if n >> levels < 2 {
        return Err(MfError::ScaleRange(format!(
            "{levels} levels exceed what a {n}x{n} image supports"
        )));
    }
    let (h, g) = daubechies(order)?;
    let mut details = Vec::with_capacity(levels as usize);
    let mut approx = img.clone();
    for _ in 0..levels {
        let (next, d) = level_forward(&approx, &h, &g);
        details.push(d);
        approx = next;
    }
    Ok(Dwt2 {
        order,
        levels,
        details,
        approx,
    })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(dec: &Dwt2) -> Result<Grid<f64>> {
    let (h, g) = daubechies(dec.order)?;
    let mut approx = dec.approx.clone();
    for d in dec.details.iter().rev() {
        approx = level_inverse(&approx, d, &h, &g);
    }
    Ok(approx)
}

/// Wavelet leaders for scales `j1..=j2`. `scales[j - j1]` has side
/// `n / 2^j`. `floored` counts entries raised to the zero floor.
#[derive(Clone, Debug)]
pub struct LeaderPyramid {
    pub j1: u32,
    pub j2: u32,
    pub scales: Vec<Grid<f64>>,
    pub floored: usize,
}

impl LeaderPyramid {
    #[inline]
    pub fn grid(&self, j: u32) -> &Grid<f64> {
        &self.scales[(j - self.j1) as usize]
    }
}

/// Compute leaders from a decomposition. Accumulation always starts at the
/// finest scale `j = 1` regardless of `j1`; the 3x3 neighbourhood wraps
/// periodically.
pub fn wavelet_leaders(dec: &Dwt2, j1: u32, j2: u32) -> Result<LeaderPyramid> {
    if j1 < 1 || j1 > j2 {
        return Err(MfError::ScaleRange(format!(
            "need 1 <= j1 <= j2, got [{j1}, {j2}]"
        )));
    }
    if j2 > dec.levels {
        return Err(MfError::ScaleRange(format!(
            "j2 = {j2} exceeds decomposition depth {}",
            dec.levels
        )));
    }

    // cum[j-1](n): sup of renormalized |d| over the single cube (j, n) and
    // everything beneath it.
    let mut cum: Vec<Grid<f64>> = Vec::with_capacity(j2 as usize);
    for j in 1..=j2 {
        let scale = 2f64.powi(-(j as i32));
        let d = &dec.details[(j - 1) as usize];
        let side = d[0].rows();
        let mut c = Grid::fill(side, side, 0.0);
        for r in 0..side {
            for q in 0..side {
                let mut v = (d[0][(r, q)].abs())
                    .max(d[1][(r, q)].abs())
                    .max(d[2][(r, q)].abs())
                    * scale;
                if j > 1 {
                    let child = &cum[(j - 2) as usize];
                    for dr in 0..2 {
                        for dq in 0..2 {
                            v = v.max(child[(2 * r + dr, 2 * q + dq)]);
                        }
                    }
                }
                c[(r, q)] = v;
            }
        }
        cum.push(c);
    }

    let mut scales = Vec::with_capacity((j2 - j1 + 1) as usize);
    let mut max_leader: f64 = 0.0;
    for j in j1..=j2 {
        let c = &cum[(j - 1) as usize];
        let side = c.rows();
        let mut l = Grid::fill(side, side, 0.0);
        for r in 0..side {
            for q in 0..side {
                let mut v = 0f64;
                for dr in -1i64..=1 {
                    for dq in -1i64..=1 {
                        v = v.max(*c.get_wrap(r as i64 + dr, q as i64 + dq));
                    }
                }
                max_leader = max_leader.max(v);
                l[(r, q)] = v;
            }
        }
        scales.push(l);
    }

    let floor = ZERO_FLOOR_REL * max_leader;
    let mut floored = 0;
    if floor > 0.0 {
        for s in &mut scales {
            for v in s.data_mut() {
                if *v < floor {
                    *v = floor;
                    floored += 1;
                }
            }
        }
    }
    Ok(LeaderPyramid {
        j1,
        j2,
        scales,
        floored,
    })
}

/// Per-scale centred log-leaders, with the removed per-scale means kept in
/// `offsets`.
#[derive(Clone, Debug)]
pub struct LogLeaders {
    pub j1: u32,
    pub j2: u32,
    pub scales: Vec<Grid<f64>>,
    pub offsets: Vec<f64>,
    pub floored: usize,
}

impl LogLeaders {
    #[inline]
    pub fn grid(&self, j: u32) -> &Grid<f64> {
        &self.scales[(j - self.j1) as usize]
    }

    /// Population variance per scale (centred, so the mean square).
    pub fn variances(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|s| s.data().iter().map(|v| v * v).sum::<f64>() / s.len() as f64)
            .collect()
    }
}

pub fn log_leaders(lp: &LeaderPyramid) -> Result<LogLeaders> {
    let mut scales = Vec::with_capacity(lp.scales.len());
    let mut offsets = Vec::with_capacity(lp.scales.len());
    for s in &lp.scales {
        if s.data().iter().any(|&v| v <= 0.0) {
            return Err(MfError::Degenerate(
                "non-positive wavelet leader (constant or empty input)".into(),
            ));
        }
        let logs: Vec<f64> = s.data().iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        offsets.push(mean);
        scales.push(Grid::from_vec(
            s.rows(),
            s.cols(),
            logs.into_iter().map(|v| v - mean).collect(),
        ));
    }
    Ok(LogLeaders {
        j1: lp.j1,
        j2: lp.j2,
        scales,
        offsets,
        floored: lp.floored,
    })
}

/// Image -> centred log-leaders over `[j1, j2]`, validating the scale range
/// against the image size.
pub fn analyze(img: &Grid<f64>, order: usize, j1: u32, j2: u32) -> Result<LogLeaders> {
    let n = validate_square_pow2(img)?;
    let jmax = max_levels(n);
    if j1 < 1 || j1 >= j2 {
        return Err(MfError::ScaleRange(format!(
            "need 1 <= j1 < j2, got [{j1}, {j2}]"
        )));
    }
    if j2 > jmax {
        return Err(MfError::ScaleRange(format!(
            "j2 = {j2} exceeds usable depth {jmax} for a {n}x{n} image"
        )));
    }
    let dec = dwt2(img, order, j2)?;
    let lp = wavelet_leaders(&dec, j1, j2)?;
    // A constant image leaves detail coefficients at the rounding noise
    // of the filter bank, not exactly zero; leaders that small relative
    // to the input carry no scaling information.
    let peak = img.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let strongest = lp
        .scales
        .iter()
        .flat_map(|s| s.data())
        .fold(0.0f64, |a, &v| a.max(v));
    if strongest <= 1e-12 * peak {
        return Err(MfError::Degenerate(
            "wavelet details at rounding noise (constant input?)".into(),
        ));
    }
    log_leaders(&lp)
}
