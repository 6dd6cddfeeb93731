//! Closed-form scalar kernel functions and their quadrature oracles.
//!
//! The observation kernel is a per-axis uniform window of length `rho * h`
//! (a Dirac delta when `rho = 0`). Everything the estimators need from it
//! reduces to a handful of piecewise-polynomial functions of the smoothing
//! parameters: the quadratic-variation shrink factor `f_G`, the lag-0
//! cross-correction factor `f_D0`, the reduced-QV factor, and the ratio
//! function `R` that identifies `rho` from data. Each closed form is paired
//! with a numerical double-integral oracle so the piecewise tables can be
//! verified branch by branch.

use crate::error::{Error, Result};

/// Upper bound `rho_bar` for every smoothing coordinate.
///
/// The case split used throughout assumes `rho_bar > 2`; the constructor
/// rejects anything smaller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingBound {
    rho_bar: f64,
}

impl SmoothingBound {
    pub const DEFAULT_RHO_BAR: f64 = 100.0;

    pub fn new(rho_bar: f64) -> Result<Self> {
        if !rho_bar.is_finite() || rho_bar <= 2.0 {
            return Err(Error::Domain(format!(
                "rho_bar must be finite and > 2, got {rho_bar}"
            )));
        }
        Ok(SmoothingBound { rho_bar })
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    /// Lower end of the range of `R`: `(3*rho_bar - 1) / (6*rho_bar - 4)`.
    pub fn ratio_min(&self) -> f64 {
        (3.0 * self.rho_bar - 1.0) / (6.0 * self.rho_bar - 4.0)
    }

    fn check(&self, name: &str, rho: f64) -> Result<()> {
        if !rho.is_finite() || rho < 0.0 || rho > self.rho_bar {
            return Err(Error::Domain(format!(
                "{name} = {rho} outside [0, {}]",
                self.rho_bar
            )));
        }
        Ok(())
    }
}

impl Default for SmoothingBound {
    fn default() -> Self {
        SmoothingBound {
            rho_bar: Self::DEFAULT_RHO_BAR,
        }
    }
}

/// Value of a piecewise definition together with the case that fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseValue {
    pub value: f64,
    pub branch_id: u8,
}

/// Entrywise shrink factor of the limiting quadratic covariation under
/// window smoothing. 15 cases; branch ids follow the table order.
///
/// Knots are assigned literally from the half-open intervals, e.g.
/// `rho in (0,1]` takes the `(0,1]` formula at exactly 1; continuity makes
/// the value independent of that choice.
pub fn f_g(rho_i: f64, rho_j: f64, bound: &SmoothingBound) -> Result<PiecewiseValue> {
    bound.check("rho_i", rho_i)?;
    bound.check("rho_j", rho_j)?;
    // The table is symmetric; evaluating on the sorted pair keeps the
    // symmetry bit-exact. Mirrored case ids: (2,4), (3,5), (6,7), (8,14),
    // (9,15), (10,12), (11,13).
    if rho_i > rho_j {
        let v = f_g_ordered(rho_j, rho_i);
        let mirrored = match v.branch_id {
            2 => 4,
            3 => 5,
            7 => 6,
            12 => 10,
            13 => 11,
            14 => 8,
            15 => 9,
            other => other,
        };
        return Ok(PiecewiseValue {
            value: v.value,
            branch_id: mirrored,
        });
    }
    Ok(f_g_ordered(rho_i, rho_j))
}

fn f_g_ordered(i: f64, j: f64) -> PiecewiseValue {
    let den = 6.0 * i * j;
    let (value, branch_id) = if i == 0.0 && j == 0.0 {
        (1.0, 1)
    } else if i == 0.0 && j <= 1.0 {
        (1.0 - j / 2.0, 2)
    } else if i == 0.0 {
        (1.0 / (2.0 * j), 3)
    } else if j == 0.0 && i <= 1.0 {
        (1.0 - i / 2.0, 4)
    } else if j == 0.0 {
        (1.0 / (2.0 * i), 5)
    } else if i <= 1.0 && j <= 1.0 && i > j {
        ((-3.0 * i * i * j + 3.0 * i * j * j + 6.0 * i * j - 2.0 * j * j * j) / den, 6)
    } else if i <= 1.0 && j <= 1.0 {
        ((3.0 * i * i * j - 3.0 * i * j * j + 6.0 * i * j - 2.0 * i * i * i) / den, 7)
    } else if i > 1.0 && j <= 1.0 && i > j + 1.0 {
        ((3.0 * j * j + 3.0 * j - j * j * j) / den, 8)
    } else if i > 1.0 && j > 1.0 && i > j + 1.0 {
        ((6.0 * j - 1.0) / den, 9)
    } else if i > 1.0 && j <= 1.0 {
        let d = i - j;
        ((d * d * d - 3.0 * i * i + 6.0 * i * j + 3.0 * i - 1.0 - j * j * j) / den, 10)
    } else if i > 1.0 && j > 1.0 && j < i {
        let d = i - j;
        ((d * d * d - 3.0 * i * i + 6.0 * i * j + 3.0 * i - 3.0 * j * j + 3.0 * j - 2.0) / den, 11)
    } else if i <= 1.0 && j > 1.0 && j <= i + 1.0 {
        let d = i - j;
        ((-d * d * d + 6.0 * i * j - i * i * i - 3.0 * j * j + 3.0 * j - 1.0) / den, 12)
    } else if i > 1.0 && j > 1.0 && j <= i + 1.0 {
        let d = i - j;
        ((-d * d * d - 3.0 * i * i - 3.0 * j * j + 6.0 * i * j + 3.0 * i + 3.0 * j - 2.0) / den, 13)
    } else if i <= 1.0 {
        ((3.0 * i * i + 3.0 * i - i * i * i) / den, 14)
    } else {
        ((6.0 * i - 1.0) / den, 15)
    };
    PiecewiseValue { value, branch_id }
}

/// Lag-0 cross-correction factor between a smoothed level and the next
/// increment. 8 cases, checked in table order (not symmetric in its
/// arguments).
pub fn f_d0(rho_i: f64, rho_j: f64, bound: &SmoothingBound) -> Result<PiecewiseValue> {
    bound.check("rho_i", rho_i)?;
    bound.check("rho_j", rho_j)?;
    let i = rho_i;
    let j = rho_j;
    let den = 6.0 * i * j;
    let (value, branch_id) = if j == 0.0 {
        (0.0, 1)
    } else if i == 0.0 && j <= 1.0 {
        (j / 2.0, 2)
    } else if i == 0.0 {
        ((2.0 * j - 1.0) / (2.0 * j), 3)
    } else if j > i + 1.0 {
        ((6.0 * i * j - 3.0 * i * i - 3.0 * i) / den, 4)
    } else if j > 1.0 && i < j {
        let d = i - j;
        ((d * d * d + 3.0 * j * j - 3.0 * j + 1.0) / den, 5)
    } else if j > 1.0 {
        ((3.0 * j * j - 3.0 * j + 1.0) / den, 6)
    } else if i < j {
        let d = i - j;
        ((d * d * d + j * j * j) / den, 7)
    } else {
        (j * j / (6.0 * i), 8)
    };
    Ok(PiecewiseValue { value, branch_id })
}

/// Limit factor of the reduced (step-2) quadratic variation:
/// `1` at 0, `1 - rho/6` on `(0,2]`, `2/rho - 4/(3 rho^2)` on `(2, rho_bar]`.
pub fn reduced_qv_limit(rho: f64, bound: &SmoothingBound) -> Result<f64> {
    bound.check("rho", rho)?;
    Ok(if rho == 0.0 {
        1.0
    } else if rho <= 2.0 {
        1.0 - rho / 6.0
    } else {
        2.0 / rho - 4.0 / (3.0 * rho * rho)
    })
}

/// Ratio of the full-QV limit to the reduced-QV limit; strictly decreasing
/// from `R(0) = 1` down to `(3*rho_bar - 1)/(6*rho_bar - 4)`.
pub fn ratio_r(rho: f64, bound: &SmoothingBound) -> Result<f64> {
    bound.check("rho", rho)?;
    Ok(if rho == 0.0 {
        1.0
    } else if rho <= 1.0 {
        (6.0 - 2.0 * rho) / (6.0 - rho)
    } else if rho <= 2.0 {
        (6.0 * rho - 2.0) / (6.0 * rho * rho - rho * rho * rho)
    } else {
        (3.0 * rho - 1.0) / (6.0 * rho - 4.0)
    })
}

/// Inverse of [`ratio_r`] on its range.
///
/// Branches (i) and (iii) invert in closed form; the middle branch on
/// `(5/8, 4/5]` is a cubic solved by bisection to 1e-12, using the
/// monotonicity of `R`.
pub fn ratio_r_inverse(x: f64, bound: &SmoothingBound) -> Result<f64> {
    let r_min = bound.ratio_min();
    if !x.is_finite() || x < r_min || x > 1.0 {
        return Err(Error::Domain(format!(
            "ratio {x} outside [{r_min}, 1]"
        )));
    }
    if x > 0.8 {
        // x = (6 - 2y)/(6 - y)  =>  y = 6(1 - x)/(2 - x)
        Ok(6.0 * (1.0 - x) / (2.0 - x))
    } else if x > 0.625 {
        Ok(bisect_middle_branch(x))
    } else {
        // x = (3y - 1)/(6y - 4)  =>  y = (4x - 1)/(6x - 3)
        Ok((4.0 * x - 1.0) / (6.0 * x - 3.0))
    }
}

// Solves (6y - 2)/(6y^2 - y^3) = x on [1, 2].
fn bisect_middle_branch(x: f64) -> f64 {
    let r = |y: f64| (6.0 * y - 2.0) / (6.0 * y * y - y * y * y);
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    if r(lo) == x {
        return lo;
    }
    if r(hi) == x {
        return hi;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        // R is decreasing: R(mid) > x means the root lies right of mid.
        if r(mid) > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal distribution function.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, by bisection on [`gaussian_cdf`] to 1e-12.
pub fn gaussian_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs p in (0,1), got {p}")));
    }
    let (mut lo, mut hi) = (-45.0_f64, 45.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if gaussian_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Quadrature oracles
//
// Every closed form above is, up to the factor A(x), an integral of
// min{s,s'} against products of shifted copies of the window function
//     V_rho(t) = (1/rho) 1_{[0,rho]}(t)   (Dirac delta when rho = 0)
// on the horizon [0, p+1] with p = floor(max rho) + 1 and unit step h = 1
// (the rho-dependent factor is h-homogeneous, so h = 1 loses nothing).
// The oracles evaluate those integrals by a midpoint product rule. Dirac
// components are integrated analytically by collapsing the corresponding
// dimension; window breakpoints are aligned to cell boundaries so the only
// quadrature error left comes from the min{s,s'} kink.
// ---------------------------------------------------------------------------

const MIN_ORACLE_GRID: usize = 1_000;

/// One factor of the double integral: point masses (from Dirac terms) plus
/// midpoint cells (position, weight) from window terms.
struct KernelFactor {
    points: Vec<(f64, f64)>,
}

/// `terms` are (right_edge, sign) pairs; the factor is
/// `sum_k sign_k * V_rho(edge_k - s)`.
fn compile_factor(terms: &[(f64, f64)], rho: f64, n_grid: usize) -> KernelFactor {
    let mut points = Vec::new();
    if rho == 0.0 {
        for &(edge, sign) in terms {
            points.push((edge, sign));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        return KernelFactor { points };
    }
    let mut brk: Vec<f64> = terms
        .iter()
        .flat_map(|&(edge, _)| [edge - rho, edge])
        .collect();
    brk.sort_by(f64::total_cmp);
    brk.dedup();
    let total: f64 = brk.windows(2).map(|w| w[1] - w[0]).sum();
    for w in brk.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let n_seg = (((n_grid as f64) * len / total).round() as usize).max(4);
        let cell = len / n_seg as f64;
        // Factor value is constant on the open segment; sample its midpoint.
        let probe = 0.5 * (a + b);
        let mut v = 0.0;
        for &(edge, sign) in terms {
            if probe >= edge - rho && probe <= edge {
                v += sign / rho;
            }
        }
        if v == 0.0 {
            continue;
        }
        for k in 0..n_seg {
            points.push((a + (k as f64 + 0.5) * cell, v * cell));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    KernelFactor { points }
}

/// `integral of min{s,s'} f1(s) f2(s') ds' ds` for two compiled factors.
///
/// Decomposes min{s,s'} with prefix sums over the s'-grid so the product
/// rule is evaluated in O(n log n) instead of O(n^2); the result equals the
/// naive double sum exactly (up to rounding).
fn min_double_integral(f1: &KernelFactor, f2: &KernelFactor) -> f64 {
    let pts2 = &f2.points;
    let n2 = pts2.len();
    let mut cum_pw = vec![0.0; n2 + 1]; // sum_{l<k} pos_l * w_l
    for (k, &(pos, w)) in pts2.iter().enumerate() {
        cum_pw[k + 1] = cum_pw[k] + pos * w;
    }
    let mut suf_w = vec![0.0; n2 + 1]; // sum_{l>=k} w_l
    for k in (0..n2).rev() {
        suf_w[k] = suf_w[k + 1] + pts2[k].1;
    }
    let mut sum = KahanSum::new();
    for &(s, w1) in &f1.points {
        let idx = pts2.partition_point(|&(pos, _)| pos <= s);
        sum.add(w1 * (cum_pw[idx] + s * suf_w[idx]));
    }
    sum.value()
}

fn check_oracle_args(rho_i: f64, rho_j: f64, n_grid: usize) -> Result<()> {
    if n_grid < MIN_ORACLE_GRID {
        return Err(Error::Domain(format!(
            "n_grid must be >= {MIN_ORACLE_GRID}, got {n_grid}"
        )));
    }
    for (name, r) in [("rho_i", rho_i), ("rho_j", rho_j)] {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Domain(format!("{name} = {r} must be >= 0")));
        }
    }
    Ok(())
}

fn horizon(rho_i: f64, rho_j: f64) -> f64 {
    rho_i.max(rho_j).floor() + 1.0
}

/// Oracle for the lag-0 correction factor `f_D0`: the defining double
/// integral with the diffusion factor `A` divided out.
pub fn oracle_d0_quadrature(rho_i: f64, rho_j: f64, n_grid: usize) -> Result<f64> {
    check_oracle_args(rho_i, rho_j, n_grid)?;
    let p = horizon(rho_i, rho_j);
    let f1 = compile_factor(&[(p, 1.0)], rho_i, n_grid);
    let f2 = compile_factor(&[(p + 1.0, 1.0), (p, -1.0)], rho_j, n_grid);
    Ok(min_double_integral(&f1, &f2))
}

/// Oracle for the QV shrink factor `f_G`, evaluated as the sum integral
/// (level x increment, which tends to `f_G + f_D0`) minus the `f_D0`
/// integral.
pub fn oracle_g_quadrature(rho_i: f64, rho_j: f64, n_grid: usize) -> Result<f64> {
    check_oracle_args(rho_i, rho_j, n_grid)?;
    let p = horizon(rho_i, rho_j);
    let diff_j = [(p + 1.0, 1.0), (p, -1.0)];
    let k_int = min_double_integral(
        &compile_factor(&[(p + 1.0, 1.0)], rho_i, n_grid),
        &compile_factor(&diff_j, rho_j, n_grid),
    );
    let d0 = min_double_integral(
        &compile_factor(&[(p, 1.0)], rho_i, n_grid),
        &compile_factor(&diff_j, rho_j, n_grid),
    );
    Ok(k_int - d0)
}

/// Oracle for the reduced-QV factor: the step-2 difference double integral,
/// halved (one reduced increment spans two sampling steps).
pub fn oracle_reduced_qv_quadrature(rho: f64, n_grid: usize) -> Result<f64> {
    check_oracle_args(rho, rho, n_grid)?;
    let p = rho.floor() + 1.0;
    let diff = [(p + 2.0, 1.0), (p, -1.0)];
    let f1 = compile_factor(&diff, rho, n_grid);
    let f2 = compile_factor(&diff, rho, n_grid);
    Ok(0.5 * min_double_integral(&f1, &f2))
}

/// Quadrature check of the normalization `B = 1`:
/// `integral of (V((p+1)-s) - V(p-s)) s ds` over the horizon.
pub fn oracle_b_quadrature(rho: f64, n_grid: usize) -> Result<f64> {
    check_oracle_args(rho, rho, n_grid)?;
    let p = rho.floor() + 1.0;
    let f = compile_factor(&[(p + 1.0, 1.0), (p, -1.0)], rho, n_grid);
    let mut sum = KahanSum::new();
    for &(pos, w) in &f.points {
        sum.add(pos * w);
    }
    Ok(sum.value())
}

/// Compensated summation; quartic sums of tiny increments need it at n = 1e5.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        KahanSum::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}
