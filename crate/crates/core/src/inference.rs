//! Estimators and the smoothing test: the ratio-based estimator for the
//! smoothing parameter, the studentized QV-difference test statistic, the
//! least-square quasi-likelihood estimators for the diffusion and drift
//! parameters, and the local Gaussian approximation (LGA) baseline that
//! ignores the observation kernel.

use crate::conv::ConvolvedSeries;
use crate::error::{Error, Result};
use crate::kernel::{f_g, gaussian_cdf, gaussian_quantile, KahanSum, SmoothingBound};
use crate::optim::{bounded_optimize_with_starts, OptimResult};
use crate::sde::ModelSpec;
use crate::stats::{ratio_rn, variations};

type Objective = Box<dyn Fn(&[f64]) -> f64>;

pub const DEFAULT_SIG_LEVELS: [f64; 5] = [0.10, 0.05, 0.025, 0.01, 0.001];

/// Optimizer defaults shared by every estimator: small boxes, cheap
/// objectives.
const OPT_STARTS: usize = 8;
const OPT_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Smoothing-parameter estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RhoEstimate {
    pub rho_hat: Vec<f64>,
    pub rn: Vec<f64>,
    pub clamped_low: Vec<bool>,
    pub clamped_high: Vec<bool>,
}

/// The three-case rule mapping an observed ratio onto the estimate:
/// 0 above 1, the inverse ratio on the admissible range, `rho_bar` below it.
pub fn rho_from_ratio(rn: f64, bound: &SmoothingBound) -> (f64, bool, bool) {
    if rn > 1.0 {
        (0.0, true, false)
    } else if rn < bound.ratio_min() {
        (bound.rho_bar(), false, true)
    } else {
        // Unwrap is safe: rn is inside the inverse's domain.
        (crate::kernel::ratio_r_inverse(rn, bound).unwrap(), false, false)
    }
}

pub fn estimate_rho(series: &ConvolvedSeries, bound: &SmoothingBound) -> Result<RhoEstimate> {
    let mut est = RhoEstimate {
        rho_hat: Vec::with_capacity(series.dim),
        rn: Vec::with_capacity(series.dim),
        clamped_low: Vec::with_capacity(series.dim),
        clamped_high: Vec::with_capacity(series.dim),
    };
    for axis in 0..series.dim {
        let v = variations(series, axis)?;
        let rn = ratio_rn(&v)?;
        let (rho, lo, hi) = rho_from_ratio(rn, bound);
        est.rho_hat.push(rho);
        est.rn.push(rn);
        est.clamped_low.push(lo);
        est.clamped_high.push(hi);
    }
    Ok(est)
}

// ---------------------------------------------------------------------------
// Test for smoothed observation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TestReport {
    pub t_stat: Vec<f64>,
    /// Left-tail p-value `Phi(t)`: the alternative drives `t` to minus
    /// infinity.
    pub p_value: Vec<f64>,
    pub levels: Vec<f64>,
    /// `reject[level_idx][axis]` is `t < Phi^{-1}(level)`.
    pub reject: Vec<Vec<bool>>,
}

pub fn smoothing_test(series: &ConvolvedSeries) -> Result<TestReport> {
    smoothing_test_with_levels(series, &DEFAULT_SIG_LEVELS)
}

pub fn smoothing_test_with_levels(
    series: &ConvolvedSeries,
    levels: &[f64],
) -> Result<TestReport> {
    let mut t_stat = Vec::with_capacity(series.dim);
    let mut p_value = Vec::with_capacity(series.dim);
    for axis in 0..series.dim {
        let v = variations(series, axis)?;
        if v.quartic_sum <= 0.0 {
            return Err(Error::Degenerate(format!(
                "axis {axis}: quartic sum is zero (constant series)"
            )));
        }
        let nh = series.n() as f64 * series.h_n;
        let t = (1.5 / v.quartic_sum).sqrt() * (nh * v.full_qv - nh * v.reduced_qv);
        t_stat.push(t);
        // Phi underflows to 0 for t below about -38; keep p inside (0,1).
        let p = gaussian_cdf(t)
            .max(f64::MIN_POSITIVE)
            .min(1.0 - f64::EPSILON);
        p_value.push(p);
    }
    let mut reject = Vec::with_capacity(levels.len());
    for &level in levels {
        let crit = gaussian_quantile(level)?;
        reject.push(t_stat.iter().map(|&t| t < crit).collect());
    }
    Ok(TestReport {
        t_stat,
        p_value,
        levels: levels.to_vec(),
        reject,
    })
}

// ---------------------------------------------------------------------------
// Least-square quasi-likelihood estimation
// ---------------------------------------------------------------------------

/// Outcome of one box-constrained fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub estimate: Vec<f64>,
    pub objective: f64,
    pub iters: usize,
    pub at_boundary: Vec<bool>,
}

impl From<OptimResult> for Fit {
    fn from(r: OptimResult) -> Self {
        Fit {
            estimate: r.point,
            objective: r.value,
            iters: r.iters,
            at_boundary: r.at_boundary,
        }
    }
}

/// Combined fit of the diffusion and drift parameters.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub objective_alpha: f64,
    pub objective_beta: f64,
    pub optimizer_iters: usize,
    pub alpha_at_boundary: Vec<bool>,
    pub beta_at_boundary: Vec<bool>,
}

/// Diffusion-parameter estimator: maximizes
/// `-(sum over k) || (increment outer product)/h - A(x,alpha) .* F ||^2`
/// over the alpha box, where `F` is the entrywise QV shrink matrix built
/// from `rho`.
pub fn lse_alpha(
    series: &ConvolvedSeries,
    rho: &[f64],
    model: &ModelSpec,
    bound: &SmoothingBound,
) -> Result<Fit> {
    check_dims(series, rho, model)?;
    let d = model.dim_d;
    let f_mat = shrink_matrix(rho, bound)?;
    let diffusion = model.diffusion.clone();
    let dim_r = model.dim_r;
    let a_of = move |x: &[f64], alpha: &[f64]| -> Vec<f64> {
        let mut a = vec![0.0; d * dim_r];
        (diffusion)(x, alpha, &mut a);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..dim_r {
                    acc += a[i * dim_r + k] * a[j * dim_r + k];
                }
                out[i * d + j] = acc;
            }
        }
        out
    };

    let objective: Objective = if model.state_free_diffusion {
        // Sufficient statistics: S1 = sum of Q_k, s2 = sum of ||Q_k||^2.
        let (s1, s2, n) = qv_outer_stats(series);
        let x_ref = vec![0.0; d];
        Box::new(move |alpha: &[f64]| {
            let a = a_of(&x_ref, alpha);
            let mut dot_sg = 0.0;
            let mut gg = 0.0;
            for idx in 0..d * d {
                let g = a[idx] * f_mat[idx];
                dot_sg += s1[idx] * g;
                gg += g * g;
            }
            -(s2 - 2.0 * dot_sg + n as f64 * gg)
        })
    } else {
        let series = series.clone();
        Box::new(move |alpha: &[f64]| {
            let n = series.n();
            let h = series.h_n;
            let mut acc = KahanSum::new();
            let mut x_prev = vec![0.0; d];
            for k in 1..=n {
                for (a, xp) in x_prev.iter_mut().enumerate() {
                    *xp = series.value(k - 1, a);
                }
                let a = a_of(&x_prev, alpha);
                for i in 0..d {
                    for j in 0..d {
                        let q = (series.value(k, i) - series.value(k - 1, i))
                            * (series.value(k, j) - series.value(k - 1, j))
                            / h;
                        let r = q - a[i * d + j] * f_mat[i * d + j];
                        acc.add(r * r);
                    }
                }
            }
            -acc.value()
        })
    };

    let mut extra = Vec::new();
    if let Some(start) = alpha_moment_start(series, rho, model, bound) {
        extra.push(start);
    }
    bounded_optimize_with_starts(&*objective, &model.theta1_box, OPT_STARTS, &extra, OPT_TOL)
        .map(Fit::from)
}

/// Drift-parameter estimator: least squares of the one-step increment
/// against the drift evaluated at the lagged observation, the lag being
/// `floor(max rho) + 2`.
pub fn lse_beta(series: &ConvolvedSeries, rho: &[f64], model: &ModelSpec) -> Result<Fit> {
    check_dims(series, rho, model)?;
    let lag = beta_lag(rho);
    let n = series.n();
    if n <= lag {
        return Err(Error::InsufficientData { needed: lag + 1, got: n });
    }
    let d = model.dim_d;
    let h = series.h_n;

    let objective: Objective = if model.affine_drift {
        let (s_dd, s_dz, s_zz) = lag_moment_stats(series, lag);
        let drift = model.drift.clone();
        Box::new(move |beta: &[f64]| {
            let m = affine_coefficients(&drift, d, beta);
            let mut val = s_dd;
            // -2h <M, S_dz> + h^2 tr(M S_zz M^T)
            for i in 0..d {
                for j in 0..=d {
                    val -= 2.0 * h * m[i * (d + 1) + j] * s_dz[i * (d + 1) + j];
                }
            }
            for i in 0..d {
                for j in 0..=d {
                    let mut msz = 0.0;
                    for l in 0..=d {
                        msz += m[i * (d + 1) + l] * s_zz[l * (d + 1) + j];
                    }
                    val += h * h * msz * m[i * (d + 1) + j];
                }
            }
            -val / h
        })
    } else {
        let series = series.clone();
        let drift = model.drift.clone();
        Box::new(move |beta: &[f64]| {
            let mut acc = KahanSum::new();
            let mut x_lag = vec![0.0; d];
            let mut b = vec![0.0; d];
            for k in lag..=n {
                for (a, xl) in x_lag.iter_mut().enumerate() {
                    *xl = series.value(k - lag, a);
                }
                (drift)(&x_lag, beta, &mut b);
                for (i, bi) in b.iter().enumerate() {
                    let r = series.value(k, i) - series.value(k - 1, i) - h * bi;
                    acc.add(r * r);
                }
            }
            -acc.value() / h
        })
    };

    let mut extra = Vec::new();
    if model.affine_drift {
        if let Ok(ols) = drift_ols(series, lag) {
            extra.push(clip_to_box(&ols, &model.theta2_box));
        }
    }
    bounded_optimize_with_starts(&*objective, &model.theta2_box, OPT_STARTS, &extra, OPT_TOL)
        .map(Fit::from)
}

/// Lag used by the drift objective: `floor(max_i rho_i) + 2` (so 2 even
/// when every axis has `rho = 0`).
pub fn beta_lag(rho: &[f64]) -> usize {
    let max_rho = rho.iter().cloned().fold(0.0, f64::max);
    max_rho.floor() as usize + 2
}

/// Convenience wrapper running both least-square fits with the same
/// (known or estimated) smoothing parameter.
pub fn fit_convolved(
    series: &ConvolvedSeries,
    rho: &[f64],
    model: &ModelSpec,
    bound: &SmoothingBound,
) -> Result<FitResult> {
    let a = lse_alpha(series, rho, model, bound)?;
    let b = lse_beta(series, rho, model)?;
    Ok(FitResult {
        alpha_hat: a.estimate,
        beta_hat: b.estimate,
        objective_alpha: a.objective,
        objective_beta: b.objective,
        optimizer_iters: a.iters + b.iters,
        alpha_at_boundary: a.at_boundary,
        beta_at_boundary: b.at_boundary,
    })
}

// ---------------------------------------------------------------------------
// LGA baseline
// ---------------------------------------------------------------------------

/// Local Gaussian approximation: the Euler Gaussian contrast
/// `-(sum) [ log det A + h^{-1} A^{-1}[(dX - h b)^{(x)2}] ]` maximized
/// jointly over both parameter boxes, treating the series as direct
/// observations of the diffusion. Biased under smoothing; that bias is the
/// baseline being measured.
pub fn lga_estimate(series: &ConvolvedSeries, model: &ModelSpec) -> Result<FitResult> {
    if series.dim != model.dim_d {
        return Err(Error::Config(format!(
            "series has {} axes, model has {}",
            series.dim, model.dim_d
        )));
    }
    let n = series.n();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = model.dim_d;
    let m1 = model.theta1_box.len();
    let h = series.h_n;
    let n_terms = n as f64;

    let diffusion = model.diffusion.clone();
    let dim_r = model.dim_r;
    let a_mat = move |x: &[f64], alpha: &[f64]| -> Vec<f64> {
        let mut a = vec![0.0; d * dim_r];
        (diffusion)(x, alpha, &mut a);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..dim_r {
                    acc += a[i * dim_r + k] * a[j * dim_r + k];
                }
                out[i * d + j] = acc;
            }
        }
        out
    };

    let objective: Objective =
        if model.state_free_diffusion && model.affine_drift {
            let (s_ddm, s_dz, s_zz) = lga_moment_stats(series);
            let drift = model.drift.clone();
            let x_ref = vec![0.0; d];
            Box::new(move |theta: &[f64]| {
                let (alpha, beta) = theta.split_at(m1);
                let a = a_mat(&x_ref, alpha);
                let Some((det, inv)) = det_and_inverse(&a, d) else {
                    return f64::NEG_INFINITY;
                };
                if det <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let m = affine_coefficients(&drift, d, beta);
                let r = residual_outer(&s_ddm, &s_dz, &s_zz, &m, d, h);
                let mut tr = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        tr += inv[i * d + j] * r[j * d + i];
                    }
                }
                -(n_terms * det.ln() + tr / h)
            })
        } else {
            let series = series.clone();
            let drift = model.drift.clone();
            Box::new(move |theta: &[f64]| {
                let (alpha, beta) = theta.split_at(m1);
                let mut acc = 0.0;
                let mut x_prev = vec![0.0; d];
                let mut b = vec![0.0; d];
                for k in 1..=n {
                    for (axis, xp) in x_prev.iter_mut().enumerate() {
                        *xp = series.value(k - 1, axis);
                    }
                    let a = a_mat(&x_prev, alpha);
                    let Some((det, inv)) = det_and_inverse(&a, d) else {
                        return f64::NEG_INFINITY;
                    };
                    if det <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    (drift)(&x_prev, beta, &mut b);
                    let mut quad = 0.0;
                    for i in 0..d {
                        let ri = series.value(k, i) - series.value(k - 1, i) - h * b[i];
                        for j in 0..d {
                            let rj = series.value(k, j) - series.value(k - 1, j) - h * b[j];
                            quad += ri * inv[i * d + j] * rj;
                        }
                    }
                    acc += det.ln() + quad / h;
                }
                -acc
            })
        };

    let mut bounds = model.theta1_box.clone();
    bounds.extend_from_slice(&model.theta2_box);
    let mut extra = Vec::new();
    if let Some(start) = lga_closed_form_start(series, model) {
        extra.push(clip_to_box(&start, &bounds));
    }
    let r = bounded_optimize_with_starts(&*objective, &bounds, OPT_STARTS, &extra, OPT_TOL)?;
    let (alpha_hat, beta_hat) = r.point.split_at(m1);
    let (a_bnd, b_bnd) = r.at_boundary.split_at(m1);
    Ok(FitResult {
        alpha_hat: alpha_hat.to_vec(),
        beta_hat: beta_hat.to_vec(),
        objective_alpha: r.value,
        objective_beta: r.value,
        optimizer_iters: r.iters,
        alpha_at_boundary: a_bnd.to_vec(),
        beta_at_boundary: b_bnd.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Closed-form cross-checks for the built-in OU models
// ---------------------------------------------------------------------------

/// Closed-form diffusion estimate for the 1-d OU objective: the scalar
/// quadratic is maximized at `alpha = sqrt(mean(Q) / f_G(rho, rho))`
/// (before box clipping).
pub fn ou1d_alpha_closed_form(
    series: &ConvolvedSeries,
    rho: f64,
    bound: &SmoothingBound,
) -> Result<f64> {
    let v = variations(series, 0)?;
    let f = f_g(rho, rho, bound)?.value;
    Ok((v.full_qv / f).max(0.0).sqrt())
}

/// Unconstrained least-squares drift coefficients on the lagged design:
/// regresses `(X_k - X_{k-1})/h` on `(X_{k-lag}, 1)` rowwise and returns
/// the coefficients flattened in the drift-parameter layout.
pub fn drift_ols(series: &ConvolvedSeries, lag: usize) -> Result<Vec<f64>> {
    let n = series.n();
    if n <= lag {
        return Err(Error::InsufficientData { needed: lag + 1, got: n });
    }
    let d = series.dim;
    let (_s_dd, s_dz, s_zz) = lag_moment_stats(series, lag);
    let h = series.h_n;
    // Solve S_zz M^T = S_dz^T / h column by column.
    let mut out = vec![0.0; d * (d + 1)];
    for i in 0..d {
        let rhs: Vec<f64> = (0..=d).map(|j| s_dz[i * (d + 1) + j] / h).collect();
        let row = solve_linear(&s_zz, &rhs, d + 1)
            .ok_or_else(|| Error::Degenerate("singular lagged design matrix".into()))?;
        out[i * (d + 1)..(i + 1) * (d + 1)].copy_from_slice(&row);
    }
    Ok(out)
}

/// Gaussian-MLE closed form for constant-diffusion affine-drift models:
/// OLS drift, then the symmetric square root of the residual covariance.
/// Returns the stacked `(alpha, beta)` start or `None` when the shape does
/// not apply.
fn lga_closed_form_start(series: &ConvolvedSeries, model: &ModelSpec) -> Option<Vec<f64>> {
    if !(model.state_free_diffusion && model.affine_drift) {
        return None;
    }
    let d = model.dim_d;
    let beta = drift_ols(series, 1).ok()?;
    let (s_ddm, s_dz, s_zz) = lga_moment_stats(series);
    let drift = model.drift.clone();
    let m = affine_coefficients(&drift, d, &beta);
    let r = residual_outer(&s_ddm, &s_dz, &s_zz, &m, d, series.h_n);
    let scale = 1.0 / (series.n() as f64 * series.h_n);
    let a_hat: Vec<f64> = r.iter().map(|v| v * scale).collect();
    let alpha = match d {
        1 => vec![a_hat[0].max(0.0).sqrt()],
        2 => {
            let s = sqrtm_2x2(&a_hat)?;
            vec![s[0], s[1], s[3]]
        }
        _ => return None,
    };
    if alpha.len() != model.theta1_box.len() || beta.len() != model.theta2_box.len() {
        return None;
    }
    let mut start = alpha;
    start.extend(beta);
    Some(start)
}

/// Moment start for the diffusion fit: invert `mean(Q) = A .* F` entrywise
/// and take the symmetric root. Cross-checks the optimizer and warms it up.
fn alpha_moment_start(
    series: &ConvolvedSeries,
    rho: &[f64],
    model: &ModelSpec,
    bound: &SmoothingBound,
) -> Option<Vec<f64>> {
    if !model.state_free_diffusion {
        return None;
    }
    let d = model.dim_d;
    let f_mat = shrink_matrix(rho, bound).ok()?;
    let (s1, _s2, n) = qv_outer_stats(series);
    let mut a_hat = vec![0.0; d * d];
    for idx in 0..d * d {
        a_hat[idx] = s1[idx] / (n as f64 * f_mat[idx]);
    }
    let alpha = match d {
        1 => vec![a_hat[0].max(0.0).sqrt()],
        2 => {
            let s = sqrtm_2x2(&a_hat)?;
            vec![s[0], s[1], s[3]]
        }
        _ => return None,
    };
    (alpha.len() == model.theta1_box.len()).then(|| clip_to_box(&alpha, &model.theta1_box))
}

// ---------------------------------------------------------------------------
// Shared internals
// ---------------------------------------------------------------------------

fn check_dims(series: &ConvolvedSeries, rho: &[f64], model: &ModelSpec) -> Result<()> {
    if series.dim != model.dim_d || rho.len() != model.dim_d {
        return Err(Error::Config(format!(
            "dimension mismatch: series {}, rho {}, model {}",
            series.dim,
            rho.len(),
            model.dim_d
        )));
    }
    if rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Domain("rho must be finite and nonnegative".into()));
    }
    Ok(())
}

fn shrink_matrix(rho: &[f64], bound: &SmoothingBound) -> Result<Vec<f64>> {
    let d = rho.len();
    let mut f_mat = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            f_mat[i * d + j] = f_g(rho[i], rho[j], bound)?.value;
        }
    }
    Ok(f_mat)
}

/// `(sum of Q_k, sum of ||Q_k||^2, n)` with `Q_k` the scaled increment
/// outer product.
fn qv_outer_stats(series: &ConvolvedSeries) -> (Vec<f64>, f64, usize) {
    let d = series.dim;
    let n = series.n();
    let h = series.h_n;
    let mut s1 = vec![KahanSum::new(); d * d];
    let mut s2 = KahanSum::new();
    let mut delta = vec![0.0; d];
    for k in 1..=n {
        for (a, dv) in delta.iter_mut().enumerate() {
            *dv = series.value(k, a) - series.value(k - 1, a);
        }
        for i in 0..d {
            for j in 0..d {
                let q = delta[i] * delta[j] / h;
                s1[i * d + j].add(q);
                s2.add(q * q);
            }
        }
    }
    (s1.iter().map(KahanSum::value).collect(), s2.value(), n)
}

/// Moment statistics of `(increment, lagged level)` pairs:
/// `sum |d|^2`, `sum d z^T`, `sum z z^T` with `z = (x_{k-lag}, 1)`.
fn lag_moment_stats(series: &ConvolvedSeries, lag: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let d = series.dim;
    let n = series.n();
    let zd = d + 1;
    let mut s_dd = KahanSum::new();
    let mut s_dz = vec![KahanSum::new(); d * zd];
    let mut s_zz = vec![KahanSum::new(); zd * zd];
    let mut z = vec![0.0; zd];
    z[d] = 1.0;
    for k in lag..=n {
        for (a, za) in z[..d].iter_mut().enumerate() {
            *za = series.value(k - lag, a);
        }
        for i in 0..d {
            let di = series.value(k, i) - series.value(k - 1, i);
            s_dd.add(di * di);
            for j in 0..zd {
                s_dz[i * zd + j].add(di * z[j]);
            }
        }
        for i in 0..zd {
            for j in 0..zd {
                s_zz[i * zd + j].add(z[i] * z[j]);
            }
        }
    }
    (
        s_dd.value(),
        s_dz.iter().map(KahanSum::value).collect(),
        s_zz.iter().map(KahanSum::value).collect(),
    )
}

/// Like [`lag_moment_stats`] at lag 1 but keeping the full increment outer
/// product matrix (the LGA contrast needs it).
fn lga_moment_stats(series: &ConvolvedSeries) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = series.dim;
    let n = series.n();
    let zd = d + 1;
    let mut s_ddm = vec![KahanSum::new(); d * d];
    let mut s_dz = vec![KahanSum::new(); d * zd];
    let mut s_zz = vec![KahanSum::new(); zd * zd];
    let mut z = vec![0.0; zd];
    z[d] = 1.0;
    let mut delta = vec![0.0; d];
    for k in 1..=n {
        for a in 0..d {
            z[a] = series.value(k - 1, a);
            delta[a] = series.value(k, a) - series.value(k - 1, a);
        }
        for i in 0..d {
            for j in 0..d {
                s_ddm[i * d + j].add(delta[i] * delta[j]);
            }
            for j in 0..zd {
                s_dz[i * zd + j].add(delta[i] * z[j]);
            }
        }
        for i in 0..zd {
            for j in 0..zd {
                s_zz[i * zd + j].add(z[i] * z[j]);
            }
        }
    }
    (
        s_ddm.iter().map(KahanSum::value).collect(),
        s_dz.iter().map(KahanSum::value).collect(),
        s_zz.iter().map(KahanSum::value).collect(),
    )
}

/// Extract the affine drift coefficients `[B | c]` (d x (d+1)) by probing
/// the callable at the origin and the unit directions.
fn affine_coefficients(drift: &crate::sde::DriftFn, d: usize, beta: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; d * (d + 1)];
    let mut c = vec![0.0; d];
    let zero = vec![0.0; d];
    (drift)(&zero, beta, &mut c);
    let mut col = vec![0.0; d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        (drift)(&e, beta, &mut col);
        for i in 0..d {
            m[i * (d + 1) + j] = col[i] - c[i];
        }
    }
    for i in 0..d {
        m[i * (d + 1) + d] = c[i];
    }
    m
}

/// `sum (d_k - h M z_k)(d_k - h M z_k)^T` from the moment matrices.
fn residual_outer(
    s_ddm: &[f64],
    s_dz: &[f64],
    s_zz: &[f64],
    m: &[f64],
    d: usize,
    h: f64,
) -> Vec<f64> {
    let zd = d + 1;
    let mut r = s_ddm.to_vec();
    // - h (S_dz M^T + M S_dz^T) + h^2 M S_zz M^T
    for i in 0..d {
        for j in 0..d {
            let mut sm = 0.0;
            for l in 0..zd {
                sm += s_dz[i * zd + l] * m[j * zd + l];
            }
            r[i * d + j] -= h * sm;
            let mut ms = 0.0;
            for l in 0..zd {
                ms += m[i * zd + l] * s_dz[j * zd + l];
            }
            r[i * d + j] -= h * ms;
            let mut msm = 0.0;
            for l1 in 0..zd {
                let mut zrow = 0.0;
                for l2 in 0..zd {
                    zrow += s_zz[l1 * zd + l2] * m[j * zd + l2];
                }
                msm += m[i * zd + l1] * zrow;
            }
            r[i * d + j] += h * h * msm;
        }
    }
    r
}

fn clip_to_box(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
        .collect()
}

/// Gaussian elimination with partial pivoting; `a` is n x n row-major.
fn solve_linear(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r1, &r2| {
            m[r1 * n + col].abs().total_cmp(&m[r2 * n + col].abs())
        })?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for row in (col + 1)..n {
            let factor = m[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in (row + 1)..n {
            acc -= m[row * n + j] * x[j];
        }
        x[row] = acc / m[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Determinant and inverse of a small square matrix (Gauss-Jordan).
fn det_and_inverse(a: &[f64], n: usize) -> Option<(f64, Vec<f64>)> {
    if n == 1 {
        if a[0] == 0.0 {
            return None;
        }
        return Some((a[0], vec![1.0 / a[0]]));
    }
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&r1, &r2| {
            m[r1 * n + col].abs().total_cmp(&m[r2 * n + col].abs())
        })?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        let diag = m[col * n + col];
        det *= diag;
        for j in 0..n {
            m[col * n + j] /= diag;
            inv[col * n + j] /= diag;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = m[row * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                m[row * n + j] -= factor * m[col * n + j];
                inv[row * n + j] -= factor * inv[col * n + j];
            }
        }
    }
    det.is_finite().then_some((det, inv))
}

/// Symmetric square root of a 2x2 PSD matrix via
/// `sqrt(A) = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))`.
fn sqrtm_2x2(a: &[f64]) -> Option<Vec<f64>> {
    let det = a[0] * a[3] - a[1] * a[2];
    let tr = a[0] + a[3];
    if det < 0.0 || tr < 0.0 {
        return None;
    }
    let s = det.sqrt();
    let denom = (tr + 2.0 * s).sqrt();
    if !denom.is_finite() || denom <= 0.0 {
        return None;
    }
    Some(vec![
        (a[0] + s) / denom,
        a[1] / denom,
        a[2] / denom,
        (a[3] + s) / denom,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{convolve, ConvolvedSeries};
    use crate::sde::{euler_maruyama, ou_1d, ou_2d, SimConfig};
    use approx::assert_abs_diff_eq;

    fn bound() -> SmoothingBound {
        SmoothingBound::default()
    }

    fn series_1d(values: Vec<f64>, h: f64) -> ConvolvedSeries {
        ConvolvedSeries {
            h_n: h,
            rho: vec![0.0],
            dim: 1,
            values,
        }
    }

    fn simulate_convolved(rho: f64, n_obs: usize, m: u32, seed: u64) -> ConvolvedSeries {
        let h_n = 10f64.powf(-10.0 / 3.0);
        let steps = 10usize.pow(m);
        let cfg = SimConfig {
            n_fine: n_obs * steps,
            h_fine: h_n / steps as f64,
            burn_in: 10f64.powf(-7.0 / 3.0).max(rho * h_n),
            seed,
            x_init: vec![0.0],
        };
        let path = euler_maruyama(&ou_1d(), &[3.0], &[-2.0, 1.0], &cfg).unwrap();
        convolve(&path, &[rho], h_n).unwrap()
    }

    #[test]
    fn rho_rule_three_cases() {
        let b = bound();
        assert_eq!(rho_from_ratio(1.05, &b), (0.0, true, false));
        let (rho, lo, hi) = rho_from_ratio(0.8, &b);
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-10);
        assert!(!lo && !hi);
        let (rho, lo, hi) = rho_from_ratio(b.ratio_min() - 1e-9, &b);
        assert_eq!(rho, b.rho_bar());
        assert!(!lo && hi);
    }

    #[test]
    fn estimate_rho_recovers_smoothing_on_ou() {
        let s = simulate_convolved(1.0, 20_000, 1, 17);
        let est = estimate_rho(&s, &bound()).unwrap();
        assert!((est.rho_hat[0] - 1.0).abs() < 0.08, "rho_hat = {}", est.rho_hat[0]);
        let s0 = simulate_convolved(0.0, 20_000, 1, 18);
        let est0 = estimate_rho(&s0, &bound()).unwrap();
        assert!(est0.rho_hat[0] < 0.1, "rho_hat = {}", est0.rho_hat[0]);
    }

    #[test]
    fn test_statistic_zero_when_sums_match() {
        // Increments (a, 0, a, 0): step-1 and step-2 sums of squares agree,
        // so the statistic vanishes and the p-value is one half.
        let a = 0.3;
        let s = series_1d(vec![0.0, a, a, 2.0 * a, 2.0 * a], 1.0);
        let rep = smoothing_test(&s).unwrap();
        assert_abs_diff_eq!(rep.t_stat[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.p_value[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate_for_the_test() {
        let s = series_1d(vec![1.0; 8], 1.0);
        assert!(matches!(smoothing_test(&s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn test_rejects_under_smoothing_not_under_none() {
        let s = simulate_convolved(0.5, 20_000, 1, 23);
        let rep = smoothing_test(&s).unwrap();
        assert!(rep.t_stat[0] < -4.0, "t = {}", rep.t_stat[0]);
        assert!(rep.reject.iter().all(|r| r[0]));

        let s0 = simulate_convolved(0.0, 20_000, 1, 29);
        let rep0 = smoothing_test(&s0).unwrap();
        assert!(rep0.t_stat[0].abs() < 4.0, "t = {}", rep0.t_stat[0]);
    }

    #[test]
    fn lse_alpha_matches_scalar_closed_form() {
        // Every squared increment over h equal to c: the objective is a
        // quadratic in alpha^2 with argmax sqrt(c / f_G).
        let h = 0.01_f64;
        let c = 4.0_f64;
        let step = (c * h).sqrt();
        let values: Vec<f64> = (0..=100).map(|i| i as f64 * step).collect();
        let mut s = series_1d(values, h);
        s.rho = vec![0.5];
        let fit = lse_alpha(&s, &[0.5], &ou_1d(), &bound()).unwrap();
        let expect = ou1d_alpha_closed_form(&s, 0.5, &bound()).unwrap();
        assert_abs_diff_eq!(fit.estimate[0], expect, epsilon = 1e-5);
        let f = f_g(0.5, 0.5, &bound()).unwrap().value;
        assert_abs_diff_eq!(expect, (c / f).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn lse_alpha_scale_equivariance() {
        let s = simulate_convolved(0.5, 5_000, 1, 31);
        let fit1 = lse_alpha(&s, &[0.5], &ou_1d(), &bound()).unwrap();
        let mut scaled = s.clone();
        for v in scaled.values.iter_mut() {
            *v *= 1.5;
        }
        let fit2 = lse_alpha(&scaled, &[0.5], &ou_1d(), &bound()).unwrap();
        assert_abs_diff_eq!(fit2.estimate[0], 1.5 * fit1.estimate[0], epsilon = 1e-4);
    }

    #[test]
    fn lse_beta_equals_projected_ols_for_affine_drift() {
        let s = simulate_convolved(0.5, 20_000, 1, 37);
        let fit = lse_beta(&s, &[0.5], &ou_1d()).unwrap();
        let ols = drift_ols(&s, beta_lag(&[0.5])).unwrap();
        // Interior solution: the optimizer must land on the normal-equation
        // point.
        assert_abs_diff_eq!(fit.estimate[0], ols[0], epsilon = 1e-4 * (1.0 + ols[0].abs()));
        assert_abs_diff_eq!(fit.estimate[1], ols[1], epsilon = 1e-4 * (1.0 + ols[1].abs()));
    }

    #[test]
    fn beta_lag_follows_the_floor_rule() {
        assert_eq!(beta_lag(&[0.0]), 2);
        assert_eq!(beta_lag(&[0.9]), 2);
        assert_eq!(beta_lag(&[1.0]), 3);
        assert_eq!(beta_lag(&[2.0, 4.2]), 6);
    }

    #[test]
    fn lga_is_unbiased_without_smoothing_and_shrinks_under_it() {
        let s0 = simulate_convolved(0.0, 20_000, 1, 41);
        let lga0 = lga_estimate(&s0, &ou_1d()).unwrap();
        assert!((lga0.alpha_hat[0] - 3.0).abs() < 0.1, "alpha = {}", lga0.alpha_hat[0]);

        let s1 = simulate_convolved(1.0, 20_000, 1, 43);
        let lga1 = lga_estimate(&s1, &ou_1d()).unwrap();
        // f_G(1,1) = 2/3, so the LGA limit is 3*sqrt(2/3) ~ 2.449.
        assert!((lga1.alpha_hat[0] - 2.449).abs() < 0.12, "alpha = {}", lga1.alpha_hat[0]);
        let ours = lse_alpha(&s1, &[1.0], &ou_1d(), &bound()).unwrap();
        assert!((ours.estimate[0] - 3.0).abs() < 0.1, "ours = {}", ours.estimate[0]);
    }

    #[test]
    fn two_dim_fit_smoke() {
        let model = ou_2d();
        let h_n = 10f64.powf(-10.0 / 3.0);
        let steps = 10;
        let alpha_true = [2.0, 0.0, 3.0];
        let beta_true = [-2.0, -0.4, 0.0, 0.1, -3.0, 5.0];
        let cfg = SimConfig {
            n_fine: 20_000 * steps,
            h_fine: h_n / steps as f64,
            burn_in: 4.0 * h_n,
            seed: 47,
            x_init: vec![0.0, 0.0],
        };
        let path = euler_maruyama(&model, &alpha_true, &beta_true, &cfg).unwrap();
        let s = convolve(&path, &[2.0, 4.0], h_n).unwrap();
        let est = estimate_rho(&s, &bound()).unwrap();
        assert!((est.rho_hat[0] - 2.0).abs() < 0.2, "rho1 = {}", est.rho_hat[0]);
        assert!((est.rho_hat[1] - 4.0).abs() < 0.4, "rho2 = {}", est.rho_hat[1]);
        let fit = fit_convolved(&s, &est.rho_hat, &model, &bound()).unwrap();
        assert!((fit.alpha_hat[0] - 2.0).abs() < 0.15, "a1 = {}", fit.alpha_hat[0]);
        assert!(fit.alpha_hat[1].abs() < 0.15, "a2 = {}", fit.alpha_hat[1]);
        assert!((fit.alpha_hat[2] - 3.0).abs() < 0.2, "a3 = {}", fit.alpha_hat[2]);
    }

    #[test]
    fn small_matrix_helpers() {
        // solve_linear on a 3x3 system with known solution.
        let a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x_true[j]).sum())
            .collect();
        let x = solve_linear(&a, &b, 3).unwrap();
        for (got, want) in x.iter().zip(x_true) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        // sqrtm on a diagonal PSD matrix.
        let s = sqrtm_2x2(&[4.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!(s, vec![2.0, 0.0, 0.0, 3.0]);
        // det/inverse round trip.
        let (det, inv) = det_and_inverse(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_abs_diff_eq!(det, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[3], -0.5, epsilon = 1e-12);
    }
}
