//! Pathwise statistics of the observed series: full and reduced quadratic
//! variation, quartic sums, and the subsampled realized volatility curve.

use crate::conv::ConvolvedSeries;
use crate::error::{Error, Result};
use crate::kernel::KahanSum;

/// Per-axis variation statistics at one sampling step.
#[derive(Debug, Clone, Copy)]
pub struct VariationSummary {
    pub axis: usize,
    /// `(n h)^-1 sum of squared one-step increments`.
    pub full_qv: f64,
    /// Same normalization, squared two-step increments over even indices.
    pub reduced_qv: f64,
    /// Unnormalized `sum of (increment)^4`.
    pub quartic_sum: f64,
    /// Number of two-step increments that entered the reduced sum (an odd
    /// final increment is ignored).
    pub n_used: usize,
    pub h_n: f64,
}

/// One pass with compensated summation over the axis.
pub fn variations(series: &ConvolvedSeries, axis: usize) -> Result<VariationSummary> {
    let n = series.n();
    if axis >= series.dim {
        return Err(Error::Range(format!("axis {axis} out of range")));
    }
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let mut full = KahanSum::new();
    let mut quartic = KahanSum::new();
    let mut reduced = KahanSum::new();
    let mut n_used = 0;
    for k in 1..=n {
        let d = series.value(k, axis) - series.value(k - 1, axis);
        full.add(d * d);
        quartic.add(d * d * d * d);
        if k % 2 == 0 {
            let d2 = series.value(k, axis) - series.value(k - 2, axis);
            reduced.add(d2 * d2);
            n_used += 1;
        }
    }
    let norm = 1.0 / (n as f64 * series.h_n);
    Ok(VariationSummary {
        axis,
        full_qv: full.value() * norm,
        reduced_qv: reduced.value() * norm,
        quartic_sum: quartic.value(),
        n_used,
        h_n: series.h_n,
    })
}

/// The identifying ratio `R_n = full QV / reduced QV`.
pub fn ratio_rn(summary: &VariationSummary) -> Result<f64> {
    if summary.reduced_qv <= 0.0 {
        return Err(Error::Degenerate(
            "reduced quadratic variation is zero".into(),
        ));
    }
    Ok(summary.full_qv / summary.reduced_qv)
}

/// Realized volatility with subsampling:
/// `RV(k) = sum_{1<=i<=floor(n/k)} (Y_{ik} - Y_{(i-1)k})^2` for k = 1..=k_max.
pub fn rv_curve(
    series: &ConvolvedSeries,
    axis: usize,
    k_max: usize,
) -> Result<Vec<(usize, f64)>> {
    let n = series.n();
    if axis >= series.dim {
        return Err(Error::Range(format!("axis {axis} out of range")));
    }
    if k_max < 1 || k_max > n {
        return Err(Error::Range(format!("k_max {k_max} outside 1..={n}")));
    }
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let m = n / k;
        let mut sum = KahanSum::new();
        for i in 1..=m {
            let d = series.value(i * k, axis) - series.value((i - 1) * k, axis);
            sum.add(d * d);
        }
        out.push((k, sum.value()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{convolve, ConvolvedSeries};
    use crate::sde::{euler_maruyama, ou_1d, SimConfig};
    use approx::assert_abs_diff_eq;

    fn series_from(values: Vec<f64>, h: f64) -> ConvolvedSeries {
        ConvolvedSeries {
            h_n: h,
            rho: vec![0.0],
            dim: 1,
            values,
        }
    }

    #[test]
    fn constant_series_gives_zeros() {
        let s = series_from(vec![2.0; 9], 0.5);
        let v = variations(&s, 0).unwrap();
        assert_eq!((v.full_qv, v.reduced_qv, v.quartic_sum), (0.0, 0.0, 0.0));
        assert!(ratio_rn(&v).is_err());
        let rv = rv_curve(&s, 0, 8).unwrap();
        assert!(rv.iter().all(|&(_, x)| x == 0.0));
    }

    #[test]
    fn alternating_series_hand_enumeration() {
        // 0,1,0,1,0 with h = 1: four unit increments; even two-step
        // increments vanish.
        let s = series_from(vec![0.0, 1.0, 0.0, 1.0, 0.0], 1.0);
        let v = variations(&s, 0).unwrap();
        assert_eq!(v.full_qv, 1.0);
        assert_eq!(v.reduced_qv, 0.0);
        assert_eq!(v.quartic_sum, 4.0);
        assert_eq!(v.n_used, 2);
    }

    #[test]
    fn n_below_four_is_rejected() {
        let s = series_from(vec![0.0, 1.0, 2.0], 1.0);
        assert!(matches!(
            variations(&s, 0),
            Err(Error::InsufficientData { needed: 4, .. })
        ));
    }

    #[test]
    fn rv_of_linear_series_closed_form() {
        let c = 0.7;
        let n = 37;
        let values: Vec<f64> = (0..=n).map(|i| c * i as f64).collect();
        let s = series_from(values, 0.25);
        for (k, rv) in rv_curve(&s, 0, 20).unwrap() {
            let expect = (n / k) as f64 * (c * k as f64).powi(2);
            assert_abs_diff_eq!(rv, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn rv1_equals_nh_times_full_qv() {
        let values: Vec<f64> = (0..=100).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let s = series_from(values, 0.2);
        let v = variations(&s, 0).unwrap();
        let rv = rv_curve(&s, 0, 1).unwrap();
        assert_abs_diff_eq!(
            rv[0].1,
            100.0 * 0.2 * v.full_qv,
            epsilon = 1e-10 * rv[0].1.abs().max(1.0)
        );
    }

    #[test]
    fn qv_limits_match_kernel_factors() {
        // full_qv / alpha^2 -> f_G(rho, rho) and reduced_qv / alpha^2 ->
        // the reduced limit factor, within 3% averaged over 20 seeds.
        use crate::kernel::{f_g, reduced_qv_limit, SmoothingBound};
        let bound = SmoothingBound::default();
        let model = ou_1d();
        let h_n = 10f64.powf(-10.0 / 3.0);
        let steps = 10;
        for rho in [0.5, 1.0, 1.5, 3.0] {
            let mut full = 0.0;
            let mut reduced = 0.0;
            for seed in 0..20 {
                let cfg = SimConfig {
                    n_fine: 100_000 * steps,
                    h_fine: h_n / steps as f64,
                    burn_in: rho * h_n,
                    seed: 900 + seed,
                    x_init: vec![0.0],
                };
                let path = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &cfg).unwrap();
                let s = convolve(&path, &[rho], h_n).unwrap();
                let v = variations(&s, 0).unwrap();
                full += v.full_qv / 20.0;
                reduced += v.reduced_qv / 20.0;
            }
            let f_full = f_g(rho, rho, &bound).unwrap().value * 9.0;
            let f_red = reduced_qv_limit(rho, &bound).unwrap() * 9.0;
            assert!(
                (full - f_full).abs() < 0.03 * f_full,
                "rho = {rho}: full {full:.4} vs {f_full:.4}"
            );
            assert!(
                (reduced - f_red).abs() < 0.03 * f_red,
                "rho = {rho}: reduced {reduced:.4} vs {f_red:.4}"
            );
        }
    }

    #[test]
    fn ou_full_qv_approaches_alpha_squared() {
        // Direct observation (rho = 0): full QV tends to alpha^2 for the
        // constant-diffusion OU.
        let model = ou_1d();
        let h_n = 10f64.powf(-10.0 / 3.0);
        let cfg = SimConfig {
            n_fine: 100_000,
            h_fine: h_n,
            burn_in: 0.0,
            seed: 5,
            x_init: vec![0.0],
        };
        let path = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &cfg).unwrap();
        let s = convolve(&path, &[0.0], h_n).unwrap();
        let v = variations(&s, 0).unwrap();
        assert!((v.full_qv - 9.0).abs() < 0.02 * 9.0, "full_qv = {}", v.full_qv);
        // Reduced QV has the same limit when rho = 0.
        assert!(
            (v.reduced_qv - 9.0).abs() < 0.03 * 9.0,
            "reduced_qv = {}",
            v.reduced_qv
        );
        let rn = ratio_rn(&v).unwrap();
        assert!((rn - 1.0).abs() < 0.03, "Rn = {rn}");
    }
}
