//! Property tests for the kernel functions and the observation transforms.

use proptest::prelude::*;

use convdiff_core::conv::{convolve, subsample, ConvolvedSeries};
use convdiff_core::kernel::{
    f_d0, f_g, gaussian_cdf, gaussian_quantile, ratio_r, ratio_r_inverse, SmoothingBound,
};
use convdiff_core::sde::SamplePath;

fn bound() -> SmoothingBound {
    SmoothingBound::default()
}

proptest! {
    #[test]
    fn f_g_is_symmetric(a in 0.0..100.0f64, b in 0.0..100.0f64) {
        let x = f_g(a, b, &bound()).unwrap().value;
        let y = f_g(b, a, &bound()).unwrap().value;
        prop_assert_eq!(x, y);
    }

    #[test]
    fn kernel_factors_respond_continuously(
        a in 0.0..20.0f64,
        b in 0.0..20.0f64,
        da in -1e-6..1e-6f64,
        db in -1e-6..1e-6f64,
    ) {
        let qa = (a + da).max(0.0);
        let qb = (b + db).max(0.0);
        let g0 = f_g(a, b, &bound()).unwrap().value;
        let g1 = f_g(qa, qb, &bound()).unwrap().value;
        prop_assert!((g1 - g0).abs() <= 1e-5, "f_G moved {} at ({},{})", g1 - g0, a, b);
        let d0 = f_d0(a, b, &bound()).unwrap().value;
        let d1 = f_d0(qa, qb, &bound()).unwrap().value;
        prop_assert!((d1 - d0).abs() <= 1e-5, "f_D0 moved {} at ({},{})", d1 - d0, a, b);
    }

    #[test]
    fn ratio_r_is_strictly_decreasing(a in 0.0..100.0f64, gap in 1e-4..1.0f64) {
        let b = (a + gap).min(100.0);
        prop_assume!(b > a);
        let ra = ratio_r(a, &bound()).unwrap();
        let rb = ratio_r(b, &bound()).unwrap();
        prop_assert!(rb < ra);
    }

    #[test]
    fn ratio_r_inverse_round_trips(rho in 0.0..100.0f64) {
        let x = ratio_r(rho, &bound()).unwrap();
        let back = ratio_r_inverse(x, &bound()).unwrap();
        prop_assert!((back - rho).abs() <= 1e-8 * (1.0 + rho));
    }

    #[test]
    fn gaussian_quantile_inverts_cdf(p in 1e-12..1.0f64) {
        prop_assume!(p < 1.0 - 1e-12);
        let z = gaussian_quantile(p).unwrap();
        prop_assert!((gaussian_cdf(z) - p).abs() <= 1e-10);
    }

    #[test]
    fn window_average_preserves_constants(
        c in -100.0..100.0f64,
        rho in 0.0..5.0f64,
        q in 2usize..20,
    ) {
        let h_fine = 0.01;
        let burn = 8 * q; // enough lookback for rho up to 5
        let n_fine = 20 * q;
        let path = SamplePath {
            h: h_fine,
            origin_time: -(burn as f64) * h_fine,
            dim: 1,
            values: vec![c; burn + n_fine + 1],
        };
        let s = convolve(&path, &[rho], h_fine * q as f64).unwrap();
        // Equal up to the sequential-summation rounding of a K-sample
        // window average.
        let k = convdiff_core::conv::window_len(rho, q) as f64;
        let tol = (k + 2.0) * f64::EPSILON * c.abs();
        for i in 0..=s.n() {
            prop_assert!((s.value(i, 0) - c).abs() <= tol);
        }
    }

    #[test]
    fn subsample_picks_every_kth_value(n in 8usize..200, k in 1usize..20) {
        prop_assume!(k <= n);
        let values: Vec<f64> = (0..=n).map(|i| (i as f64).sin()).collect();
        let series = ConvolvedSeries { h_n: 0.5, rho: vec![0.0], dim: 1, values };
        let sub = subsample(&series, k).unwrap();
        prop_assert_eq!(sub.n(), n / k);
        prop_assert!((sub.h_n - 0.5 * k as f64).abs() < 1e-12);
        for i in 0..=sub.n() {
            prop_assert_eq!(sub.value(i, 0), series.value(i * k, 0));
        }
    }
}
