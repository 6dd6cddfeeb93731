//! Euler-Maruyama simulation of the latent diffusion
//! `dX = b(X, beta) dt + a(X, alpha) dW` plus the built-in
//! Ornstein-Uhlenbeck model definitions.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Drift callable: `(x, beta, out)` writes `b(x, beta)` into `out` (length d).
pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Diffusion callable: `(x, alpha, out)` writes the d x r matrix
/// `a(x, alpha)` into `out` row-major.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A parametric diffusion model with box-bounded parameter spaces.
#[derive(Clone)]
pub struct ModelSpec {
    pub dim_d: usize,
    pub dim_r: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    /// Per-coordinate (low, high) for the diffusion parameter alpha.
    pub theta1_box: Vec<(f64, f64)>,
    /// Per-coordinate (low, high) for the drift parameter beta.
    pub theta2_box: Vec<(f64, f64)>,
    /// The diffusion coefficient does not depend on the state; lets the
    /// estimators reduce objectives to sufficient statistics.
    pub state_free_diffusion: bool,
    /// The drift is affine in the state for every beta.
    pub affine_drift: bool,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim_d", &self.dim_d)
            .field("dim_r", &self.dim_r)
            .field("theta1_box", &self.theta1_box)
            .field("theta2_box", &self.theta2_box)
            .field("state_free_diffusion", &self.state_free_diffusion)
            .field("affine_drift", &self.affine_drift)
            .finish()
    }
}

impl ModelSpec {
    pub fn validate_alpha(&self, alpha: &[f64]) -> Result<()> {
        validate_in_box("alpha", alpha, &self.theta1_box)
    }

    pub fn validate_beta(&self, beta: &[f64]) -> Result<()> {
        validate_in_box("beta", beta, &self.theta2_box)
    }
}

fn validate_in_box(name: &str, x: &[f64], boxes: &[(f64, f64)]) -> Result<()> {
    if x.len() != boxes.len() {
        return Err(Error::Domain(format!(
            "{name} has {} coordinates, expected {}",
            x.len(),
            boxes.len()
        )));
    }
    for (k, (&v, &(lo, hi))) in x.iter().zip(boxes).enumerate() {
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::Domain(format!(
                "{name}[{k}] = {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Simulation grid: `n_fine` steps of size `h_fine` after a burn-in of
/// duration `burn_in` started from `x_init`.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_fine: usize,
    pub h_fine: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub x_init: Vec<f64>,
}

impl SimConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.n_fine == 0 || !self.h_fine.is_finite() || self.h_fine <= 0.0 {
            return Err(Error::Config(format!(
                "need n_fine > 0 and h_fine > 0, got n_fine={}, h_fine={}",
                self.n_fine, self.h_fine
            )));
        }
        if !self.burn_in.is_finite() || self.burn_in < 0.0 {
            return Err(Error::Config(format!("burn_in = {} must be >= 0", self.burn_in)));
        }
        if self.x_init.len() != dim || self.x_init.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "x_init must be {dim} finite values"
            )));
        }
        Ok(())
    }
}

/// A fine-grid trajectory on a uniform time grid.
///
/// Burn-in samples are kept: index 0 sits at `origin_time` (minus the
/// burn-in horizon), so convolution windows reaching before time 0 stay
/// well-defined. `index_of_time_zero` marks where the inference sample
/// starts.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub h: f64,
    pub origin_time: f64,
    pub dim: usize,
    /// Time-major layout: `values[t * dim + axis]`.
    pub values: Vec<f64>,
}

impl SamplePath {
    /// Number of grid points (length of the time axis).
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, t_idx: usize, axis: usize) -> f64 {
        self.values[t_idx * self.dim + axis]
    }

    /// Grid index of time 0 (the end of the burn-in).
    pub fn index_of_time_zero(&self) -> usize {
        (-self.origin_time / self.h).round() as usize
    }

    /// Dump as CSV `time,value_1,...,value_d`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time")?;
        for a in 0..self.dim {
            write!(w, ",value_{}", a + 1)?;
        }
        writeln!(w)?;
        for t in 0..self.len() {
            write!(w, "{}", crate::harness::csv_num(self.origin_time + t as f64 * self.h))?;
            for a in 0..self.dim {
                write!(w, ",{}", crate::harness::csv_num(self.value(t, a)))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Euler-Maruyama scheme with a seeded deterministic RNG; identical seeds
/// yield identical paths. Normal variates come from the ziggurat sampler.
pub fn euler_maruyama(
    model: &ModelSpec,
    alpha: &[f64],
    beta: &[f64],
    cfg: &SimConfig,
) -> Result<SamplePath> {
    model.validate_alpha(alpha)?;
    model.validate_beta(beta)?;
    cfg.validate(model.dim_d)?;

    let d = model.dim_d;
    let r = model.dim_r;
    let burn_steps = if cfg.burn_in == 0.0 {
        0
    } else {
        (cfg.burn_in / cfg.h_fine - 1e-9).ceil().max(0.0) as usize
    };
    let total = burn_steps + cfg.n_fine;
    let mut values = Vec::with_capacity((total + 1) * d);
    values.extend_from_slice(&cfg.x_init);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sqrt_h = cfg.h_fine.sqrt();
    let mut x = cfg.x_init.clone();
    let mut b_buf = vec![0.0; d];
    let mut a_buf = vec![0.0; d * r];
    let mut z = vec![0.0; r];

    for step in 0..total {
        (model.drift)(&x, beta, &mut b_buf);
        (model.diffusion)(&x, alpha, &mut a_buf);
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(&mut rng);
        }
        for i in 0..d {
            let mut noise = 0.0;
            for (j, zj) in z.iter().enumerate() {
                noise += a_buf[i * r + j] * zj;
            }
            x[i] += b_buf[i] * cfg.h_fine + sqrt_h * noise;
            if !x[i].is_finite() {
                return Err(Error::Simulation {
                    step,
                    msg: format!("state coordinate {i} became non-finite"),
                });
            }
        }
        values.extend_from_slice(&x);
    }

    Ok(SamplePath {
        h: cfg.h_fine,
        origin_time: -(burn_steps as f64) * cfg.h_fine,
        dim: d,
        values,
    })
}

/// 1-d Ornstein-Uhlenbeck: `dX = (beta1*X + beta2) dt + alpha dW` with
/// alpha in [0.01, 10], beta in [-10, -0.01] x [-10, 10].
pub fn ou_1d() -> ModelSpec {
    ou_1d_boxed(vec![(0.01, 10.0)], vec![(-10.0, -0.01), (-10.0, 10.0)])
}

/// 1-d OU with caller-chosen parameter boxes (used for wide-range data
/// where the default simulation boxes are too tight).
pub fn ou_1d_boxed(theta1_box: Vec<(f64, f64)>, theta2_box: Vec<(f64, f64)>) -> ModelSpec {
    ModelSpec {
        dim_d: 1,
        dim_r: 1,
        drift: Arc::new(|x, beta, out| {
            out[0] = beta[0] * x[0] + beta[1];
        }),
        diffusion: Arc::new(|_x, alpha, out| {
            out[0] = alpha[0];
        }),
        theta1_box,
        theta2_box,
        state_free_diffusion: true,
        affine_drift: true,
    }
}

/// 2-d OU with symmetric diffusion matrix `[[a1, a2], [a2, a3]]` and affine
/// drift `[[b1, b2], [b4, b5]] x + [b3, b6]`.
pub fn ou_2d() -> ModelSpec {
    let eps = 1e-8;
    ModelSpec {
        dim_d: 2,
        dim_r: 2,
        drift: Arc::new(|x, beta, out| {
            out[0] = beta[0] * x[0] + beta[1] * x[1] + beta[2];
            out[1] = beta[3] * x[0] + beta[4] * x[1] + beta[5];
        }),
        diffusion: Arc::new(|_x, alpha, out| {
            out[0] = alpha[0];
            out[1] = alpha[1];
            out[2] = alpha[1];
            out[3] = alpha[2];
        }),
        theta1_box: vec![(1.0 + eps, 10.0), (-1.0 + eps, 1.0 - eps), (1.0 + eps, 10.0)],
        theta2_box: vec![(-10.0, 10.0); 6],
        state_free_diffusion: true,
        affine_drift: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(n: usize, h: f64, seed: u64, d: usize) -> SimConfig {
        SimConfig {
            n_fine: n,
            h_fine: h,
            burn_in: 0.0,
            seed,
            x_init: vec![0.0; d],
        }
    }

    #[test]
    fn degenerate_sde_stays_constant() {
        let model = ModelSpec {
            dim_d: 1,
            dim_r: 1,
            drift: Arc::new(|_, _, out| out[0] = 0.0),
            diffusion: Arc::new(|_, _, out| out[0] = 0.0),
            theta1_box: vec![(0.0, 1.0)],
            theta2_box: vec![(0.0, 1.0)],
            state_free_diffusion: true,
            affine_drift: true,
        };
        let mut c = cfg(100, 0.01, 1, 1);
        c.x_init = vec![2.5];
        let path = euler_maruyama(&model, &[0.0], &[0.0], &c).unwrap();
        assert!(path.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn identical_seeds_reproduce_paths() {
        let model = ou_1d();
        let c = cfg(500, 1e-3, 42, 1);
        let p1 = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &c).unwrap();
        let p2 = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &c).unwrap();
        assert_eq!(p1.values, p2.values);
        let c2 = SimConfig { seed: 43, ..c };
        let p3 = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &c2).unwrap();
        assert_ne!(p1.values, p3.values);
    }

    #[test]
    fn noiseless_ou_matches_ode_with_first_order_error() {
        // alpha = 0 is outside the default Theta_1; widen the box for the
        // deterministic check.
        let model = ou_1d_boxed(vec![(0.0, 10.0)], vec![(-10.0, -0.01), (-10.0, 10.0)]);
        let t_end = 2.0;
        let exact = 0.5 * (1.0 - (-4.0_f64).exp());
        let err_at = |h: f64| {
            let c = cfg((t_end / h).round() as usize, h, 7, 1);
            let p = euler_maruyama(&model, &[0.0], &[-2.0, 1.0], &c).unwrap();
            (p.value(p.len() - 1, 0) - exact).abs()
        };
        let e1 = err_at(1e-3);
        let e2 = err_at(5e-4);
        assert!(e1 < 2e-3, "error too large: {e1}");
        let ratio = e1 / e2;
        assert!((1.7..=2.3).contains(&ratio), "halving ratio {ratio} not ~2");
    }

    #[test]
    fn stationary_moments_of_ou() {
        // T = 500 with h = 0.01; effective-sample-size argument gives
        // SE(mean) = sqrt(2 * tau * var / T) with tau = 1/|beta1|.
        let model = ou_1d();
        let c = SimConfig {
            n_fine: 50_000,
            h_fine: 0.01,
            burn_in: 5.0,
            seed: 11,
            x_init: vec![0.5],
        };
        let p = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &c).unwrap();
        let z = p.index_of_time_zero();
        let n = p.len() - z;
        let mean: f64 = (z..p.len()).map(|t| p.value(t, 0)).sum::<f64>() / n as f64;
        let var: f64 =
            (z..p.len()).map(|t| (p.value(t, 0) - mean).powi(2)).sum::<f64>() / n as f64;
        let se_mean = (2.0 * 0.5 * 2.25 / 500.0_f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - 2.25).abs() < 0.05 * 2.25 * 2.0, "variance {var}");
    }

    #[test]
    fn ou_model_evaluations() {
        let m1 = ou_1d();
        let mut out = [0.0];
        (m1.drift)(&[2.0], &[-2.0, 1.0], &mut out);
        assert_eq!(out[0], -3.0);

        let m2 = ou_2d();
        let mut a = [0.0; 4];
        (m2.diffusion)(&[0.0, 0.0], &[2.0, 0.0, 3.0], &mut a);
        assert_eq!(a, [2.0, 0.0, 0.0, 3.0]);
        let mut b = [0.0; 2];
        (m2.drift)(&[1.0, 1.0], &[-2.0, -0.4, 0.0, 0.1, -3.0, 5.0], &mut b);
        assert_abs_diff_eq!(b[0], -2.4, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 2.1, epsilon = 1e-15);
    }

    #[test]
    fn parameters_outside_box_are_rejected() {
        let model = ou_1d();
        let c = cfg(10, 0.01, 1, 1);
        assert!(euler_maruyama(&model, &[20.0], &[-2.0, 1.0], &c).is_err());
        assert!(euler_maruyama(&model, &[3.0], &[2.0, 1.0], &c).is_err());
    }

    #[test]
    fn non_finite_drift_names_the_step() {
        let model = ModelSpec {
            dim_d: 1,
            dim_r: 1,
            drift: Arc::new(|x, _, out| out[0] = if x[0] > 0.05 { f64::NAN } else { 1.0 }),
            diffusion: Arc::new(|_, _, out| out[0] = 0.0),
            theta1_box: vec![(0.0, 1.0)],
            theta2_box: vec![(0.0, 1.0)],
            state_free_diffusion: false,
            affine_drift: false,
        };
        let c = cfg(100, 0.01, 1, 1);
        match euler_maruyama(&model, &[0.0], &[0.0], &c) {
            Err(Error::Simulation { step, .. }) => assert!(step > 0),
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn burn_in_is_retained_with_origin_before_zero() {
        let model = ou_1d();
        let c = SimConfig {
            n_fine: 100,
            h_fine: 0.01,
            burn_in: 0.25,
            seed: 3,
            x_init: vec![0.0],
        };
        let p = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &c).unwrap();
        assert_eq!(p.len(), 126);
        assert_abs_diff_eq!(p.origin_time, -0.25, epsilon = 1e-12);
        assert_eq!(p.index_of_time_zero(), 25);
    }
}
