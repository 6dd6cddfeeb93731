//! Derivative-free box-constrained maximization: Nelder-Mead with
//! reflections clipped to the box, multistarted from a Halton point set.

use crate::error::{Error, Result};

const MAX_EVALS_PER_START: usize = 20_000;

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub evals: usize,
    pub at_boundary: Vec<bool>,
}

/// Maximize `objective` over the box, running `starts` Nelder-Mead searches
/// from Halton-distributed initial points and keeping the best. Convergence
/// per start: simplex diameter below `tol` or the per-start evaluation cap.
pub fn bounded_optimize(
    objective: impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    starts: usize,
    tol: f64,
) -> Result<OptimResult> {
    bounded_optimize_with_starts(objective, bounds, starts, &[], tol)
}

/// [`bounded_optimize`] with additional caller-supplied starting points
/// (e.g. a closed-form warm start) searched alongside the Halton set.
pub fn bounded_optimize_with_starts(
    objective: impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    starts: usize,
    extra_starts: &[Vec<f64>],
    tol: f64,
) -> Result<OptimResult> {
    if bounds.is_empty() || bounds.iter().any(|&(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
        return Err(Error::Domain("empty or inverted optimization box".into()));
    }
    let starts = starts.max(1);
    let dim = bounds.len();
    let g = |x: &[f64]| -objective(x); // minimize
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut iters = 0;
    let mut evals = 0;

    let halton_points = (0..starts).map(|s| {
        (0..dim)
            .map(|k| {
                let (lo, hi) = bounds[k];
                lo + (hi - lo) * halton(s + 1, HALTON_BASES[k % HALTON_BASES.len()])
            })
            .collect::<Vec<f64>>()
    });
    let extra_points = extra_starts
        .iter()
        .filter(|x| x.len() == dim)
        .map(|x| {
            let mut x = x.clone();
            clip(&mut x, bounds);
            x
        });
    for x0 in extra_points.chain(halton_points) {
        if let Some((pt, val, it, ev)) = nelder_mead(&g, x0, bounds, tol) {
            iters += it;
            evals += ev;
            if best.as_ref().is_none_or(|(_, bv)| val < *bv) {
                best = Some((pt, val));
            }
        }
    }

    let (point, neg_value) = best.ok_or_else(|| {
        Error::Optim("objective was non-finite at every start".into())
    })?;
    let at_boundary = point
        .iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| {
            let span = (hi - lo).max(1e-12);
            (x - lo).abs() <= 1e-7 * span || (hi - x).abs() <= 1e-7 * span
        })
        .collect();
    Ok(OptimResult {
        point,
        value: -neg_value,
        iters,
        evals,
        at_boundary,
    })
}

const HALTON_BASES: [u32; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];

fn halton(index: usize, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index as u64;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base as u64) as f64;
        i /= base as u64;
    }
    r
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// One clipped Nelder-Mead run (Lagarias coefficients). Returns
/// (point, value, iterations, evaluations); None if no finite vertex was
/// ever produced.
fn nelder_mead(
    g: &impl Fn(&[f64]) -> f64,
    x0: Vec<f64>,
    bounds: &[(f64, f64)],
    tol: f64,
) -> Option<(Vec<f64>, f64, usize, usize)> {
    let dim = bounds.len();
    let mut evals = 0;
    let eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = g(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for k in 0..dim {
        let (lo, hi) = bounds[k];
        let span = (hi - lo).max(1e-12);
        let mut x = x0.clone();
        let step = 0.05 * span;
        x[k] = if x[k] + step <= hi { x[k] + step } else { x[k] - step };
        clip(&mut x, bounds);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut iters = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diam = simplex[1..]
            .iter()
            .flat_map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0_f64, f64::max);
        if diam < tol || evals >= MAX_EVALS_PER_START {
            break;
        }
        iters += 1;

        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let shifted = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clip(&mut x, bounds);
            x
        };

        let xr = shifted(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = shifted(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let contracted = if fr < worst.1 {
                let xc = shifted(0.5); // outside
                let fc = eval(&xc, &mut evals);
                (fc <= fr).then_some((xc, fc))
            } else {
                let xc = shifted(-0.5); // inside
                let fc = eval(&xc, &mut evals);
                (fc < worst.1).then_some((xc, fc))
            };
            match contracted {
                Some(v) => simplex[dim] = v,
                None => {
                    // Shrink toward the best vertex.
                    let best = simplex[0].0.clone();
                    for entry in simplex.iter_mut().skip(1) {
                        for (x, b) in entry.0.iter_mut().zip(&best) {
                            *x = b + 0.5 * (*x - b);
                        }
                        entry.1 = eval(&entry.0.clone(), &mut evals);
                    }
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (pt, val) = simplex.swap_remove(0);
    val.is_finite().then_some((pt, val, iters, evals))
}
