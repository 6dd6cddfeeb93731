//! Convolutional observation: per-axis windowed averages of a fine-grid
//! latent path, sampled every `h_n`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sde::SamplePath;

/// The observed series at sampling step `h_n`.
///
/// `rho[axis]` is the smoothing parameter the series was generated with;
/// NaN marks "unknown" for ingested real data.
#[derive(Debug, Clone)]
pub struct ConvolvedSeries {
    pub h_n: f64,
    pub rho: Vec<f64>,
    pub dim: usize,
    /// Time-major layout: `values[i * dim + axis]`, i = 0..=n.
    pub values: Vec<f64>,
}

impl ConvolvedSeries {
    /// Number of increments (observation count minus one).
    pub fn n(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn value(&self, i: usize, axis: usize) -> f64 {
        self.values[i * self.dim + axis]
    }

    /// Build a series directly from per-axis columns (real-data ingestion).
    pub fn from_columns(columns: &[Vec<f64>], h_n: f64) -> Result<Self> {
        let dim = columns.len();
        if dim == 0 || columns[0].len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: columns.first().map_or(0, |c| c.len()),
            });
        }
        let len = columns[0].len();
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::Config("columns have unequal lengths".into()));
        }
        let mut values = Vec::with_capacity(len * dim);
        for i in 0..len {
            for c in columns {
                values.push(c[i]);
            }
        }
        Ok(ConvolvedSeries {
            h_n,
            rho: vec![f64::NAN; dim],
            dim,
            values,
        })
    }

    pub fn axis(&self, axis: usize) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n()).map(move |i| self.value(i, axis))
    }

    /// CSV export: header `t,x1,...,xd`, one row per observation instant.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for a in 0..self.dim {
            write!(w, ",x{}", a + 1)?;
        }
        writeln!(w)?;
        for i in 0..=self.n() {
            write!(w, "{}", crate::harness::csv_num(i as f64 * self.h_n))?;
            for a in 0..self.dim {
                write!(w, ",{}", crate::harness::csv_num(self.value(i, a)))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// CSV import of the `t,x1,...,xd` format; `h_n` is inferred from the
    /// time column (which must be uniform) and `rho` is marked unknown.
    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let f = std::fs::File::open(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let mut row = Vec::with_capacity(fields.len());
            let mut ok = true;
            for (col, fld) in fields.iter().enumerate() {
                match fld.parse::<f64>() {
                    Ok(v) => row.push(v),
                    Err(_) => {
                        if lineno == 0 {
                            ok = false; // header row
                            break;
                        }
                        return Err(Error::Parse {
                            path: name,
                            line: lineno + 1,
                            column: col + 1,
                            msg: format!("not a number: {fld:?}"),
                        });
                    }
                }
            }
            if ok {
                rows.push(row);
            }
        }
        if rows.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: rows.len() });
        }
        let width = rows[0].len();
        if width < 2 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse {
                path: name,
                line: 1,
                column: 1,
                msg: "expected uniform rows t,x1,...,xd".into(),
            });
        }
        let h = rows[1][0] - rows[0][0];
        for w in rows.windows(2) {
            let dt = w[1][0] - w[0][0];
            if h <= 0.0 || (dt - h).abs() > 1e-6 * h.abs().max(1e-300) {
                return Err(Error::Config("time column is not a uniform grid".into()));
            }
        }
        let dim = width - 1;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            values.extend_from_slice(&r[1..]);
        }
        Ok(ConvolvedSeries {
            h_n: h,
            rho: vec![f64::NAN; dim],
            dim,
            values,
        })
    }
}

/// Number of fine samples in the averaging window for one axis: the
/// `round(rho * h_n / h_fine)` most recent samples, floored at one (a
/// single-sample window is indistinguishable from direct observation).
pub fn window_len(rho: f64, steps_per_obs: usize) -> usize {
    ((rho * steps_per_obs as f64).round() as usize).max(1)
}

/// Produce the observed series from a fine path: per axis, the average of
/// the `K` most recent fine samples covering `(i*h_n - rho*h_n, i*h_n]`
/// (exactly the fine sample at `i*h_n` when `rho = 0`).
pub fn convolve(path: &SamplePath, rho: &[f64], h_n: f64) -> Result<ConvolvedSeries> {
    if rho.len() != path.dim {
        return Err(Error::Config(format!(
            "rho has {} axes, path has {}",
            rho.len(),
            path.dim
        )));
    }
    if !h_n.is_finite() || h_n <= 0.0 {
        return Err(Error::Config(format!("h_n = {h_n} must be positive")));
    }
    let q_f = h_n / path.h;
    let q = q_f.round();
    if q < 1.0 || (q_f - q).abs() > 1e-9 * q_f {
        return Err(Error::Config(format!(
            "h_n = {h_n} is not an integer multiple of the fine step {}",
            path.h
        )));
    }
    let q = q as usize;
    let z = path.index_of_time_zero();
    let n = (path.len() - 1 - z) / q;
    if n < 1 {
        return Err(Error::Range("path too short for one observation step".into()));
    }
    for (axis, &r) in rho.iter().enumerate() {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Domain(format!("rho[{axis}] = {r} must be >= 0")));
        }
        if r > 0.0 {
            let k = window_len(r, q);
            if k > z + 1 {
                return Err(Error::Range(format!(
                    "axis {axis}: window of {k} fine samples extends before the path start \
                     (burn-in covers only {z} steps)"
                )));
            }
        }
    }

    let d = path.dim;
    let mut values = vec![0.0; (n + 1) * d];
    for (axis, &r) in rho.iter().enumerate() {
        if r == 0.0 {
            for i in 0..=n {
                values[i * d + axis] = path.value(z + i * q, axis);
            }
        } else {
            let k = window_len(r, q);
            let inv_k = 1.0 / k as f64;
            for i in 0..=n {
                let end = z + i * q;
                let mut sum = 0.0;
                for b in 0..k {
                    sum += path.value(end - b, axis);
                }
                values[i * d + axis] = sum * inv_k;
            }
        }
    }
    Ok(ConvolvedSeries {
        h_n,
        rho: rho.to_vec(),
        dim: d,
        values,
    })
}

/// Keep every k-th observation; the step scales by k. Window lengths in
/// step units shrink accordingly, so known `rho` metadata is rescaled.
pub fn subsample(series: &ConvolvedSeries, k: usize) -> Result<ConvolvedSeries> {
    let n = series.n();
    if k < 1 || k > n {
        return Err(Error::Range(format!("subsample factor {k} outside 1..={n}")));
    }
    if k == 1 {
        return Ok(series.clone());
    }
    let m = n / k;
    let d = series.dim;
    let mut values = Vec::with_capacity((m + 1) * d);
    for i in 0..=m {
        for a in 0..d {
            values.push(series.value(i * k, a));
        }
    }
    Ok(ConvolvedSeries {
        h_n: series.h_n * k as f64,
        rho: series.rho.iter().map(|r| r / k as f64).collect(),
        dim: d,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{euler_maruyama, ou_1d, SimConfig};
    use approx::assert_abs_diff_eq;

    fn line_path(n: usize, h: f64, burn_steps: usize, f: impl Fn(f64) -> f64) -> SamplePath {
        let total = n + burn_steps;
        let origin = -(burn_steps as f64) * h;
        let values = (0..=total).map(|k| f(origin + k as f64 * h)).collect();
        SamplePath {
            h,
            origin_time: origin,
            dim: 1,
            values,
        }
    }

    #[test]
    fn dirac_axis_subsamples_exactly() {
        let path = line_path(100, 0.1, 0, |t| t * t - 1.0);
        let s = convolve(&path, &[0.0], 1.0).unwrap();
        assert_eq!(s.n(), 10);
        for i in 0..=10 {
            assert_eq!(s.value(i, 0), path.value(i * 10, 0));
        }
    }

    #[test]
    fn constant_path_stays_constant_for_any_rho() {
        let path = line_path(200, 0.01, 40, |_| 3.25);
        for rho in [0.0, 0.5, 1.0, 2.7] {
            let s = convolve(&path, &[rho], 0.1).unwrap();
            assert!(s.axis(0).all(|v| v == 3.25));
        }
    }

    #[test]
    fn linear_path_window_average() {
        // X(t) = t, rho = 1, K = h_n / h_fine: the mean of an arithmetic
        // progression, i*h_n - (K-1)*h_fine/2.
        let h_fine = 0.01;
        let k = 10;
        let h_n = h_fine * k as f64;
        let path = line_path(300, h_fine, 20, |t| t);
        let s = convolve(&path, &[1.0], h_n).unwrap();
        for i in 0..=s.n() {
            let expect = i as f64 * h_n - (k - 1) as f64 * h_fine / 2.0;
            assert_abs_diff_eq!(s.value(i, 0), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn riemann_convergence_on_quadratic_path() {
        // Window average of X(t) = t^2 converges to the exact integral
        // mean at rate O(h_fine).
        let h_n = 0.1;
        let rho = 1.0;
        let exact = |t: f64| {
            // (1/(rho h)) int_{t-rho h}^{t} s^2 ds
            let a = t - rho * h_n;
            (t.powi(3) - a.powi(3)) / (3.0 * rho * h_n)
        };
        let err_for = |steps_per_obs: usize| {
            let h_fine = h_n / steps_per_obs as f64;
            let path = line_path(40 * steps_per_obs, h_fine, 2 * steps_per_obs, |t| t * t);
            let s = convolve(&path, &[rho], h_n).unwrap();
            (1..=s.n())
                .map(|i| (s.value(i, 0) - exact(i as f64 * h_n)).abs())
                .fold(0.0_f64, f64::max)
        };
        let e10 = err_for(10);
        let e100 = err_for(100);
        assert!(e100 < e10 / 5.0, "no O(h) improvement: {e10} vs {e100}");
    }

    #[test]
    fn grid_mismatch_and_short_burn_in_error() {
        let path = line_path(100, 0.01, 0, |t| t);
        assert!(matches!(convolve(&path, &[0.0], 0.015), Err(Error::Config(_))));
        // rho = 2 needs a 20-sample window but no burn-in is available.
        assert!(matches!(convolve(&path, &[2.0], 0.1), Err(Error::Range(_))));
    }

    #[test]
    fn subsample_index_arithmetic() {
        let path = line_path(100, 0.1, 0, |t| t);
        let s = convolve(&path, &[0.0], 0.1).unwrap();
        assert_eq!(s.n(), 100);
        let id = subsample(&s, 1).unwrap();
        assert_eq!(id.values, s.values);

        let path10 = line_path(10, 1.0, 0, |t| t);
        let s10 = convolve(&path10, &[0.0], 1.0).unwrap();
        let s2 = subsample(&s10, 2).unwrap();
        assert_eq!(s2.n(), 5);
        let expect: Vec<f64> = vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0];
        assert_eq!(s2.values, expect);

        let s_end = subsample(&s10, 10).unwrap();
        assert_eq!(s_end.n(), 1);
        assert!(subsample(&s10, 11).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let path = line_path(50, 0.02, 10, |t| (t * 7.0).sin());
        let s = convolve(&path, &[1.0], 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("series.csv");
        s.write_csv_path(&file).unwrap();
        let back = ConvolvedSeries::read_csv_path(&file).unwrap();
        assert_eq!(back.n(), s.n());
        assert_abs_diff_eq!(back.h_n, s.h_n, epsilon = 1e-12);
        assert!(back.rho[0].is_nan());
        for i in 0..=s.n() {
            assert_abs_diff_eq!(back.value(i, 0), s.value(i, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_lowers_full_qv_on_ou() {
        // The core phenomenon: windowed averaging shrinks quadratic
        // variation relative to direct observation of the same path.
        let model = ou_1d();
        let cfg = SimConfig {
            n_fine: 100_000,
            h_fine: 1e-4,
            burn_in: 0.2,
            seed: 99,
            x_init: vec![0.0],
        };
        let path = euler_maruyama(&model, &[3.0], &[-2.0, 1.0], &cfg).unwrap();
        let h_n = 1e-3;
        let direct = convolve(&path, &[0.0], h_n).unwrap();
        let qv = |s: &ConvolvedSeries| {
            let n = s.n();
            (1..=n)
                .map(|i| (s.value(i, 0) - s.value(i - 1, 0)).powi(2))
                .sum::<f64>()
                / (n as f64 * s.h_n)
        };
        let qv0 = qv(&direct);
        for rho in [0.5, 1.0, 10.0] {
            let smoothed = convolve(&path, &[rho], h_n).unwrap();
            assert!(
                qv(&smoothed) < qv0,
                "rho = {rho} did not lower the full QV"
            );
        }
    }
}
