//! Config-driven experiment runner: Monte Carlo simulation studies,
//! real-data estimation, realized-volatility curves and the kernel audit
//! table, with flat key=value configuration and CSV reporting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::conv::{convolve, ConvolvedSeries};
use crate::error::{Error, Result};
use crate::inference::{
    estimate_rho, fit_convolved, lga_estimate, smoothing_test_with_levels,
    DEFAULT_SIG_LEVELS,
};
use crate::kernel::{
    f_d0, f_g, oracle_d0_quadrature, oracle_g_quadrature, SmoothingBound,
};
use crate::parallel::{map_indexed, map_indexed_seq};
use crate::sde::{euler_maruyama, ou_1d, ou_1d_boxed, ou_2d, ModelSpec, SimConfig};
use crate::stats::rv_curve;

/// One number, 15 significant digits, stable across runs.
pub fn csv_num(x: f64) -> String {
    format!("{x:.14e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Sim1d,
    Sim2d,
    RealData,
    RvCurve,
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Sim1d => "sim1d",
            Study::Sim2d => "sim2d",
            Study::RealData => "realdata",
            Study::RvCurve => "rvcurve",
        }
    }
}

/// Everything a study run needs. Built from per-study defaults, then a
/// key=value config file, then command-line overrides (later wins).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub study: Study,
    pub replications: usize,
    pub n_obs: usize,
    pub h_n: f64,
    /// Convolution precision: the fine step is `h_n / 10^m`.
    pub m_precision: u32,
    pub rho_true: Vec<f64>,
    pub alpha_true: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub seed: u64,
    pub sig_levels: Vec<f64>,
    pub rho_bar: f64,
    /// Burn-in duration; `None` picks `max(10^(-7/3), max rho * h_n)`.
    pub burn_in: Option<f64>,
    pub input_path: Option<PathBuf>,
    /// 1-based column selector for real data.
    pub column: usize,
    pub sample_rate_hz: f64,
    pub time_unit_s: f64,
    pub output_dir: PathBuf,
    pub k_max: usize,
    /// Dump the first replication's fine path to this CSV.
    pub dump_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(study: Study) -> Self {
        let h_paper = 10f64.powf(-10.0 / 3.0);
        let base = ExperimentConfig {
            study,
            replications: 100,
            n_obs: 100_000,
            h_n: h_paper,
            m_precision: 1,
            rho_true: vec![0.5],
            alpha_true: vec![3.0],
            beta_true: vec![-2.0, 1.0],
            seed: 1,
            sig_levels: DEFAULT_SIG_LEVELS.to_vec(),
            rho_bar: 100.0,
            burn_in: None,
            input_path: None,
            column: 2,
            sample_rate_hz: 512.0,
            time_unit_s: 5.0,
            output_dir: PathBuf::from(format!("runs/{}", study.name())),
            k_max: 100,
            dump_path: None,
        };
        match study {
            Study::Sim1d => base,
            Study::Sim2d => ExperimentConfig {
                rho_true: vec![2.0, 4.0],
                alpha_true: vec![2.0, 0.0, 3.0],
                beta_true: vec![-2.0, -0.4, 0.0, 0.1, -3.0, 5.0],
                rho_bar: 10.0,
                ..base
            },
            Study::RealData => base,
            Study::RvCurve => ExperimentConfig {
                n_obs: 100_000,
                h_n: 1e-5,
                rho_true: vec![10.0],
                alpha_true: vec![10.0],
                beta_true: vec![-20.0, 0.0],
                ..base
            },
        }
    }

    /// Paper-scale profile: full replication count and fine convolution.
    pub fn apply_paper_scale(&mut self) {
        self.replications = 1000;
        self.m_precision = 2;
        if self.study == Study::Sim2d {
            self.replications = 1000;
        }
        if self.study == Study::RvCurve {
            // The introductory illustration: T = 100 at 1e-5 resolution.
            self.n_obs = 10_000_000;
        }
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what}: {value:?}"));
        match key {
            "replications" | "reps" => {
                self.replications = value.parse().map_err(|_| bad("replications"))?
            }
            "n" => self.n_obs = value.parse().map_err(|_| bad("n"))?,
            "h" => self.h_n = parse_f64(value).ok_or_else(|| bad("h"))?,
            "m" => self.m_precision = value.parse().map_err(|_| bad("m"))?,
            "rho" => self.rho_true = parse_list(value).ok_or_else(|| bad("rho"))?,
            "alpha" => self.alpha_true = parse_list(value).ok_or_else(|| bad("alpha"))?,
            "beta" => self.beta_true = parse_list(value).ok_or_else(|| bad("beta"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "sig_levels" => {
                self.sig_levels = parse_list(value).ok_or_else(|| bad("sig_levels"))?
            }
            "rho_bar" => self.rho_bar = parse_f64(value).ok_or_else(|| bad("rho_bar"))?,
            "burn_in" => self.burn_in = Some(parse_f64(value).ok_or_else(|| bad("burn_in"))?),
            "input" => self.input_path = Some(PathBuf::from(value)),
            "column" => self.column = value.parse().map_err(|_| bad("column"))?,
            "rate_hz" => {
                self.sample_rate_hz = parse_f64(value).ok_or_else(|| bad("rate_hz"))?
            }
            "time_unit_s" => {
                self.time_unit_s = parse_f64(value).ok_or_else(|| bad("time_unit_s"))?
            }
            "out" => self.output_dir = PathBuf::from(value),
            "k_max" => self.k_max = value.parse().map_err(|_| bad("k_max"))?,
            "dump_path" => self.dump_path = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn bound(&self) -> Result<SmoothingBound> {
        SmoothingBound::new(self.rho_bar)
    }

    pub fn fine_steps_per_obs(&self) -> usize {
        10usize.pow(self.m_precision)
    }

    pub fn burn_in_duration(&self) -> f64 {
        self.burn_in.unwrap_or_else(|| {
            let max_rho = self.rho_true.iter().cloned().fold(0.0, f64::max);
            10f64.powf(-7.0 / 3.0).max(max_rho * self.h_n)
        })
    }

    fn validate_sim(&self, model: &ModelSpec) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.n_obs < 4 {
            return Err(Error::Config("n must be >= 4".into()));
        }
        if !(self.h_n.is_finite() && self.h_n > 0.0) {
            return Err(Error::Config(format!("h = {} must be positive", self.h_n)));
        }
        if self.m_precision > 6 {
            return Err(Error::Config("m larger than 6 is not supported".into()));
        }
        if self.rho_true.len() != model.dim_d {
            return Err(Error::Config(format!(
                "rho needs {} coordinates",
                model.dim_d
            )));
        }
        for &r in &self.rho_true {
            if !r.is_finite() || r < 0.0 || r > self.rho_bar {
                return Err(Error::Config(format!(
                    "rho value {r} outside [0, {}]",
                    self.rho_bar
                )));
            }
        }
        for &lv in &self.sig_levels {
            if !(lv > 0.0 && lv < 1.0) {
                return Err(Error::Config(format!("significance level {lv} not in (0,1)")));
            }
        }
        model.validate_alpha(&self.alpha_true).map_err(reclass_config)?;
        model.validate_beta(&self.beta_true).map_err(reclass_config)?;
        Ok(())
    }
}

fn reclass_config(e: Error) -> Error {
    Error::Config(e.to_string())
}

fn parse_f64(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let items: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok())
        .collect::<Option<Vec<f64>>>()?;
    (!items.is_empty()).then_some(items)
}

/// Parse a flat `key=value` config file ('#' starts a comment line).
pub fn apply_config_file(cfg: &mut ExperimentConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
            "{}:{}: expected key=value, got {line:?}",
            path.display(),
            lineno + 1
        )))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(())
}

/// Defaults, then optional `--paper-scale`, then the config file, then
/// command-line `key=value` overrides.
pub fn load_config(
    study: Study,
    config_path: Option<&Path>,
    overrides: &[String],
    paper_scale: bool,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(study);
    if paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(p) = config_path {
        apply_config_file(&mut cfg, p)?;
    }
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {item:?} is not key=value"))
        })?;
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Simulation studies
// ---------------------------------------------------------------------------

/// Raw per-replication estimates.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub index: usize,
    pub rho_hat: Vec<f64>,
    pub rn: Vec<f64>,
    pub t_stat: Vec<f64>,
    pub p_value: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub lga_alpha: Vec<f64>,
    pub lga_beta: Vec<f64>,
    pub failed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Monte Carlo standard error of each mean.
    pub se: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub study: Study,
    pub n_reps: usize,
    pub n_failed: usize,
    pub rho: ParamSummary,
    pub alpha: ParamSummary,
    pub beta: ParamSummary,
    pub lga_alpha: ParamSummary,
    pub lga_beta: ParamSummary,
    /// Empirical rejection frequency per (significance level, axis).
    pub rejection: Vec<(f64, Vec<f64>)>,
    /// Largest test statistic over replications, per axis.
    pub max_t: Vec<f64>,
}

/// Coordinatewise mean and root-mean-square error against the truth.
pub fn summarize(values: &[Vec<f64>], truths: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = truths.len();
    let n = values.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    let mut mse = vec![0.0; dim];
    for v in values {
        for k in 0..dim {
            mean[k] += v[k] / n;
            mse[k] += (v[k] - truths[k]).powi(2) / n;
        }
    }
    (mean, mse.into_iter().map(f64::sqrt).collect())
}

fn param_summary(values: &[Vec<f64>], truths: &[f64]) -> ParamSummary {
    let (mean, rmse) = summarize(values, truths);
    let dim = truths.len();
    let n = values.len().max(1) as f64;
    let mut var = vec![0.0; dim];
    for v in values {
        for k in 0..dim {
            var[k] += (v[k] - mean[k]).powi(2) / n;
        }
    }
    let se = var.iter().map(|v| (v / n).sqrt()).collect();
    ParamSummary {
        truth: truths.to_vec(),
        mean,
        rmse,
        se,
    }
}

fn study_model(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    match cfg.study {
        Study::Sim1d => Ok(ou_1d()),
        Study::Sim2d => Ok(ou_2d()),
        Study::RvCurve => {
            // Simulation-only study: stretch the boxes around the supplied
            // true values so wide illustrative parameters stay admissible.
            let wide = |vals: &[f64]| -> Vec<(f64, f64)> {
                vals.iter()
                    .map(|&v| (v.abs().max(1.0) * -1e3, v.abs().max(1.0) * 1e3))
                    .collect()
            };
            Ok(ModelSpec {
                theta1_box: wide(&cfg.alpha_true),
                theta2_box: wide(&cfg.beta_true),
                ..ou_1d()
            })
        }
        Study::RealData => Err(Error::Config(
            "real-data study has no simulation model".into(),
        )),
    }
}

fn simulate_one(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    rep: usize,
) -> Result<ConvolvedSeries> {
    let steps = cfg.fine_steps_per_obs();
    let sim = SimConfig {
        n_fine: cfg.n_obs * steps,
        h_fine: cfg.h_n / steps as f64,
        burn_in: cfg.burn_in_duration(),
        // Replication r draws from the stream seed XOR r.
        seed: cfg.seed ^ rep as u64,
        x_init: vec![0.0; model.dim_d],
    };
    let path = euler_maruyama(model, &cfg.alpha_true, &cfg.beta_true, &sim)?;
    if rep == 0 {
        if let Some(dump) = &cfg.dump_path {
            if let Some(dir) = dump.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            let f = fs::File::create(dump)?;
            path.write_csv(std::io::BufWriter::new(f))?;
        }
    }
    convolve(&path, &cfg.rho_true, cfg.h_n)
}

fn run_replication(cfg: &ExperimentConfig, model: &ModelSpec, rep: usize) -> RepRecord {
    let bound = match cfg.bound() {
        Ok(b) => b,
        Err(e) => return failed_record(rep, e.to_string()),
    };
    let work = || -> Result<RepRecord> {
        let series = simulate_one(cfg, model, rep)?;
        let est = estimate_rho(&series, &bound)?;
        let test = smoothing_test_with_levels(&series, &cfg.sig_levels)?;
        let fit = fit_convolved(&series, &est.rho_hat, model, &bound)?;
        let lga = lga_estimate(&series, model)?;
        Ok(RepRecord {
            index: rep,
            rho_hat: est.rho_hat,
            rn: est.rn,
            t_stat: test.t_stat,
            p_value: test.p_value,
            alpha_hat: fit.alpha_hat,
            beta_hat: fit.beta_hat,
            lga_alpha: lga.alpha_hat,
            lga_beta: lga.beta_hat,
            failed: None,
        })
    };
    work().unwrap_or_else(|e| failed_record(rep, e.to_string()))
}

fn failed_record(rep: usize, msg: String) -> RepRecord {
    RepRecord {
        index: rep,
        rho_hat: Vec::new(),
        rn: Vec::new(),
        t_stat: Vec::new(),
        p_value: Vec::new(),
        alpha_hat: Vec::new(),
        beta_hat: Vec::new(),
        lga_alpha: Vec::new(),
        lga_beta: Vec::new(),
        failed: Some(msg.replace([',', '\n'], ";")),
    }
}

/// Run the configured Monte Carlo study; replications are dispatched to the
/// worker pool and aggregated in index order, so the output is stable
/// regardless of scheduling.
pub fn run_sim_study(cfg: &ExperimentConfig) -> Result<(StudySummary, Vec<RepRecord>)> {
    run_sim_study_impl(cfg, false)
}

/// Sequential twin of [`run_sim_study`], for the benchmark comparison.
pub fn run_sim_study_sequential(
    cfg: &ExperimentConfig,
) -> Result<(StudySummary, Vec<RepRecord>)> {
    run_sim_study_impl(cfg, true)
}

fn run_sim_study_impl(
    cfg: &ExperimentConfig,
    force_sequential: bool,
) -> Result<(StudySummary, Vec<RepRecord>)> {
    let model = study_model(cfg)?;
    cfg.validate_sim(&model)?;
    let steps = cfg.fine_steps_per_obs();
    for &r in &cfg.rho_true {
        if r > 0.0 && (r * steps as f64).round() < 1.0 {
            eprintln!(
                "warning: rho = {r} is below the window resolution at m = {}; \
                 the axis is observed directly",
                cfg.m_precision
            );
        }
    }

    let job = |rep: usize| run_replication(cfg, &model, rep);
    let mut records = if force_sequential {
        map_indexed_seq(cfg.replications, job)
    } else {
        map_indexed(cfg.replications, job)
    };
    records.sort_by_key(|r| r.index);

    let summary = aggregate(cfg, &model, &records)?;
    Ok((summary, records))
}

fn aggregate(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    records: &[RepRecord],
) -> Result<StudySummary> {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.failed.is_none()).collect();
    let n_failed = records.len() - ok.len();
    if n_failed * 10 > records.len() {
        return Err(Error::Degenerate(format!(
            "{n_failed} of {} replications failed",
            records.len()
        )));
    }
    if ok.is_empty() {
        return Err(Error::Degenerate("no successful replications".into()));
    }
    let d = model.dim_d;
    let collect = |f: &dyn Fn(&RepRecord) -> &Vec<f64>| -> Vec<Vec<f64>> {
        ok.iter().map(|r| f(r).clone()).collect()
    };
    let rho = param_summary(&collect(&|r| &r.rho_hat), &cfg.rho_true);
    let alpha = param_summary(&collect(&|r| &r.alpha_hat), &cfg.alpha_true);
    let beta = param_summary(&collect(&|r| &r.beta_hat), &cfg.beta_true);
    let lga_alpha = param_summary(&collect(&|r| &r.lga_alpha), &cfg.alpha_true);
    let lga_beta = param_summary(&collect(&|r| &r.lga_beta), &cfg.beta_true);

    let mut rejection = Vec::with_capacity(cfg.sig_levels.len());
    for &level in &cfg.sig_levels {
        let crit = crate::kernel::gaussian_quantile(level)?;
        let mut freq = vec![0.0; d];
        for r in &ok {
            for (axis, f) in freq.iter_mut().enumerate() {
                if r.t_stat[axis] < crit {
                    *f += 1.0;
                }
            }
        }
        for f in freq.iter_mut() {
            *f /= ok.len() as f64;
        }
        rejection.push((level, freq));
    }
    let mut max_t = vec![f64::NEG_INFINITY; d];
    for r in &ok {
        for (m, &t) in max_t.iter_mut().zip(&r.t_stat) {
            *m = m.max(t);
        }
    }

    Ok(StudySummary {
        study: cfg.study,
        n_reps: records.len(),
        n_failed,
        rho,
        alpha,
        beta,
        lga_alpha,
        lga_beta,
        rejection,
        max_t,
    })
}

// ---------------------------------------------------------------------------
// Study output files
// ---------------------------------------------------------------------------

fn push_param(out: &mut String, name: &str, p: &ParamSummary) {
    for k in 0..p.mean.len() {
        let _ = writeln!(out, "{name}_true_{},{}", k + 1, csv_num(p.truth[k]));
        let _ = writeln!(out, "{name}_mean_{},{}", k + 1, csv_num(p.mean[k]));
        let _ = writeln!(out, "{name}_rmse_{},{}", k + 1, csv_num(p.rmse[k]));
        let _ = writeln!(out, "{name}_se_{},{}", k + 1, csv_num(p.se[k]));
    }
}

/// Flat `key,value` aggregate file; byte-identical for identical configs.
pub fn summary_csv(cfg: &ExperimentConfig, s: &StudySummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "key,value");
    let _ = writeln!(out, "study,{}", s.study.name());
    let _ = writeln!(out, "replications,{}", s.n_reps);
    let _ = writeln!(out, "n_failed,{}", s.n_failed);
    let _ = writeln!(out, "n,{}", cfg.n_obs);
    let _ = writeln!(out, "h,{}", csv_num(cfg.h_n));
    let _ = writeln!(out, "m,{}", cfg.m_precision);
    let _ = writeln!(out, "seed,{}", cfg.seed);
    push_param(&mut out, "rho_hat", &s.rho);
    push_param(&mut out, "alpha", &s.alpha);
    push_param(&mut out, "beta", &s.beta);
    push_param(&mut out, "lga_alpha", &s.lga_alpha);
    push_param(&mut out, "lga_beta", &s.lga_beta);
    for (level, freqs) in &s.rejection {
        for (axis, f) in freqs.iter().enumerate() {
            let _ = writeln!(out, "reject_{level}_axis{},{}", axis + 1, csv_num(*f));
        }
    }
    for (axis, t) in s.max_t.iter().enumerate() {
        let _ = writeln!(out, "max_t_axis{},{}", axis + 1, csv_num(*t));
    }
    out
}

/// Per-replication raw estimates, one row per replication.
pub fn replications_csv(s: &StudySummary, records: &[RepRecord]) -> String {
    let d = s.rho.mean.len();
    let m1 = s.alpha.mean.len();
    let m2 = s.beta.mean.len();
    let mut out = String::new();
    let mut header = String::from("rep");
    for (name, width) in [
        ("rho_hat", d),
        ("rn", d),
        ("t", d),
        ("p", d),
        ("alpha", m1),
        ("beta", m2),
        ("lga_alpha", m1),
        ("lga_beta", m2),
    ] {
        for k in 0..width {
            let _ = write!(header, ",{name}_{}", k + 1);
        }
    }
    let _ = writeln!(out, "{header},failed");
    for r in records {
        let _ = write!(out, "{}", r.index);
        for (vals, width) in [
            (&r.rho_hat, d),
            (&r.rn, d),
            (&r.t_stat, d),
            (&r.p_value, d),
            (&r.alpha_hat, m1),
            (&r.beta_hat, m2),
            (&r.lga_alpha, m1),
            (&r.lga_beta, m2),
        ] {
            for k in 0..width {
                match vals.get(k) {
                    Some(v) => {
                        let _ = write!(out, ",{}", csv_num(*v));
                    }
                    None => out.push(','),
                }
            }
        }
        let _ = writeln!(out, ",{}", r.failed.as_deref().unwrap_or(""));
    }
    out
}

/// Write `summary.csv` and `replications.csv` into the configured output
/// directory.
pub fn write_study_outputs(
    cfg: &ExperimentConfig,
    summary: &StudySummary,
    records: &[RepRecord],
) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("summary.csv"), summary_csv(cfg, summary))?;
    fs::write(
        cfg.output_dir.join("replications.csv"),
        replications_csv(summary, records),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Realized-volatility curve study
// ---------------------------------------------------------------------------

/// RV(k) for k = 1..=k_max, from a simulated path or an input column.
pub fn run_rv_curve(cfg: &ExperimentConfig) -> Result<Vec<(usize, f64)>> {
    let series = match &cfg.input_path {
        Some(path) => {
            let columns = parse_numeric_table(path)?;
            let col = select_column(&columns, cfg.column, path)?;
            ConvolvedSeries::from_columns(
                std::slice::from_ref(col),
                1.0 / (cfg.sample_rate_hz * cfg.time_unit_s),
            )?
        }
        None => {
            let model = study_model(cfg)?;
            simulate_one(cfg, &model, 0)?
        }
    };
    rv_curve(&series, 0, cfg.k_max.min(series.n()))
}

pub fn rv_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,rv\n");
    for (k, rv) in curve {
        let _ = writeln!(out, "{k},{}", csv_num(*rv));
    }
    out
}

/// Ordinary least-squares slope of `ys` on `xs` and its standard error.
pub fn linear_trend(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(Error::InsufficientData { needed: 3, got: n.min(ys.len()) });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::Degenerate("constant regressor".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (rss / (nf - 2.0) / sxx).sqrt();
    Ok((slope, se))
}

// ---------------------------------------------------------------------------
// Real-data workflow
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AxisReport {
    pub column: usize,
    pub rho_hat: f64,
    pub rn: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct FittedOu {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl FittedOu {
    /// The fitted model in display form.
    pub fn equation(&self) -> String {
        format!(
            "dX_t = (({:.3})X_t + ({:.3}))dt + ({:.3})dW_t",
            self.beta1, self.beta2, self.alpha
        )
    }
}

#[derive(Debug, Clone)]
pub struct RealDataReport {
    pub h_n: f64,
    pub per_axis: Vec<AxisReport>,
    pub fitted_column: usize,
    pub fitted_rho: f64,
    pub lga_fit: FittedOu,
    pub lse_fit: FittedOu,
}

/// Parameter boxes for fitting a 1-d OU to wide-range recordings.
fn real_data_model() -> ModelSpec {
    ou_1d_boxed(
        vec![(0.01, 200.0)],
        vec![(-100.0, -0.01), (-100.0, 100.0)],
    )
}

/// Estimate the smoothing parameter and test every column, then fit a 1-d
/// OU (both by LGA and by the kernel-aware least squares with the plug-in
/// estimate) on the selected column.
pub fn run_real_data(cfg: &ExperimentConfig) -> Result<RealDataReport> {
    let path = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Config("realdata requires input=<file>".into()))?;
    if !(cfg.sample_rate_hz > 0.0 && cfg.time_unit_s > 0.0) {
        return Err(Error::Config("rate_hz and time_unit_s must be positive".into()));
    }
    let columns = parse_numeric_table(path)?;
    let h_n = 1.0 / (cfg.sample_rate_hz * cfg.time_unit_s);
    let bound = cfg.bound()?;

    let mut per_axis = Vec::with_capacity(columns.len());
    for (idx, col) in columns.iter().enumerate() {
        let series = ConvolvedSeries::from_columns(std::slice::from_ref(col), h_n)?;
        let est = estimate_rho(&series, &bound)?;
        let test = smoothing_test_with_levels(&series, &cfg.sig_levels)?;
        per_axis.push(AxisReport {
            column: idx + 1,
            rho_hat: est.rho_hat[0],
            rn: est.rn[0],
            t_stat: test.t_stat[0],
            p_value: test.p_value[0],
        });
    }

    let col = select_column(&columns, cfg.column, path)?;
    let series = ConvolvedSeries::from_columns(std::slice::from_ref(col), h_n)?;
    let model = real_data_model();
    let est = estimate_rho(&series, &bound)?;
    let lga = lga_estimate(&series, &model)?;
    let fit = fit_convolved(&series, &est.rho_hat, &model, &bound)?;
    let as_ou = |alpha: &[f64], beta: &[f64]| FittedOu {
        alpha: alpha[0],
        beta1: beta[0],
        beta2: beta[1],
    };
    Ok(RealDataReport {
        h_n,
        per_axis,
        fitted_column: cfg.column,
        fitted_rho: est.rho_hat[0],
        lga_fit: as_ou(&lga.alpha_hat, &lga.beta_hat),
        lse_fit: as_ou(&fit.alpha_hat, &fit.beta_hat),
    })
}

/// Per-column table in the layout column, rho_hat, t, p.
pub fn real_data_csv(report: &RealDataReport) -> String {
    let mut out = String::from("column,rho_hat,t_stat,p_value\n");
    for a in &report.per_axis {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            a.column,
            csv_num(a.rho_hat),
            csv_num(a.t_stat),
            csv_num(a.p_value)
        );
    }
    out
}

fn select_column<'a>(
    columns: &'a [Vec<f64>],
    column: usize,
    path: &Path,
) -> Result<&'a Vec<f64>> {
    if column == 0 || column > columns.len() {
        return Err(Error::Config(format!(
            "column {column} out of range 1..={} in {}",
            columns.len(),
            path.display()
        )));
    }
    Ok(&columns[column - 1])
}

/// Read a plain numeric table: comma or whitespace separated columns, '#'
/// comments, an optional single header line. Errors name the offending
/// line and column.
pub fn parse_numeric_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let name = path.display().to_string();
    let file = fs::File::open(path)?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut data_rows = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let mut row = Vec::with_capacity(fields.len());
        let mut header = false;
        for (colno, field) in fields.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    if data_rows == 0 {
                        header = true; // tolerate one leading header line
                        break;
                    }
                    return Err(Error::Parse {
                        path: name,
                        line: lineno + 1,
                        column: colno + 1,
                        msg: format!("not a number: {field:?}"),
                    });
                }
            }
        }
        if header {
            continue;
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); row.len()];
        }
        if row.len() != columns.len() {
            return Err(Error::Parse {
                path: name,
                line: lineno + 1,
                column: row.len() + 1,
                msg: format!("expected {} fields, got {}", columns.len(), row.len()),
            });
        }
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(v);
        }
        data_rows += 1;
    }
    if data_rows < 2 {
        return Err(Error::InsufficientData { needed: 2, got: data_rows });
    }
    Ok(columns)
}

// ---------------------------------------------------------------------------
// Kernel audit table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KernelTableRow {
    pub rho_i: f64,
    pub rho_j: f64,
    pub f_g: f64,
    pub branch_g: u8,
    pub f_d0: f64,
    pub branch_d0: u8,
    pub oracle_g: f64,
    pub oracle_d0: f64,
}

/// Closed forms and oracle values on the grid `rhos x rhos`.
pub fn kernel_table(
    rhos: &[f64],
    n_grid: usize,
    bound: &SmoothingBound,
) -> Result<Vec<KernelTableRow>> {
    kernel_table_impl(rhos, n_grid, bound, false)
}

/// Sequential twin of [`kernel_table`], for the benchmark comparison.
pub fn kernel_table_sequential(
    rhos: &[f64],
    n_grid: usize,
    bound: &SmoothingBound,
) -> Result<Vec<KernelTableRow>> {
    kernel_table_impl(rhos, n_grid, bound, true)
}

fn kernel_table_impl(
    rhos: &[f64],
    n_grid: usize,
    bound: &SmoothingBound,
    force_sequential: bool,
) -> Result<Vec<KernelTableRow>> {
    let pairs: Vec<(f64, f64)> = rhos
        .iter()
        .flat_map(|&a| rhos.iter().map(move |&b| (a, b)))
        .collect();
    let job = |idx: usize| -> Result<KernelTableRow> {
        let (rho_i, rho_j) = pairs[idx];
        let g = f_g(rho_i, rho_j, bound)?;
        let d0 = f_d0(rho_i, rho_j, bound)?;
        Ok(KernelTableRow {
            rho_i,
            rho_j,
            f_g: g.value,
            branch_g: g.branch_id,
            f_d0: d0.value,
            branch_d0: d0.branch_id,
            oracle_g: oracle_g_quadrature(rho_i, rho_j, n_grid)?,
            oracle_d0: oracle_d0_quadrature(rho_i, rho_j, n_grid)?,
        })
    };
    let rows = if force_sequential {
        map_indexed_seq(pairs.len(), job)
    } else {
        map_indexed(pairs.len(), job)
    };
    rows.into_iter().collect()
}

pub fn kernel_table_csv(rows: &[KernelTableRow]) -> String {
    let mut out =
        String::from("rho_i,rho_j,f_g,branch_g,f_d0,branch_d0,oracle_g,oracle_d0\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_num(r.rho_i),
            csv_num(r.rho_j),
            csv_num(r.f_g),
            r.branch_g,
            csv_num(r.f_d0),
            r.branch_d0,
            csv_num(r.oracle_g),
            csv_num(r.oracle_d0)
        );
    }
    out
}

/// Default audit grid: branch interiors and knots of both piecewise tables.
pub fn default_kernel_grid() -> Vec<f64> {
    vec![
        0.0, 0.3, 0.5, 0.7, 1.0, 1.2, 1.5, 1.8, 2.0, 2.2, 2.5, 2.8, 3.0, 3.3, 3.6, 4.0, 4.5,
        5.0, 6.0, 7.5,
    ]
}

/// Sanity helper for tests: which piecewise branches fire on a grid.
pub fn branch_coverage(rhos: &[f64], bound: &SmoothingBound) -> (BTreeSet<u8>, BTreeSet<u8>) {
    let mut g = BTreeSet::new();
    let mut d = BTreeSet::new();
    for &a in rhos {
        for &b in rhos {
            if let Ok(v) = f_g(a, b, bound) {
                g.insert(v.branch_id);
            }
            if let Ok(v) = f_d0(a, b, bound) {
                d.insert(v.branch_id);
            }
        }
    }
    (g, d)
}
