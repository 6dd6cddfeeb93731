//! `convdiff`: simulate, estimate and test diffusions observed through a
//! per-axis moving-average kernel.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convdiff_core::conv::ConvolvedSeries;
use convdiff_core::harness::{
    self, csv_num, load_config, run_real_data, run_rv_curve, run_sim_study,
    write_study_outputs, Study,
};
use convdiff_core::inference::{
    estimate_rho, fit_convolved, smoothing_test_with_levels,
};
use convdiff_core::sde::{ou_1d, ou_2d};
use convdiff_core::{Error, SmoothingBound};

#[derive(Parser)]
#[command(
    name = "convdiff",
    version,
    about = "Diffusions observed through a moving-average kernel: simulation studies, \
             smoothing-parameter estimation and testing, parameter fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// 1-d Ornstein-Uhlenbeck simulation study.
    Sim1d(StudyArgs),
    /// 2-d Ornstein-Uhlenbeck simulation study.
    Sim2d(StudyArgs),
    /// Estimate and test every column of a recording, then fit an OU model.
    Realdata(StudyArgs),
    /// Realized volatility against the subsampling factor k.
    RvCurve(StudyArgs),
    /// Audit table of the kernel closed forms against their quadrature
    /// oracles.
    KernelTable(KernelTableArgs),
    /// One-shot estimation on a series file.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full replication count and fine convolution (slow).
    #[arg(long)]
    paper_scale: bool,
    /// Config overrides, e.g. `replications=200 rho=0.3`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct KernelTableArgs {
    /// Largest rho on the grid.
    #[arg(long, default_value_t = 3.0)]
    rho_max: f64,
    /// Grid spacing.
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Quadrature resolution for the oracle columns.
    #[arg(long, default_value_t = 20_000)]
    n_grid: usize,
    #[arg(long, default_value_t = 100.0)]
    rho_bar: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Numeric column file (one column per axis).
    #[arg(long)]
    input: PathBuf,
    /// Sampling step of the series.
    #[arg(long = "h")]
    h: f64,
    #[arg(long, default_value_t = 100.0)]
    rho_bar: f64,
    /// Model to fit: ou1d or ou2d.
    #[arg(long, default_value = "ou1d")]
    model: String,
    /// Comma-separated known smoothing parameters, or `none` to estimate.
    #[arg(long, default_value = "none")]
    known_rho: String,
    #[arg(long, default_value = "0.10,0.05,0.025,0.01,0.001")]
    sig_levels: String,
    /// Output CSV path for the per-axis table (stdout report either way).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim1d(a) => run_study(Study::Sim1d, a),
        Command::Sim2d(a) => run_study(Study::Sim2d, a),
        Command::Realdata(a) => run_realdata(a),
        Command::RvCurve(a) => run_rvcurve(a),
        Command::KernelTable(a) => run_kernel_table(a),
        Command::Estimate(a) => run_estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run_study(study: Study, args: StudyArgs) -> Result<(), Error> {
    let cfg = load_config(study, args.config.as_deref(), &args.overrides, args.paper_scale)?;
    let (summary, records) = run_sim_study(&cfg)?;
    write_study_outputs(&cfg, &summary, &records)?;
    print!("{}", harness::summary_csv(&cfg, &summary));
    eprintln!(
        "wrote {} and {}",
        cfg.output_dir.join("summary.csv").display(),
        cfg.output_dir.join("replications.csv").display()
    );
    Ok(())
}

fn run_realdata(args: StudyArgs) -> Result<(), Error> {
    let cfg = load_config(
        Study::RealData,
        args.config.as_deref(),
        &args.overrides,
        args.paper_scale,
    )?;
    let report = run_real_data(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let table = harness::real_data_csv(&report);
    std::fs::write(cfg.output_dir.join("real_data.csv"), &table)?;
    print!("{table}");
    println!("fitted_column,{}", report.fitted_column);
    println!("fitted_rho,{}", csv_num(report.fitted_rho));
    println!("lga: {}", report.lga_fit.equation());
    println!("lse: {}", report.lse_fit.equation());
    Ok(())
}

fn run_rvcurve(args: StudyArgs) -> Result<(), Error> {
    let cfg = load_config(
        Study::RvCurve,
        args.config.as_deref(),
        &args.overrides,
        args.paper_scale,
    )?;
    let curve = run_rv_curve(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let csv = harness::rv_csv(&curve);
    std::fs::write(cfg.output_dir.join("rv.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_kernel_table(args: KernelTableArgs) -> Result<(), Error> {
    if !(args.step > 0.0 && args.rho_max >= 0.0) {
        return Err(Error::Config("need step > 0 and rho_max >= 0".into()));
    }
    let bound = SmoothingBound::new(args.rho_bar)?;
    let mut rhos = Vec::new();
    let mut r = 0.0;
    while r <= args.rho_max + 1e-12 {
        rhos.push(r.min(args.rho_max));
        r += args.step;
    }
    let rows = harness::kernel_table(&rhos, args.n_grid, &bound)?;
    let csv = harness::kernel_table_csv(&rows);
    match args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<(), Error> {
    let bound = SmoothingBound::new(args.rho_bar)?;
    let columns = harness::parse_numeric_table(&args.input)?;
    let series = ConvolvedSeries::from_columns(&columns, args.h)?;
    let model = match args.model.as_str() {
        "ou1d" => ou_1d(),
        "ou2d" => ou_2d(),
        other => {
            return Err(Error::Config(format!(
                "unknown model {other:?} (expected ou1d or ou2d)"
            )))
        }
    };
    if series.dim != model.dim_d {
        return Err(Error::Config(format!(
            "input has {} columns but model {} needs {}",
            series.dim, args.model, model.dim_d
        )));
    }
    let levels: Vec<f64> = args
        .sig_levels
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad sig-levels {:?}", args.sig_levels)))?;

    let est = estimate_rho(&series, &bound)?;
    let rho: Vec<f64> = if args.known_rho.trim() == "none" {
        est.rho_hat.clone()
    } else {
        let given: Vec<f64> = args
            .known_rho
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad known-rho {:?}", args.known_rho)))?;
        if given.len() != series.dim {
            return Err(Error::Config(format!(
                "known-rho needs {} values",
                series.dim
            )));
        }
        given
    };
    let test = smoothing_test_with_levels(&series, &levels)?;
    let fit = fit_convolved(&series, &rho, &model, &bound)?;

    // Flat key-value report.
    println!("model,{}", args.model);
    println!("n,{}", series.n());
    println!("h,{}", csv_num(args.h));
    for (axis, rho_used) in rho.iter().enumerate() {
        println!("rho_hat_{},{}", axis + 1, csv_num(est.rho_hat[axis]));
        println!("rho_used_{},{}", axis + 1, csv_num(*rho_used));
        println!("rn_{},{}", axis + 1, csv_num(est.rn[axis]));
        println!("t_stat_{},{}", axis + 1, csv_num(test.t_stat[axis]));
        println!("p_value_{},{}", axis + 1, csv_num(test.p_value[axis]));
    }
    for (k, a) in fit.alpha_hat.iter().enumerate() {
        println!("alpha_hat_{},{}", k + 1, csv_num(*a));
    }
    for (k, b) in fit.beta_hat.iter().enumerate() {
        println!("beta_hat_{},{}", k + 1, csv_num(*b));
    }
    if args.model == "ou1d" {
        println!(
            "fit: dX_t = (({:.3})X_t + ({:.3}))dt + ({:.3})dW_t",
            fit.beta_hat[0], fit.beta_hat[1], fit.alpha_hat[0]
        );
    }

    // Per-axis CSV table.
    let mut table = String::from("axis,rho_hat,t_stat,p_value\n");
    for axis in 0..series.dim {
        table.push_str(&format!(
            "{},{},{},{}\n",
            axis + 1,
            csv_num(est.rho_hat[axis]),
            csv_num(test.t_stat[axis]),
            csv_num(test.p_value[axis])
        ));
    }
    match args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}
