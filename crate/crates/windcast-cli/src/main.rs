//! Command-line front end for the forecasting pipeline.
//!
//! Every command resolves its configuration (defaults, then `--config`,
//! then flags), writes its outputs under `--out`, and drops a `manifest.txt`
//! whose body is the fully resolved config in loadable form, so any run can
//! be repeated from its own output directory.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use windcast_core::archive::save_transformer;
use windcast_core::io::{
    fmt_sig16, load_csv, write_decomposition_csv, write_eval_metrics_csv, write_metrics_csv,
    write_report_csv, write_series_csv,
};
use windcast_core::{
    compute_metrics, generate_synthetic, iceemdan, imf_sweep, train_pipeline, ErrorMetrics,
};

use config::CliConfig;

#[derive(Parser)]
#[command(name = "windcast", version, about = "Hybrid wind-speed forecasting pipeline")]
struct Cli {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; rederives the per-stage seeds, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "windcast_out")]
    out: PathBuf,

    /// Decompose only the training span and forecast modes beyond it,
    /// so no test-period value is ever read.
    #[arg(long, global = true)]
    strict_causal: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a series into modes and write them as CSV.
    Decompose {
        /// Input CSV with `timestamp` and the configured value column.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Train the full pipeline and write forecasts, metrics, and report.
    Run {
        /// Input CSV with `timestamp` and the configured value column.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Rerun the pipeline across mode counts and tabulate the error indices.
    Sweep {
        /// Input CSV with `timestamp` and the configured value column.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Generate the configured synthetic series.
    Synth,
    /// Score a forecast CSV against a ground-truth CSV.
    Eval {
        /// Ground-truth CSV.
        ground: PathBuf,
        /// Forecast CSV with the same value column and length.
        forecast: PathBuf,
    },
}

/// Config problems exit with 2, runtime failures with 1. Usage errors also
/// exit with 2 via clap.
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<windcast_core::Error> for CliError {
    fn from(e: windcast_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("windcast: config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("windcast: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            CliConfig::parse(&text).map_err(CliError::Config)?
        }
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if cli.strict_causal {
        cfg.pipeline.strict_causal = true;
    }

    let out = &cli.out;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    match &cli.command {
        Command::Decompose { input } => cmd_decompose(&cfg, input, out),
        Command::Run { input } => cmd_run(&cfg, input, out),
        Command::Sweep { input } => cmd_sweep(&cfg, input, out),
        Command::Synth => cmd_synth(&cfg, out),
        Command::Eval { ground, forecast } => cmd_eval(&cfg, ground, forecast, out),
    }
}

fn cmd_decompose(cfg: &CliConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let series = load_csv(input, &cfg.data_column)?;
    let decomp = iceemdan(series.values(), &cfg.pipeline.iceemdan)?;
    write_decomposition_csv(&out.join("decomposition.csv"), &decomp)?;
    write_manifest(cfg, "decompose", Some(input), out)?;

    let scale = series.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = decomp.max_reconstruction_error(series.values());
    println!(
        "decomposed {} samples into {} modes + residue",
        series.len(),
        decomp.imfs.len()
    );
    println!(
        "reconstruction max abs error {:e} (additivity bound {:e})",
        err,
        1e-8 * (scale + 1.0)
    );
    println!("wrote {}", out.join("decomposition.csv").display());
    Ok(())
}

fn cmd_run(cfg: &CliConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let series = load_csv(input, &cfg.data_column)?;
    let trained = train_pipeline(&cfg.pipeline, &series)?;
    let report = trained.report()?;

    write_report_csv(
        &out.join("report.csv"),
        &report.ground,
        &report.primary,
        &report.corrected,
        &report.residual_errors,
        &report.forecast_errors,
    )?;

    let mut rows = vec![
        ("primary".to_string(), report.metrics_primary),
        ("corrected".to_string(), report.metrics_corrected),
        ("baseline".to_string(), report.baseline_metrics),
    ];
    for (label, m) in &report.per_horizon {
        rows.push((format!("horizon:{label}"), *m));
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    write_plot_csv(&out.join("plot_ground_vs_corrected.csv"), &report.ground, &report.corrected)?;

    if cfg.save_models {
        let dir = out.join("models");
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        for (k, model) in trained.mode_models().into_iter().enumerate() {
            if let Some(model) = model {
                save_transformer(model, dir.join(format!("mode_{k}.wta")))?;
            }
        }
    }
    write_manifest(cfg, "run", Some(input), out)?;

    let boundary = trained.boundary();
    println!(
        "series: {} samples, train 0..{boundary}, test {boundary}..{}",
        series.len(),
        series.len()
    );
    print_metrics_line("primary", &report.metrics_primary);
    print_metrics_line("corrected", &report.metrics_corrected);
    print_metrics_line("baseline", &report.baseline_metrics);
    for (label, m) in &report.per_horizon {
        print_metrics_line(&format!("horizon:{label}"), m);
    }
    println!("wrote report.csv, metrics.csv, plot_ground_vs_corrected.csv under {}", out.display());
    Ok(())
}

fn cmd_sweep(cfg: &CliConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let series = load_csv(input, &cfg.data_column)?;
    let rows = imf_sweep(&cfg.pipeline, &series, &cfg.sweep_counts)?;

    let path = out.join("sweep.csv");
    let file = File::create(&path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "max_imfs,mae,mape,mre,mse,rmse")?;
        for (k, m) in &rows {
            writeln!(
                w,
                "{k},{},{},{},{},{}",
                fmt_sig16(m.mae),
                fmt_sig16(m.mape),
                fmt_sig16(m.mre),
                fmt_sig16(m.mse),
                fmt_sig16(m.rmse)
            )?;
        }
        w.flush()
    };
    go().map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    write_manifest(cfg, "sweep", Some(input), out)?;

    for (k, m) in &rows {
        print_metrics_line(&format!("max_imfs={k}"), m);
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.1.mse.total_cmp(&b.1.mse))
        .expect("sweep returns at least one row");
    println!("lowest corrected MSE at max_imfs = {}", best.0);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let series = generate_synthetic(&cfg.synth)?;
    let path = out.join("synthetic.csv");
    write_series_csv(&path, &series, &cfg.data_column)?;
    write_manifest(cfg, "synth", None, out)?;
    println!("wrote {} ({} samples)", path.display(), series.len());
    Ok(())
}

fn cmd_eval(cfg: &CliConfig, ground: &Path, forecast: &Path, out: &Path) -> Result<(), CliError> {
    let g = load_csv(ground, &cfg.data_column)?;
    let f = load_csv(forecast, &cfg.data_column)?;
    let metrics = compute_metrics(g.values(), f.values())?;
    write_eval_metrics_csv(&out.join("eval_metrics.csv"), &metrics)?;
    for (name, value) in metrics.named() {
        println!("{name} = {}", fmt_sig16(value));
    }
    println!("wrote {}", out.join("eval_metrics.csv").display());
    Ok(())
}

/// Ground truth next to the corrected forecast, ready for plotting.
fn write_plot_csv(path: &Path, ground: &[f64], corrected: &[f64]) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "index,ground,corrected")?;
        for i in 0..ground.len() {
            writeln!(w, "{i},{},{}", fmt_sig16(ground[i]), fmt_sig16(corrected[i]))?;
        }
        w.flush()
    };
    go().map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Records what ran and with which resolved settings. The body below the
/// comment header parses back as a `--config` file.
fn write_manifest(
    cfg: &CliConfig,
    command: &str,
    input: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut text = String::new();
    writeln!(text, "# command: {command}").expect("string write");
    if let Some(p) = input {
        writeln!(text, "# input: {}", p.display()).expect("string write");
    }
    writeln!(text, "# out: {}", out.display()).expect("string write");
    text.push('\n');
    text.push_str(&cfg.render());
    let path = out.join("manifest.txt");
    fs::write(&path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn print_metrics_line(scope: &str, m: &ErrorMetrics) {
    println!(
        "{scope:<20} MAE {:.6}  MAPE {:.4}%  MRE {:.6}  MSE {:.6}  RMSE {:.6}",
        m.mae, m.mape, m.mre, m.mse, m.rmse
    );
}
