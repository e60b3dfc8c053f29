//! `gfra`: run Monte Carlo experiments, analytic curves, and state-evolution
//! trajectories from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 when `--strict` is set
//! and any sweep point failed the empirical/analytic consistency check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfra_core::analysis::{analytic_csv, analytic_row, AnalyticRow};
use gfra_core::harness::{
    emit, preset_section6, run_experiment, ExperimentSpec, OutputFormat,
};
use gfra_core::model::LargeScaleFading;
use gfra_core::state_evolution::{
    se_fixed_point, SeParams, SeVariant, DEFAULT_SE_MAX_ITER, DEFAULT_SE_SAMPLES, DEFAULT_SE_TOL,
};

#[derive(Parser)]
#[command(name = "gfra", about = "Grant-free random access simulation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a TOML spec file.
    Run {
        spec: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spec's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Exit 3 if any sweep point fails the consistency check.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Closed-form detection error curves at a fixed operating point.
    Analytic {
        /// Large-scale channel gain (linear).
        #[arg(long)]
        beta: f64,
        /// Effective noise variance tau^2 at the operating point.
        #[arg(long)]
        tau_sq: f64,
        /// Antenna counts to evaluate.
        #[arg(long, value_delimiter = ',', required = true)]
        antennas: Vec<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// State-evolution trajectory for the system in a TOML spec file
    /// (evaluated at the spec's base configuration, not the sweep).
    Se {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "full")]
        variant: SeVariantArg,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write the built-in reference experiment spec (TOML).
    Preset {
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SeVariantArg {
    Full,
    Asymptotic,
}

fn write_out(out: &Option<PathBuf>, body: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn configure_pool(workers: Option<usize>) -> Result<(), String> {
    if let Some(w) = workers {
        if w == 0 {
            return Err("--workers must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn load_spec(path: &PathBuf) -> Result<ExperimentSpec, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ExperimentSpec::from_toml_str(&text).map_err(|e| e.to_string())
}

fn run_main(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { spec, seed, trials, workers, strict, output } => {
            configure_pool(workers)?;
            let mut spec = load_spec(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            let records = run_experiment(&spec).map_err(|e| e.to_string())?;
            match &output.out {
                Some(path) => emit(&records, path, output.format.into())
                    .map_err(|e| e.to_string())?,
                None => {
                    let body = match output.format {
                        Format::Csv => gfra_core::harness::records_to_csv(&records),
                        Format::Json => gfra_core::harness::records_to_json(&records)
                            .map_err(|e| e.to_string())?,
                    };
                    print!("{body}");
                }
            }
            if strict && records.iter().any(|r| !r.consistent) {
                eprintln!("consistency check failed at one or more sweep points");
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analytic { beta, tau_sq, antennas, output } => {
            let rows: Vec<AnalyticRow> = antennas
                .iter()
                .map(|&m| analytic_row(m as f64, beta, tau_sq, m))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let body = match output.format {
                Format::Csv => analytic_csv(&rows),
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&rows).map_err(|e| e.to_string())?;
                    s.push('\n');
                    s
                }
            };
            write_out(&output.out, &body)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Se { spec, seed, variant, workers, output } => {
            configure_pool(workers)?;
            let mut spec = load_spec(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let cfg = spec.system.config(spec.seed).map_err(|e| e.to_string())?;
            let fading: LargeScaleFading = spec
                .fading
                .realize(spec.system.n_devices, spec.seed)
                .map_err(|e| e.to_string())?;
            let params = SeParams::from_config(&cfg, &fading).map_err(|e| e.to_string())?;
            let variant = match variant {
                SeVariantArg::Full => SeVariant::Full,
                SeVariantArg::Asymptotic => SeVariant::Asymptotic,
            };
            let traj = se_fixed_point(
                &params,
                variant,
                DEFAULT_SE_TOL.max(if variant == SeVariant::Full { 1e-4 } else { 0.0 }),
                DEFAULT_SE_MAX_ITER,
                DEFAULT_SE_SAMPLES,
                spec.seed,
            )
            .map_err(|e| e.to_string())?;
            let body = match output.format {
                Format::Csv => traj.csv(),
                Format::Json => {
                    let doc = serde_json::json!({
                        "taus": traj.taus,
                        "fixed_point": traj.fixed_point,
                        "converged": traj.converged,
                        "vartheta": traj.vartheta_trace.iter().map(|v| v.0).collect::<Vec<_>>(),
                        "vartheta_se": traj.vartheta_trace.iter().map(|v| v.1).collect::<Vec<_>>(),
                    });
                    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
                    s.push('\n');
                    s
                }
            };
            write_out(&output.out, &body)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { out } => {
            let body = preset_section6().to_toml_string().map_err(|e| e.to_string())?;
            write_out(&out, &body)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_main(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
