//! `fh` -- small area estimation under the Fay-Herriot model.
//!
//! Subcommands: `fit` (variance estimation), `intervals` (per-area
//! confidence intervals), `simulate` (Monte Carlo coverage studies from a
//! scenario file), and `reproduce` (the two built-in coverage/length
//! tables). Thread count is controlled by the `FH_THREADS` environment
//! variable; output is identical for any setting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use fayherriot::estimators::{estimate_variance, SearchConfig};
use fayherriot::intervals::{
    c_variant_interval, cox_interval, ct_interval, direct_interval, existence_precondition,
    nas0_interval, nas_estimate, nas_interval_with, remark1_interval, traditional_interval,
};
use fayherriot::simulation::{run_scenario, study1_spec, study2_spec, Study2Pattern};
use fayherriot::{
    AdjustmentFactor, CellMode, FhError, IntervalMethod, IntervalResult, NominalLevel,
    SmallAreaDataset,
};

use fh_cli::config::{load_scenario, parse_methods, ScenarioOverrides};
use fh_cli::render::OutputFormat;
use fh_cli::{ingest, render};

#[derive(Parser)]
#[command(name = "fh")]
#[command(about = "Small area estimation under the Fay-Herriot model", version)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    /// Upper search bound for A (default: 100 * (max D + sample var of y))
    #[arg(long)]
    a_max: Option<f64>,
    /// Absolute tolerance of the variance search
    #[arg(long, default_value_t = 1e-8)]
    abs_tol: f64,
    /// Iteration cap per golden-section refinement
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Bracketing grid size
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// REML truncation floor
    #[arg(long, default_value_t = 0.01)]
    truncation_floor: f64,
}

impl SearchArgs {
    fn to_config(&self) -> SearchConfig {
        SearchConfig {
            a_max: self.a_max,
            abs_tol: self.abs_tol,
            max_iter: self.max_iter,
            grid_points: self.grid_points,
            truncation_floor: self.truncation_floor,
        }
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Estimate the model variance A from a dataset
    Fit {
        /// Dataset CSV (header: area_id,y,D,x1,...,xp)
        #[arg(long)]
        input: PathBuf,
        /// Estimator: reml, nas, remark1, or c (c needs --area)
        #[arg(long, default_value = "reml")]
        method: String,
        /// Area id for the per-area (c)-variant estimator
        #[arg(long)]
        area: Option<String>,
        /// Nominal interval level entering the z-dependent factors
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Write the fit as CSV here instead of text on stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Construct per-area confidence intervals
    Intervals {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated list: direct,cox,t,ct,nas0,nas,c,remark1
        #[arg(long, default_value = "direct,cox,t,ct,nas")]
        methods: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Output path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run a Monte Carlo scenario from a config file
    Simulate {
        /// Scenario config (flat key = value format; see README)
        #[arg(long)]
        scenario: PathBuf,
        /// Override the file's replicate count
        #[arg(long)]
        reps: Option<usize>,
        /// Override the file's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the file's nominal level
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the file's method list
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Re-run the built-in coverage/length studies
    Reproduce {
        /// Which study: table1 (balanced) or table2 (unbalanced)
        #[arg(value_parser = ["table1", "table2"])]
        table: String,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Markdown)]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multi-area cells: average the group or report one area
        #[arg(long, value_enum, default_value_t = CellModeArg::Group)]
        cell_mode: CellModeArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CellModeArg {
    Group,
    Single,
}

impl From<CellModeArg> for CellMode {
    fn from(v: CellModeArg) -> Self {
        match v {
            CellModeArg::Group => CellMode::GroupAverage,
            CellModeArg::Single => CellMode::SingleArea,
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("FH_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: FH_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(1);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let existence = err.chain().any(|c| {
                c.downcast_ref::<FhError>()
                    .is_some_and(|f| matches!(f, FhError::ExistenceCondition(_)))
            });
            ExitCode::from(if existence { 2 } else { 1 })
        }
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Commands::Fit {
            input,
            method,
            area,
            alpha,
            out,
            search,
        } => cmd_fit(&input, &method, area.as_deref(), alpha, &out, search.to_config()),
        Commands::Intervals {
            input,
            methods,
            alpha,
            out,
            format,
            search,
        } => cmd_intervals(&input, &methods, alpha, &out, format, search.to_config()),
        Commands::Simulate {
            scenario,
            reps,
            seed,
            alpha,
            methods,
            out,
            format,
            search,
        } => {
            let overrides = ScenarioOverrides {
                reps,
                seed,
                alpha,
                methods: methods.as_deref().map(parse_methods).transpose()?,
                cell_mode: None,
            };
            let spec = load_scenario(&scenario, &overrides, search.to_config())?;
            let summary = run_scenario(&spec)?;
            let content = match format {
                OutputFormat::Csv => render::summaries_csv(std::slice::from_ref(&summary)),
                OutputFormat::Markdown => {
                    render::summaries_markdown(std::slice::from_ref(&summary))
                }
            };
            emit(&out, &content)
        }
        Commands::Reproduce {
            table,
            reps,
            seed,
            format,
            out,
            cell_mode,
        } => cmd_reproduce(&table, reps, seed, format, &out, cell_mode.into()),
    }
}

fn cmd_fit(
    input: &Path,
    method: &str,
    area: Option<&str>,
    alpha: f64,
    out: &Option<PathBuf>,
    cfg: SearchConfig,
) -> Result<()> {
    let ds = ingest::read_dataset(input)?;
    let level = NominalLevel::new(alpha)?;
    let factor = match method {
        "reml" => AdjustmentFactor::reml(),
        "nas" => AdjustmentFactor::nas(level.z()),
        "remark1" => AdjustmentFactor::remark1(),
        "c" => {
            let id = area.ok_or_else(|| anyhow!("--method c requires --area <area_id>"))?;
            let i = area_index(&ds, id)?;
            AdjustmentFactor::c_variant(&ds, i, level.z())?
        }
        other => {
            return Err(anyhow!(
                "unknown estimator '{other}' (use reml, nas, remark1, or c)"
            ))
        }
    };
    let est = estimate_variance(&ds, &factor, &cfg)?;
    let beta = est.fit(&ds)?.beta_hat;
    if !est.existence_ok {
        eprintln!("warning: existence condition violated for this estimator on this dataset");
    }
    match out {
        Some(path) => std::fs::write(path, render::fit_csv(&est, &beta))
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{}", render::fit_text(&est, &beta));
            Ok(())
        }
    }
}

fn area_index(ds: &SmallAreaDataset, id: &str) -> Result<usize> {
    ds.ids()
        .iter()
        .position(|a| a == id)
        .ok_or_else(|| anyhow!("area id '{id}' not found in dataset"))
}

fn cmd_intervals(
    input: &Path,
    methods: &str,
    alpha: f64,
    out: &Option<PathBuf>,
    format: OutputFormat,
    cfg: SearchConfig,
) -> Result<()> {
    let ds = ingest::read_dataset(input)?;
    let level = NominalLevel::new(alpha)?;
    let methods = parse_methods(methods)?;
    for method in &methods {
        existence_precondition(&ds, *method, &level)?;
    }

    let needs_reml = methods.iter().any(|m| {
        matches!(
            m,
            IntervalMethod::CoxRe | IntervalMethod::TRe | IntervalMethod::CtRe
        )
    });
    let reml_fit = if needs_reml {
        Some(estimate_variance(&ds, &AdjustmentFactor::reml(), &cfg)?.fit(&ds)?)
    } else {
        None
    };
    let needs_nas = methods
        .iter()
        .any(|m| matches!(m, IntervalMethod::Nas | IntervalMethod::Nas0));
    let nas_est = if needs_nas {
        Some(nas_estimate(&ds, &level, &cfg)?)
    } else {
        None
    };

    let mut rows: Vec<IntervalResult> = Vec::new();
    for method in &methods {
        for i in 0..ds.m() {
            let iv = match method {
                IntervalMethod::Direct => direct_interval(&ds, i, &level),
                IntervalMethod::CoxRe => {
                    cox_interval(&ds, reml_fit.as_ref().unwrap(), i, &level)?
                }
                IntervalMethod::TRe => {
                    traditional_interval(&ds, reml_fit.as_ref().unwrap(), i, &level)?
                }
                IntervalMethod::CtRe => {
                    ct_interval(&ds, reml_fit.as_ref().unwrap(), i, &level)?
                }
                IntervalMethod::Nas0 => {
                    nas0_interval(&ds, nas_est.as_ref().unwrap(), i, &level)?
                }
                IntervalMethod::Nas => {
                    nas_interval_with(&ds, nas_est.as_ref().unwrap(), i, &level, &cfg)?
                }
                IntervalMethod::CVariant => c_variant_interval(&ds, i, &level, &cfg)?,
                IntervalMethod::Remark1 => remark1_interval(&ds, i, &level, &cfg)?,
            };
            if iv.existence_warning {
                eprintln!(
                    "warning: existence condition violated for {} on area {}",
                    iv.method.label(),
                    iv.area_id
                );
            }
            rows.push(iv);
        }
    }
    let content = match format {
        OutputFormat::Csv => render::intervals_csv(&rows),
        OutputFormat::Markdown => render::intervals_markdown(&rows),
    };
    emit(out, &content)
}

fn cmd_reproduce(
    table: &str,
    reps: usize,
    seed: u64,
    format: OutputFormat,
    out: &Option<PathBuf>,
    cell_mode: CellMode,
) -> Result<()> {
    let specs = match table {
        "table1" => [0.5, 0.7, 0.9]
            .iter()
            .map(|&b| {
                let mut spec = study1_spec(b);
                spec.n_reps = reps;
                spec.seed = seed;
                spec.cell_mode = cell_mode;
                spec
            })
            .collect::<Vec<_>>(),
        "table2" => [Study2Pattern::A, Study2Pattern::B, Study2Pattern::C]
            .iter()
            .map(|&p| {
                let mut spec = study2_spec(p, p.table_a_true());
                spec.n_reps = reps;
                spec.seed = seed;
                spec.cell_mode = cell_mode;
                spec
            })
            .collect::<Vec<_>>(),
        other => return Err(anyhow!("unknown table '{other}'")),
    };
    let mut summaries = Vec::with_capacity(specs.len());
    for spec in &specs {
        summaries.push(run_scenario(spec)?);
    }
    let content = match format {
        OutputFormat::Csv => render::summaries_csv(&summaries),
        OutputFormat::Markdown => render::summaries_markdown(&summaries),
    };
    emit(out, &content)
}
