//! `lagp`: local approximate GP emulation from the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lagp::bench::{self, BenchConfig, Method, Problem, BENCH_NUGGET};
use lagp::global::{emulate_unchecked, theta0_auto, Smoothing, StageConfig, Theta0};
use lagp::gp::ThetaBounds;
use lagp::io;
use lagp::kernel::{Hyper, DEFAULT_NUGGET};
use lagp::local::{design_trace, Criterion, LocalConfig};
use lagp::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "lagp", version, about = "Local approximate Gaussian process emulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the greedy local design for one predictive location.
    Design(DesignArgs),
    /// Emulate at every row of a predictive grid.
    Predict(PredictArgs),
    /// Run a benchmark study and write its metrics.
    Bench(BenchArgs),
}

#[derive(Args)]
struct LocalArgs {
    /// Local design criterion: nn, nnbig, alc or mspe.
    #[arg(long, default_value = "alc")]
    method: String,
    /// Size of the nearest-neighbour seed design.
    #[arg(long, default_value_t = 6)]
    start: usize,
    /// Final local design size (200 for nnbig unless given).
    #[arg(long)]
    end: Option<usize>,
    /// Nearest rows searched as candidates.
    #[arg(long, default_value_t = 1000)]
    close: usize,
    #[arg(long, default_value_t = DEFAULT_NUGGET)]
    nugget: f64,
    /// Starting lengthscale: `auto` or a positive value.
    #[arg(long, default_value = "auto")]
    theta0: String,
    /// Squared-distance quantile used by `--theta0 auto`.
    #[arg(long, default_value_t = 0.1)]
    theta0_quantile: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl LocalArgs {
    fn criterion(&self) -> Result<(Criterion, usize), String> {
        let (crit, big) = match self.method.as_str() {
            "nnbig" => (Criterion::Nn, true),
            m => (m.parse::<Criterion>().map_err(|e| e.to_string())?, false),
        };
        Ok((crit, self.end.unwrap_or(if big { 200 } else { 50 })))
    }

    fn theta0(&self) -> Result<Theta0, String> {
        if self.theta0 == "auto" {
            if !(self.theta0_quantile > 0.0 && self.theta0_quantile < 1.0) {
                return Err("--theta0-quantile must lie in (0, 1)".into());
            }
            return Ok(Theta0::Auto {
                quantile: self.theta0_quantile,
            });
        }
        match self.theta0.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(Theta0::Fixed(v)),
            _ => Err(format!("--theta0 must be `auto` or a positive number, got `{}`", self.theta0)),
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Design CSV with a header; the last column is the response.
    #[arg(long)]
    design: PathBuf,
    /// Predictive location, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x: Vec<f64>,
    #[command(flatten)]
    local: LocalArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    design: PathBuf,
    /// Predictive locations CSV with a header.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    local: LocalArgs,
    #[arg(long, default_value_t = 2)]
    stages: usize,
    /// Keep every stage at theta0 instead of estimating local lengthscales.
    #[arg(long)]
    no_mle: bool,
    /// Neighbours used to smooth lengthscales between stages; 0 disables.
    #[arg(long, default_value_t = 12)]
    smooth_k: usize,
    /// Fixed smoothing bandwidth in input units; adaptive when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Smooth the last stage's lengthscales and predict at the smoothed values.
    #[arg(long)]
    smooth_final: bool,
    /// With --smooth-final, rebuild the local designs rather than refitting them.
    #[arg(long, requires = "smooth_final")]
    reselect: bool,
    #[arg(long)]
    theta_min: Option<f64>,
    #[arg(long)]
    theta_max: Option<f64>,
    /// Worker threads; 0 uses all available.
    #[arg(long, env = "LAGP_THREADS", default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// gramacy2d or borehole.
    #[arg(long)]
    problem: String,
    /// Comma separated methods.
    #[arg(long, value_delimiter = ',', default_value = "alc,alc2,nn")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Training size (a perfect square for gramacy2d).
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_pred: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    close: usize,
    #[arg(long, default_value_t = BENCH_NUGGET)]
    nugget: f64,
    #[arg(long, env = "LAGP_THREADS", default_value_t = 0)]
    threads: usize,
    /// Leave the seconds column empty so that reruns are byte identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) => EXIT_USAGE,
            Error::FailureThreshold { .. } | Error::DesignStall { .. } | Error::Conditioning { .. } | Error::Numerical(_) => {
                EXIT_FAILURE
            }
            Error::DimensionMismatch { .. } | Error::Parse { .. } | Error::Io { .. } | Error::Csv(_) => EXIT_DATA,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn data<T>(r: lagp::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.code = EXIT_DATA;
        f
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        None => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure {
                code: EXIT_DATA,
                msg: format!("cannot create {}: {e}", p.display()),
            }),
    }
}

fn run_design(a: DesignArgs) -> CmdResult {
    let (method, n) = a.local.criterion().map_err(Failure::usage)?;
    let theta0 = a.local.theta0().map_err(Failure::usage)?;
    let design = data(io::read_design(&a.design))?;
    if a.x.len() != design.dim() {
        return Err(Failure {
            code: EXIT_DATA,
            msg: format!("--x has {} coordinates but the design has {} inputs", a.x.len(), design.dim()),
        });
    }
    let cfg = LocalConfig {
        method,
        n0: a.local.start,
        n,
        close: a.local.close.min(design.len()),
    };
    cfg.validate()?;
    let theta = match theta0 {
        Theta0::Fixed(t) => t,
        Theta0::Auto { quantile } => theta0_auto(&design, quantile, a.local.seed)?,
    };
    let h = Hyper::new(theta, a.local.nugget)?;
    let (res, steps) = design_trace(&a.x, &design, &cfg, h);
    let mut w = output(a.out.as_deref())?;
    io::write_trace(&mut w, &design, &steps, None)?;
    w.flush().map_err(|e| Failure {
        code: EXIT_DATA,
        msg: e.to_string(),
    })?;
    res.map_err(|e| {
        let mut f = Failure::from(e);
        f.msg = format!("{} (partial trace of {} rows written)", f.msg, steps.len());
        f
    })
}

fn run_predict(a: PredictArgs) -> CmdResult {
    let (method, n) = a.local.criterion().map_err(Failure::usage)?;
    let theta0 = a.local.theta0().map_err(Failure::usage)?;
    let theta_bounds = match (a.theta_min, a.theta_max) {
        (None, None) => None,
        (Some(lo), Some(hi)) => Some(ThetaBounds::new(lo, hi).map_err(|e| Failure::usage(e.to_string()))?),
        _ => return Err(Failure::usage("--theta-min and --theta-max must be given together")),
    };
    let smooth = match (a.smooth_k, a.bandwidth) {
        (0, _) => Smoothing::None,
        (k, bandwidth) => Smoothing::Knn { k, bandwidth },
    };
    let design = data(io::read_design(&a.design))?;
    let (grid, dim, names) = data(io::read_points(&a.grid))?;
    if dim != design.dim() {
        return Err(Failure {
            code: EXIT_DATA,
            msg: format!("grid has {dim} columns but the design has {} inputs", design.dim()),
        });
    }
    let cfg = StageConfig {
        method,
        n0: a.local.start,
        n,
        theta0,
        close: a.local.close,
        stages: a.stages,
        smooth,
        smooth_final: a.smooth_final,
        reselect_after_smooth: a.reselect,
        eta: a.local.nugget,
        workers: a.threads,
        mle: !a.no_mle,
        theta_bounds,
        seed: a.local.seed,
        ..StageConfig::default()
    };
    cfg.validate(design.len())?;
    let clock = Instant::now();
    let res = emulate_unchecked(&grid, &design, &cfg)?;
    let rows = io::prediction_rows(&grid, dim, &res);
    let mut w = output(a.out.as_deref())?;
    io::write_predictions(&mut w, &rows, Some(&names))?;
    w.flush().map_err(|e| Failure {
        code: EXIT_DATA,
        msg: e.to_string(),
    })?;
    eprintln!(
        "{} locations, {} failed, {} workers, {:.2}s",
        rows.len(),
        res.failures(),
        res.workers,
        clock.elapsed().as_secs_f64()
    );
    res.check_failures()?;
    Ok(())
}

fn run_bench(a: BenchArgs) -> CmdResult {
    let problem: Problem = a.problem.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let mut cfg = BenchConfig::new(problem);
    cfg.methods = methods;
    cfg.reps = a.reps;
    cfg.seed = a.seed;
    cfg.close = a.close;
    cfg.eta = a.nugget;
    cfg.workers = a.threads;
    if let Some(n) = a.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = a.n_pred {
        cfg.n_pred = n;
    }
    let rows = bench::run_bench(&cfg)?;
    let mut w = output(a.out.as_deref())?;
    io::write_metrics(&mut w, &rows, !a.no_timing)?;
    w.flush().map_err(|e| Failure {
        code: EXIT_DATA,
        msg: e.to_string(),
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Design(a) => run_design(a),
        Command::Predict(a) => run_predict(a),
        Command::Bench(a) => run_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lagp: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
