//! Global emulation over a grid of predictive locations.
//!
//! Each stage builds a local design per location at that location's
//! lengthscale, then re-estimates the lengthscale by local MLE. Between stages
//! the estimated field can be smoothed spatially, and the next stage designs
//! at the smoothed values. Locations are processed in static blocks by scoped
//! threads; every location is a pure function of its inputs, so results do
//! not depend on the worker count.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::gp::{predict, GpFit, Prediction, ThetaBounds, DEFAULT_MLE_MAX_ITER, DEFAULT_MLE_TOL};
use crate::kernel::{sq_dist, Hyper, DEFAULT_NUGGET};
use crate::local::{local_design, local_mle, Criterion, LocalConfig};

/// Fraction of failed locations above which a run is an error.
pub const FAILURE_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Theta0 {
    /// Quantile of pairwise squared distances in the design inputs.
    Auto { quantile: f64 },
    Fixed(f64),
}

impl Default for Theta0 {
    fn default() -> Self {
        Theta0::Auto { quantile: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    None,
    /// Gaussian-weighted average of log-lengthscales over the `k` nearest
    /// locations. Without a bandwidth, the distance to the farthest of the
    /// `k` neighbours is used per location.
    Knn { k: usize, bandwidth: Option<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub method: Criterion,
    pub n0: usize,
    pub n: usize,
    pub theta0: Theta0,
    pub close: usize,
    pub stages: usize,
    /// Applied between stages.
    pub smooth: Smoothing,
    /// Also smooth after the last stage and predict at the smoothed values.
    pub smooth_final: bool,
    /// With `smooth_final`, rebuild the local designs at the smoothed values
    /// instead of only refactorizing the existing ones.
    pub reselect_after_smooth: bool,
    pub eta: f64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Estimate local lengthscales; off means every stage predicts at theta0.
    pub mle: bool,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    /// Lengthscale search interval; `None` uses `[1e-3, 1e3]` times theta0.
    pub theta_bounds: Option<ThetaBounds>,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            method: Criterion::Alc,
            n0: 6,
            n: 50,
            theta0: Theta0::default(),
            close: 1000,
            stages: 2,
            smooth: Smoothing::Knn { k: 12, bandwidth: None },
            smooth_final: false,
            reselect_after_smooth: false,
            eta: DEFAULT_NUGGET,
            workers: 0,
            mle: true,
            mle_tol: DEFAULT_MLE_TOL,
            mle_max_iter: DEFAULT_MLE_MAX_ITER,
            theta_bounds: None,
            seed: 0,
        }
    }
}

impl StageConfig {
    pub fn local(&self, n_design: usize) -> LocalConfig {
        LocalConfig {
            method: self.method,
            n0: self.n0,
            n: self.n,
            close: self.close.min(n_design),
        }
    }

    pub fn validate(&self, n_design: usize) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::invalid("at least one stage is required"));
        }
        if self.n > n_design {
            return Err(Error::invalid(format!(
                "local design size {} exceeds the {} design rows",
                self.n, n_design
            )));
        }
        self.local(n_design).validate()?;
        Hyper::new(1.0, self.eta)?;
        match self.theta0 {
            Theta0::Auto { quantile } if !(quantile > 0.0 && quantile < 1.0) => {
                return Err(Error::invalid(format!("theta0 quantile {quantile} not in (0, 1)")))
            }
            Theta0::Fixed(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::invalid(format!("theta0 {t} must be positive")))
            }
            _ => {}
        }
        if let Smoothing::Knn { k, bandwidth } = self.smooth {
            if k == 0 {
                return Err(Error::invalid("smoothing needs k >= 1"));
            }
            if let Some(b) = bandwidth {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::invalid(format!("smoothing bandwidth {b} must be positive")));
                }
            }
        }
        if let Some(b) = self.theta_bounds {
            ThetaBounds::new(b.lo, b.hi)?;
        }
        if !(self.mle_tol > 0.0) || self.mle_max_iter == 0 {
            return Err(Error::invalid("mle tolerance and iteration limit must be positive"));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

/// Quantile (type 7) of pairwise squared distances over a uniform subsample
/// of at most 1000 rows.
pub fn theta0_auto(design: &DesignSet, quantile: f64, seed: u64) -> Result<f64> {
    const MAX_SUB: usize = 1000;
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(format!("quantile {quantile} not in (0, 1)")));
    }
    let n = design.len();
    if n < 2 {
        return Err(Error::invalid("need at least two design rows"));
    }
    let rows: Vec<usize> = if n <= MAX_SUB {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = rand::seq::index::sample(&mut rng, n, MAX_SUB).into_vec();
        s.sort_unstable();
        s
    };
    let mut d2 = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &ra) in rows.iter().enumerate() {
        for &rb in &rows[..a] {
            d2.push(sq_dist(design.x(ra), design.x(rb)));
        }
    }
    let q = quantile_type7(&mut d2, quantile);
    if !(q > 0.0) {
        return Err(Error::invalid("degenerate design: squared-distance quantile is zero"));
    }
    Ok(q)
}

/// Linear-interpolation sample quantile; reorders `v`.
pub fn quantile_type7(v: &mut [f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let (_, lo_val, rest) = v.select_nth_unstable_by(lo, |a, b| a.total_cmp(b));
    let lo_val = *lo_val;
    if rest.is_empty() || h == lo as f64 {
        return lo_val;
    }
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + (h - lo as f64) * (hi_val - lo_val)
}

/// Smooths a lengthscale field over the predictive locations `grid`
/// (row-major, `dim` columns). Non-finite inputs are ignored; a location whose
/// neighbourhood has no finite values keeps its input.
pub fn smooth_theta(grid: &[f64], dim: usize, thetas: &[f64], k: usize, bandwidth: Option<f64>) -> Result<Vec<f64>> {
    let m = thetas.len();
    if dim == 0 || grid.len() != m * dim {
        return Err(Error::DimensionMismatch {
            expected: m * dim,
            got: grid.len(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let k = k.clamp(1, m);
    if k == 1 {
        return Ok(thetas.to_vec());
    }
    let index = DesignSet::new(grid.to_vec(), vec![0.0; m], dim)?;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let nb = index.nearest(index.x(i), k)?;
        let b2 = match bandwidth {
            Some(b) => b * b,
            None => nb.iter().map(|n| n.d2).fold(0.0, f64::max),
        };
        let (mut num, mut den) = (0.0, 0.0);
        for n in &nb {
            let t = thetas[n.row];
            if !(t > 0.0 && t.is_finite()) {
                continue;
            }
            let w = if b2 > 0.0 { (-0.5 * n.d2 / b2).exp() } else { 1.0 };
            num += w * t.ln();
            den += w;
        }
        out.push(if den > 0.0 { (num / den).exp() } else { thetas[i] });
    }
    Ok(out)
}

/// Per-location outcome flags.
#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Ok,
    /// The lengthscale estimate hit a bound.
    Boundary,
    /// MLE failed; the prediction uses the design lengthscale.
    MleFallback,
    /// No prediction; carries the error text.
    Failed(String),
}

impl Status {
    pub fn code(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Boundary => "boundary",
            Status::MleFallback => "mle_fallback",
            Status::Failed(_) => "failed",
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Status::Failed(_))
    }
}

/// Wall time of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTime {
    pub phase: String,
    pub seconds: f64,
}

/// One stage over the whole grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    /// Lengthscale each local design was built at.
    pub theta_design: Vec<f64>,
    /// Lengthscale after MLE (equal to `theta_design` without MLE).
    pub theta_hat: Vec<f64>,
    pub iterations: Vec<usize>,
    pub predictions: Vec<Prediction>,
    pub status: Vec<Status>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalResult {
    /// Final predictions in grid order.
    pub predictions: Vec<Prediction>,
    pub status: Vec<Status>,
    pub stages: Vec<StageResult>,
    pub theta0: f64,
    pub timings: Vec<PhaseTime>,
    pub workers: usize,
}

impl GlobalResult {
    pub fn failures(&self) -> usize {
        self.status.iter().filter(|s| s.is_failed()).count()
    }

    /// Errors when more than 1% of locations failed.
    pub fn check_failures(&self) -> Result<()> {
        let failed = self.failures();
        let total = self.predictions.len();
        if failed as f64 > FAILURE_FRACTION * total as f64 {
            Err(Error::FailureThreshold { failed, total })
        } else {
            Ok(())
        }
    }

    /// Final lengthscale per location.
    pub fn theta_hat(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.theta_hat).collect()
    }
}

struct LocationOut {
    indices: Vec<usize>,
    theta_hat: f64,
    iters: usize,
    prediction: Prediction,
    status: Status,
}

fn failed(theta: f64, e: Error) -> LocationOut {
    LocationOut {
        indices: Vec::new(),
        theta_hat: f64::NAN,
        iters: 0,
        prediction: Prediction::failed(theta),
        status: Status::Failed(e.to_string()),
    }
}

fn run_location(x: &[f64], design: &DesignSet, cfg: &StageConfig, theta: f64, bounds: ThetaBounds) -> LocationOut {
    let h = match Hyper::new(theta, cfg.eta) {
        Ok(h) => h,
        Err(e) => return failed(theta, e),
    };
    let fit = match local_design(x, design, &cfg.local(design.len()), h) {
        Ok(d) => d.into_fit(),
        Err(e) => return failed(theta, e),
    };
    let indices = fit.indices.clone();
    let (fit, theta_hat, iters, status) = if cfg.mle {
        match local_mle(&fit, bounds, cfg.mle_tol, cfg.mle_max_iter) {
            Ok((refit, out)) => {
                let st = if out.boundary.is_some() { Status::Boundary } else { Status::Ok };
                (refit, out.theta, out.iters, st)
            }
            Err(_) => (fit, theta, 0, Status::MleFallback),
        }
    } else {
        (fit, theta, 0, Status::Ok)
    };
    match predict(&fit, x) {
        Ok(prediction) => LocationOut {
            indices,
            theta_hat,
            iters,
            prediction,
            status,
        },
        Err(e) => failed(theta, e),
    }
}

/// Refactorizes an existing local design at `theta` and predicts.
fn refit_location(x: &[f64], design: &DesignSet, indices: &[usize], theta: f64, eta: f64) -> Result<Prediction> {
    let fit = GpFit::from_design(design, indices, Hyper::new(theta, eta)?)?;
    predict(&fit, x)
}

/// Applies `f` to every location on `workers` threads over static blocks.
fn parallel_map<T: Send>(m: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, m.max(1));
    if workers == 1 {
        return (0..m).map(&f).collect();
    }
    let block = m.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * block).min(m)..((w + 1) * block).min(m);
                s.spawn(move || range.map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Runs all stages without applying the failure threshold.
pub fn emulate_unchecked(grid: &[f64], design: &DesignSet, cfg: &StageConfig) -> Result<GlobalResult> {
    let dim = design.dim();
    if grid.is_empty() || grid.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "predictive grid of {} values is not a nonempty multiple of dimension {dim}",
            grid.len()
        )));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite predictive coordinate {v}")));
    }
    cfg.validate(design.len())?;
    let m = grid.len() / dim;
    let workers = cfg.worker_count();
    let row = |i: usize| &grid[i * dim..(i + 1) * dim];
    let mut timings = Vec::new();

    let clock = Instant::now();
    let theta0 = match cfg.theta0 {
        Theta0::Auto { quantile } => theta0_auto(design, quantile, cfg.seed)?,
        Theta0::Fixed(t) => t,
    };
    let bounds = cfg.theta_bounds.unwrap_or(ThetaBounds::around(theta0));
    timings.push(PhaseTime {
        phase: "theta0".into(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let mut theta_x = vec![theta0; m];
    let mut stages = Vec::with_capacity(cfg.stages);
    let mut last_indices = Vec::new();
    for s in 0..cfg.stages {
        if s > 0 {
            if let Smoothing::Knn { k, bandwidth } = cfg.smooth {
                let clock = Instant::now();
                theta_x = smooth_theta(grid, dim, &theta_x, k, bandwidth)?;
                timings.push(PhaseTime {
                    phase: format!("smooth{s}"),
                    seconds: clock.elapsed().as_secs_f64(),
                });
            }
        }
        let clock = Instant::now();
        let outs = parallel_map(m, workers, |i| run_location(row(i), design, cfg, theta_x[i], bounds));
        timings.push(PhaseTime {
            phase: format!("stage{}", s + 1),
            seconds: clock.elapsed().as_secs_f64(),
        });
        let mut stage = StageResult {
            theta_design: theta_x.clone(),
            theta_hat: Vec::with_capacity(m),
            iterations: Vec::with_capacity(m),
            predictions: Vec::with_capacity(m),
            status: Vec::with_capacity(m),
        };
        last_indices = Vec::with_capacity(m);
        for (i, o) in outs.into_iter().enumerate() {
            // A failed location keeps its design lengthscale for later stages.
            theta_x[i] = if o.theta_hat.is_finite() { o.theta_hat } else { theta_x[i] };
            stage.theta_hat.push(o.theta_hat);
            stage.iterations.push(o.iters);
            stage.predictions.push(o.prediction);
            stage.status.push(o.status);
            last_indices.push(o.indices);
        }
        stages.push(stage);
    }

    let last = stages.last().expect("at least one stage");
    let mut predictions = last.predictions.clone();
    let mut status = last.status.clone();
    if let (true, Smoothing::Knn { k, bandwidth }) = (cfg.smooth_final, cfg.smooth) {
        let clock = Instant::now();
        let smoothed = smooth_theta(grid, dim, &theta_x, k, bandwidth)?;
        let no_mle = StageConfig { mle: false, ..cfg.clone() };
        let outs = parallel_map(m, workers, |i| {
            if status[i].is_failed() {
                return (predictions[i], status[i].clone());
            }
            if cfg.reselect_after_smooth {
                let o = run_location(row(i), design, &no_mle, smoothed[i], bounds);
                (o.prediction, if o.status.is_failed() { o.status } else { status[i].clone() })
            } else {
                match refit_location(row(i), design, &last_indices[i], smoothed[i], cfg.eta) {
                    Ok(p) => (p, status[i].clone()),
                    Err(e) => (Prediction::failed(smoothed[i]), Status::Failed(e.to_string())),
                }
            }
        });
        (predictions, status) = outs.into_iter().unzip();
        timings.push(PhaseTime {
            phase: "smooth_final".into(),
            seconds: clock.elapsed().as_secs_f64(),
        });
    }

    Ok(GlobalResult {
        predictions,
        status,
        stages,
        theta0,
        timings,
        workers,
    })
}

/// Multi-stage global emulation; errors when more than 1% of locations fail.
pub fn emulate(grid: &[f64], design: &DesignSet, cfg: &StageConfig) -> Result<GlobalResult> {
    let res = emulate_unchecked(grid, design, cfg)?;
    res.check_failures()?;
    Ok(res)
}
