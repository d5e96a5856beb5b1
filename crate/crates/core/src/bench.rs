//! Benchmark problems, Latin hypercube sampling, and accuracy metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::global::{emulate_unchecked, GlobalResult, Smoothing, StageConfig, Theta0};
use crate::gp::{kernel_matrix, Prediction};
use crate::kernel::Hyper;
use crate::linalg::condition_number;
use crate::local::{local_design, Criterion, LocalConfig};

/// Nugget used by the benchmark studies; larger than the library default so
/// the local fits smooth slightly rather than interpolate.
pub const BENCH_NUGGET: f64 = 1e-4;

pub const GRAMACY_DOMAIN: [(f64, f64); 2] = [(-2.0, 2.0), (-2.0, 2.0)];

/// `r_w, r, T_u, T_l, H_u, H_l, L, K_w`.
pub const BOREHOLE_DOMAIN: [(f64, f64); 8] = [
    (0.05, 0.15),
    (100.0, 5000.0),
    (63070.0, 115600.0),
    (63.1, 116.0),
    (990.0, 1110.0),
    (700.0, 820.0),
    (1120.0, 1680.0),
    (9855.0, 12045.0),
];

fn gramacy_w(x: f64) -> f64 {
    (-(x - 1.0).powi(2)).exp() + (-0.8 * (x + 1.0).powi(2)).exp() - 0.05 * (8.0 * (x + 0.1)).sin()
}

/// `f(x1, x2) = -w(x1) w(x2)` on `[-2, 2]^2`.
pub fn eval_gramacy2d(x: &[f64]) -> f64 {
    -gramacy_w(x[0]) * gramacy_w(x[1])
}

/// Borehole water flow on raw input scale.
pub fn eval_borehole(x: &[f64]) -> Result<f64> {
    if x.len() != 8 {
        return Err(Error::DimensionMismatch { expected: 8, got: x.len() });
    }
    let [rw, r, tu, tl, hu, hl, l, kw] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]];
    if !(r > rw && rw > 0.0) {
        return Err(Error::invalid(format!("borehole needs r > r_w > 0, got r = {r}, r_w = {rw}")));
    }
    let lr = (r / rw).ln();
    let num = 2.0 * std::f64::consts::PI * tu * (hu - hl);
    let den = lr * (1.0 + 2.0 * l * tu / (lr * rw * rw * kw) + tu / tl);
    Ok(num / den)
}

/// Latin hypercube sample of `n` points in the unit cube of dimension `dim`,
/// row-major.
pub fn lhs_unit(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n * dim];
    let mut perm: Vec<usize> = (0..n).collect();
    for c in 0..dim {
        perm.shuffle(&mut rng);
        for (i, &s) in perm.iter().enumerate() {
            out[i * dim + c] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// Latin hypercube sample mapped onto a box.
pub fn lhs(n: usize, domain: &[(f64, f64)], seed: u64) -> Vec<f64> {
    let dim = domain.len();
    let mut out = lhs_unit(n, dim, seed);
    for row in out.chunks_mut(dim.max(1)) {
        for (v, &(lo, hi)) in row.iter_mut().zip(domain) {
            *v = lo + *v * (hi - lo);
        }
    }
    out
}

/// Maps unit-cube coordinates onto a box.
pub fn from_unit(u: &[f64], domain: &[(f64, f64)]) -> Vec<f64> {
    u.iter().zip(domain).map(|(&v, &(lo, hi))| lo + v * (hi - lo)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    /// `sd(prediction error) / sd(response)` on the test set.
    pub sqrt_one_minus_nse: f64,
    pub coverage95: f64,
    pub mean_sd: f64,
    pub seconds: f64,
}

/// Accuracy of predictive means and Student-t intervals against the truth.
pub fn score(predictions: &[Prediction], truth: &[f64]) -> Result<MetricsReport> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::invalid("scoring needs at least two test points"));
    }
    let nf = n as f64;
    let ybar = truth.iter().sum::<f64>() / nf;
    let sst: f64 = truth.iter().map(|y| (y - ybar).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::invalid("test responses have zero variance"));
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, y)| (p.mean - y).powi(2)).sum();
    let mut covered = 0usize;
    let mut sd_sum = 0.0;
    for (p, &y) in predictions.iter().zip(truth) {
        sd_sum += p.variance.sqrt();
        if p.dof == 0 || p.is_failed() {
            continue;
        }
        let t = StudentsT::new(0.0, 1.0, p.dof as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .inverse_cdf(0.975);
        if (y - p.mean).abs() <= t * p.scale2.sqrt() {
            covered += 1;
        }
    }
    Ok(MetricsReport {
        rmse: (sse / nf).sqrt(),
        sqrt_one_minus_nse: (sse / sst).sqrt(),
        coverage95: covered as f64 / nf,
        mean_sd: sd_sum / nf,
        seconds: 0.0,
    })
}

/// `kappa(K_j) / j^2` for `j = n0..=n` along the design built for `x`.
pub fn condition_trace(x: &[f64], design: &DesignSet, cfg: &LocalConfig, h: Hyper) -> Result<Vec<f64>> {
    let built = local_design(x, design, cfg, h)?;
    let rows = &built.state.indices;
    let mut out = Vec::with_capacity(cfg.n - cfg.n0 + 1);
    for j in cfg.n0..=rows.len() {
        let sub: Vec<f64> = rows[..j].iter().flat_map(|&r| design.x(r).iter().copied()).collect();
        let k = kernel_matrix(crate::kernel::Points::new(&sub, design.dim())?, &h);
        out.push(condition_number(&k) / (j * j) as f64);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    Gramacy2d,
    Borehole,
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Gramacy2d => "gramacy2d",
            Problem::Borehole => "borehole",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Gramacy2d => 2,
            Problem::Borehole => 8,
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gramacy2d" => Ok(Problem::Gramacy2d),
            "borehole" => Ok(Problem::Borehole),
            other => Err(Error::invalid(format!("unknown problem `{other}`"))),
        }
    }
}

/// Comparator names used in the benchmark tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Nn,
    NnNomle,
    NnBig,
    NnBigNomle,
    Alc,
    Alc2,
    AlcNomle,
    Mspe,
    Mspe2,
    MspeNomle,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Nn,
        Method::NnNomle,
        Method::NnBig,
        Method::NnBigNomle,
        Method::Alc,
        Method::Alc2,
        Method::AlcNomle,
        Method::Mspe,
        Method::Mspe2,
        Method::MspeNomle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::NnNomle => "nn.nomle",
            Method::NnBig => "nnbig",
            Method::NnBigNomle => "nnbig.nomle",
            Method::Alc => "alc",
            Method::Alc2 => "alc2",
            Method::AlcNomle => "alc.nomle",
            Method::Mspe => "mspe",
            Method::Mspe2 => "mspe2",
            Method::MspeNomle => "mspe.nomle",
        }
    }

    pub fn criterion(&self) -> Criterion {
        match self {
            Method::Nn | Method::NnNomle | Method::NnBig | Method::NnBigNomle => Criterion::Nn,
            Method::Alc | Method::Alc2 | Method::AlcNomle => Criterion::Alc,
            Method::Mspe | Method::Mspe2 | Method::MspeNomle => Criterion::Mspe,
        }
    }

    pub fn mle(&self) -> bool {
        !matches!(
            self,
            Method::NnNomle | Method::NnBigNomle | Method::AlcNomle | Method::MspeNomle
        )
    }

    pub fn stages(&self) -> usize {
        match self {
            Method::Alc2 | Method::Mspe2 => 2,
            _ => 1,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Method::NnBig | Method::NnBigNomle => 200,
            _ => 50,
        }
    }

    /// The two-stage method whose first stage is this method.
    fn first_stage_of(&self) -> Option<Method> {
        match self {
            Method::Alc => Some(Method::Alc2),
            Method::Mspe => Some(Method::Mspe2),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub problem: Problem,
    /// Training size; for `gramacy2d` the design is a square grid of this many
    /// points per side squared, so it must be a perfect square.
    pub n_train: usize,
    pub n_pred: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub workers: usize,
    pub close: usize,
    pub eta: f64,
}

impl BenchConfig {
    pub fn new(problem: Problem) -> Self {
        let (n_train, n_pred) = match problem {
            Problem::Gramacy2d => (201 * 201, 10_000),
            Problem::Borehole => (4000, 500),
        };
        BenchConfig {
            problem,
            n_train,
            n_pred,
            reps: 1,
            seed: 1,
            methods: vec![Method::Alc, Method::Alc2, Method::Nn],
            workers: 0,
            close: 1000,
            eta: BENCH_NUGGET,
        }
    }

    /// Stage configuration for a method on this problem.
    ///
    /// On `gramacy2d` the MLE methods start from 0.7 and the others use 1,
    /// with smoothing between stages; on `borehole` all methods start from the
    /// default squared-distance quantile and stages are not smoothed.
    pub fn stage_config(&self, m: Method, seed: u64) -> StageConfig {
        let (theta0, smooth) = match self.problem {
            Problem::Gramacy2d => (
                Theta0::Fixed(if m.mle() { 0.7 } else { 1.0 }),
                Smoothing::Knn { k: 12, bandwidth: None },
            ),
            Problem::Borehole => (Theta0::default(), Smoothing::None),
        };
        StageConfig {
            method: m.criterion(),
            n0: 6,
            n: m.size(),
            theta0,
            close: self.close.max(m.size()),
            stages: m.stages(),
            smooth,
            eta: self.eta,
            workers: self.workers,
            mle: m.mle(),
            seed,
            ..StageConfig::default()
        }
    }
}

/// A problem instance: training design plus test inputs and truth.
#[derive(Debug)]
pub struct Instance {
    pub design: DesignSet,
    /// Test inputs on the design's coordinate scale.
    pub test: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Square grid on `[-2, 2]^2` with `side` points per axis.
pub fn gramacy_grid(side: usize) -> Result<DesignSet> {
    if side < 2 {
        return Err(Error::invalid("grid needs at least two points per side"));
    }
    let mut x = Vec::with_capacity(2 * side * side);
    let mut y = Vec::with_capacity(side * side);
    let at = |i: usize| -2.0 + 4.0 * i as f64 / (side - 1) as f64;
    for i in 0..side {
        for j in 0..side {
            let p = [at(i), at(j)];
            x.extend_from_slice(&p);
            y.push(eval_gramacy2d(&p));
        }
    }
    DesignSet::new(x, y, 2)
}

/// Builds one replicate. Borehole inputs are coded to the unit cube; the
/// function is evaluated on the raw scale.
pub fn instance(cfg: &BenchConfig, seed: u64) -> Result<Instance> {
    match cfg.problem {
        Problem::Gramacy2d => {
            let side = (cfg.n_train as f64).sqrt().round() as usize;
            if side * side != cfg.n_train {
                return Err(Error::invalid(format!(
                    "gramacy2d training size {} is not a perfect square",
                    cfg.n_train
                )));
            }
            let design = gramacy_grid(side)?;
            let test = lhs(cfg.n_pred, &GRAMACY_DOMAIN, seed);
            let truth = test.chunks(2).map(eval_gramacy2d).collect();
            Ok(Instance { design, test, truth })
        }
        Problem::Borehole => {
            let total = cfg.n_train + cfg.n_pred;
            let u = lhs_unit(total, 8, seed);
            let y: Vec<f64> = u
                .chunks(8)
                .map(|row| eval_borehole(&from_unit(row, &BOREHOLE_DOMAIN)))
                .collect::<Result<_>>()?;
            let split = cfg.n_train * 8;
            let design = DesignSet::new(u[..split].to_vec(), y[..cfg.n_train].to_vec(), 8)?;
            Ok(Instance {
                design,
                test: u[split..].to_vec(),
                truth: y[cfg.n_train..].to_vec(),
            })
        }
    }
}

/// One metrics row; `rep` is `None` for the mean over replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub problem: Problem,
    pub method: Method,
    pub rep: Option<usize>,
    pub metrics: MetricsReport,
    pub failures: usize,
}

fn stage_time(res: &GlobalResult, upto: usize) -> f64 {
    res.timings
        .iter()
        .filter(|t| {
            t.phase == "theta0"
                || t.phase
                    .strip_prefix("stage")
                    .or_else(|| t.phase.strip_prefix("smooth"))
                    .and_then(|s| s.parse::<usize>().ok())
                    .is_some_and(|s| s <= upto)
        })
        .map(|t| t.seconds)
        .sum()
}

/// Runs the protocol; a one-stage greedy method listed together with its
/// two-stage version is read off the first stage of that run.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 || cfg.methods.is_empty() {
        return Err(Error::invalid("benchmark needs at least one replicate and one method"));
    }
    let mut rows = Vec::new();
    for rep in 0..cfg.reps {
        let seed = cfg.seed.wrapping_add(rep as u64);
        let inst = instance(cfg, seed)?;
        let mut done: Vec<(Method, GlobalResult, f64)> = Vec::new();
        for &m in &cfg.methods {
            if done.iter().any(|(d, ..)| *d == m) {
                continue;
            }
            let shared = m.first_stage_of().filter(|two| cfg.methods.contains(two));
            let run = shared.unwrap_or(m);
            let clock = Instant::now();
            let res = emulate_unchecked(&inst.test, &inst.design, &cfg.stage_config(run, seed))?;
            let total = clock.elapsed().as_secs_f64();
            if let Some(two) = shared {
                let mut one = res.clone();
                one.predictions = res.stages[0].predictions.clone();
                one.status = res.stages[0].status.clone();
                let secs = stage_time(&res, 1);
                done.push((m, one, secs));
                if !done.iter().any(|(d, ..)| *d == two) {
                    done.push((two, res, total));
                }
            } else {
                done.push((m, res, total));
            }
        }
        for &m in &cfg.methods {
            let (_, res, secs) = done.iter().find(|(d, ..)| *d == m).expect("every method ran");
            let mut metrics = score(&res.predictions, &inst.truth)?;
            metrics.seconds = *secs;
            rows.push(BenchRow {
                problem: cfg.problem,
                method: m,
                rep: Some(rep),
                metrics,
                failures: res.failures(),
            });
        }
    }
    for &m in &cfg.methods {
        let reps: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m && r.rep.is_some()).collect();
        let k = reps.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reps.iter().map(|r| f(&r.metrics)).sum::<f64>() / k;
        let metrics = MetricsReport {
            rmse: mean(|r| r.rmse),
            sqrt_one_minus_nse: mean(|r| r.sqrt_one_minus_nse),
            coverage95: mean(|r| r.coverage95),
            mean_sd: mean(|r| r.mean_sd),
            seconds: mean(|r| r.seconds),
        };
        rows.push(BenchRow {
            problem: cfg.problem,
            method: m,
            rep: None,
            metrics,
            failures: reps.iter().map(|r| r.failures).sum(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    #[test]
    fn gramacy_values() {
        let w1 = 1.0 + (-3.2f64).exp() - 0.05 * 8.8f64.sin();
        assert_eq!(eval_gramacy2d(&[1.0, 1.0]), -w1 * w1);
        // Independent coding.
        let w = |x: f64| {
            let a = (-(x - 1.0) * (x - 1.0)).exp();
            let b = (-0.8 * (x + 1.0) * (x + 1.0)).exp();
            a + b - 0.05 * (8.0 * x + 0.8).sin()
        };
        let g = eval_gramacy2d(&[-2.0, -2.0]);
        assert!((g + w(-2.0) * w(-2.0)).abs() <= 1e-14);
    }

    #[test]
    fn borehole_values() {
        let mut mid: Vec<f64> = BOREHOLE_DOMAIN.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let f = eval_borehole(&mid).unwrap();
        let (rw, r, tu, tl, hu, hl, l, kw) = (0.1, 2550.0, 89335.0, 89.55, 1050.0, 760.0, 1400.0, 10950.0);
        let lg = f64::ln(r / rw);
        let expect = 2.0 * std::f64::consts::PI * tu * (hu - hl) / (lg * (1.0 + 2.0 * l * tu / (lg * rw * rw * kw) + tu / tl));
        assert!((f - expect).abs() <= 1e-10 * expect);
        mid[5] = mid[4];
        assert_eq!(eval_borehole(&mid).unwrap(), 0.0);
        mid[1] = 0.01;
        assert!(eval_borehole(&mid).is_err());
        let u = lhs_unit(10_000, 8, 3);
        assert!(u.chunks(8).all(|row| eval_borehole(&from_unit(row, &BOREHOLE_DOMAIN)).unwrap() > 0.0));
    }

    #[test]
    fn lhs_determinism() {
        assert_eq!(lhs(50, &GRAMACY_DOMAIN, 4), lhs(50, &GRAMACY_DOMAIN, 4));
        assert_ne!(lhs(50, &GRAMACY_DOMAIN, 4), lhs(50, &GRAMACY_DOMAIN, 5));
        let one = lhs(1, &GRAMACY_DOMAIN, 9);
        assert!(one.iter().all(|v| (-2.0..=2.0).contains(v)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lhs_one_per_stratum(n in 1usize..200, dim in 1usize..6, seed in any::<u64>()) {
            let u = lhs_unit(n, dim, seed);
            for c in 0..dim {
                let mut seen = vec![0usize; n];
                for i in 0..n {
                    let v = u[i * dim + c];
                    prop_assert!((0.0..1.0).contains(&v));
                    seen[(v * n as f64).floor() as usize] += 1;
                }
                prop_assert!(seen.iter().all(|&s| s == 1));
            }
        }
    }

    fn pred(mean: f64, scale2: f64, dof: usize) -> Prediction {
        Prediction {
            mean,
            scale2,
            dof,
            variance: scale2 * dof as f64 / (dof as f64 - 2.0),
            theta_hat: 1.0,
            n_used: dof,
        }
    }

    #[test]
    fn score_limits() {
        let truth = [1.0, 2.0, 4.0, 3.0];
        let exact: Vec<Prediction> = truth.iter().map(|&y| pred(y, 0.01, 50)).collect();
        let m = score(&exact, &truth).unwrap();
        assert_eq!((m.rmse, m.sqrt_one_minus_nse, m.coverage95), (0.0, 0.0, 1.0));
        let flat: Vec<Prediction> = truth.iter().map(|_| pred(2.5, 0.01, 50)).collect();
        assert!((score(&flat, &truth).unwrap().sqrt_one_minus_nse - 1.0).abs() < 1e-15);
        assert!(score(&flat, &[1.0; 4]).is_err());
        assert!(score(&flat[..1], &truth[..1]).is_err());
    }

    #[test]
    fn score_matches_hand_rolled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
        let preds: Vec<Prediction> = truth
            .iter()
            .map(|y| pred(y + rng.random_range(-0.5..0.5), rng.random_range(0.01..0.2), 50))
            .collect();
        let m = score(&preds, &truth).unwrap();
        let n = truth.len() as f64;
        let mse = preds.iter().zip(&truth).map(|(p, y)| (p.mean - y) * (p.mean - y)).sum::<f64>() / n;
        let ybar = truth.iter().sum::<f64>() / n;
        let sd = (truth.iter().map(|y| (y - ybar) * (y - ybar)).sum::<f64>() / n).sqrt();
        // t(0.975, 50) from tables.
        let t = 2.008_559_112;
        let cov = preds.iter().zip(&truth).filter(|(p, y)| (*y - p.mean).abs() <= t * p.scale2.sqrt()).count() as f64 / n;
        let sdm = preds.iter().map(|p| p.variance.sqrt()).sum::<f64>() / n;
        assert!((m.rmse - mse.sqrt()).abs() <= 1e-12);
        assert!((m.sqrt_one_minus_nse * sd - m.rmse).abs() <= 1e-10);
        assert_eq!(m.coverage95, cov);
        assert!((m.mean_sd - sdm).abs() <= 1e-12);
    }

    #[test]
    fn condition_trace_matches_recomputation() {
        let d = gramacy_grid(41).unwrap();
        let h = Hyper::new(0.3, 1e-6).unwrap();
        let cfg = LocalConfig { n: 30, close: 300, ..LocalConfig::default() };
        let x = [0.13, -0.41];
        let tr = condition_trace(&x, &d, &cfg, h).unwrap();
        assert_eq!(tr.len(), 25);
        assert!(tr[0].is_finite() && tr[0] > 1.0 / 36.0);
        let rows = local_design(&x, &d, &cfg, h).unwrap().state.indices;
        let sub: Vec<f64> = rows[..30].iter().flat_map(|&r| d.x(r).to_vec()).collect();
        let k = kernel_matrix(crate::kernel::Points::new(&sub, 2).unwrap(), &h);
        let kap = condition_number(&k) / 900.0;
        assert!((tr[24] - kap).abs() <= 1e-8 * kap);
    }

    #[test]
    fn instances_and_methods() {
        let mut cfg = BenchConfig::new(Problem::Borehole);
        cfg.n_train = 300;
        cfg.n_pred = 20;
        let inst = instance(&cfg, 1).unwrap();
        assert_eq!((inst.design.len(), inst.truth.len()), (300, 20));
        assert!(inst.design.inputs().iter().all(|v| (0.0..1.0).contains(v)));
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let g = BenchConfig::new(Problem::Gramacy2d);
        assert_eq!(g.stage_config(Method::NnBig, 0).n, 200);
        assert_eq!(g.stage_config(Method::AlcNomle, 0).theta0, Theta0::Fixed(1.0));
        assert_eq!(g.stage_config(Method::Mspe2, 0).stages, 2);
    }

    #[test]
    fn shared_first_stage_matches_standalone() {
        let mut cfg = BenchConfig::new(Problem::Borehole);
        cfg.n_train = 400;
        cfg.n_pred = 30;
        cfg.close = 200;
        cfg.methods = vec![Method::Alc, Method::Alc2];
        let both = run_bench(&cfg).unwrap();
        cfg.methods = vec![Method::Alc];
        let alone = run_bench(&cfg).unwrap();
        assert_eq!(both[0].metrics.rmse, alone[0].metrics.rmse);
        assert_eq!(both.len(), 4);
        assert!(both[3].rep.is_none());
    }
}
