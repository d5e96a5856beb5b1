//! Batch Gaussian-process machinery on a fixed sub-design.
//!
//! With the reference prior on the scale, the marginal likelihood is
//!
//! ```text
//! log p(Y|K) = log Gamma(j/2) - (j/2) log(2 pi) - (1/2) log|K| - (j/2) log(psi/2),  psi = Y'K^-1 Y
//! ```
//!
//! and the predictive distribution at `x` is Student-t with `j` degrees of
//! freedom, mean `k'K^-1 Y` and scale `psi (K(x,x) - k'K^-1 k) / j`.

use statrs::function::gamma::ln_gamma;

use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::kernel::{corr_d2, corr_dtheta_d2, cross_corr_dtheta, cross_corr_vector, sq_dist, Hyper, Points};
use crate::linalg::{dot, spd_build, trace_product, SpdInverse, SquareMatrix};

/// Bracket values this far below zero are treated as a conditioning failure
/// rather than roundoff.
const BRACKET_TOL: f64 = 1e-10;

/// Correlation matrix of `pts` (nugget on the diagonal only).
pub fn kernel_matrix(pts: Points<'_>, h: &Hyper) -> SquareMatrix {
    let n = pts.len();
    let mut k = SquareMatrix::zeros(n);
    for i in 0..n {
        k[(i, i)] = h.kself();
        for j in 0..i {
            let v = corr_d2(sq_dist(pts.row(i), pts.row(j)), h.theta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Element-wise first and second lengthscale derivatives of [`kernel_matrix`].
pub fn kernel_dtheta_matrices(pts: Points<'_>, h: &Hyper) -> (SquareMatrix, SquareMatrix) {
    let n = pts.len();
    let mut dk = SquareMatrix::zeros(n);
    let mut d2k = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = corr_dtheta_d2(sq_dist(pts.row(i), pts.row(j)), h.theta);
            dk[(i, j)] = a;
            dk[(j, i)] = a;
            d2k[(i, j)] = b;
            d2k[(j, i)] = b;
        }
    }
    (dk, d2k)
}

/// A GP conditioned on a sub-design at fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub indices: Vec<usize>,
    pub inv: SpdInverse,
    pub kinv_y: Vec<f64>,
    pub psi: f64,
    pub h: Hyper,
    pub x_sub: Vec<f64>,
    pub y_sub: Vec<f64>,
    pub dim: usize,
}

impl GpFit {
    pub fn new(indices: Vec<usize>, x_sub: Vec<f64>, y_sub: Vec<f64>, dim: usize, h: Hyper) -> Result<Self> {
        h.validate()?;
        let pts = Points::new(&x_sub, dim)?;
        if pts.len() != y_sub.len() || indices.len() != y_sub.len() {
            return Err(Error::DimensionMismatch {
                expected: pts.len(),
                got: y_sub.len(),
            });
        }
        let inv = spd_build(&kernel_matrix(pts, &h))?;
        let kinv_y = inv.solve(&y_sub);
        let psi = dot(&y_sub, &kinv_y);
        Ok(GpFit {
            indices,
            inv,
            kinv_y,
            psi,
            h,
            x_sub,
            y_sub,
            dim,
        })
    }

    /// Fit on the given rows of a design.
    pub fn from_design(design: &DesignSet, indices: &[usize], h: Hyper) -> Result<Self> {
        let mut x_sub = Vec::with_capacity(indices.len() * design.dim());
        let mut y_sub = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= design.len() {
                return Err(Error::invalid(format!("row {i} out of range")));
            }
            x_sub.extend_from_slice(design.x(i));
            y_sub.push(design.y(i));
        }
        Self::new(indices.to_vec(), x_sub, y_sub, design.dim(), h)
    }

    /// Same sub-design, new lengthscale (one O(j^3) rebuild).
    pub fn refit(&self, theta: f64) -> Result<Self> {
        Self::new(
            self.indices.clone(),
            self.x_sub.clone(),
            self.y_sub.clone(),
            self.dim,
            self.h.with_theta(theta),
        )
    }

    pub fn len(&self) -> usize {
        self.y_sub.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_sub.is_empty()
    }

    pub fn points(&self) -> Points<'_> {
        Points::new(&self.x_sub, self.dim).expect("validated at construction")
    }

    /// Lengthscale derivative quantities shared by every derivative evaluation.
    pub fn derivatives(&self) -> FitDerivatives {
        let (dk, d2k) = kernel_dtheta_matrices(self.points(), &self.h);
        let w = &self.kinv_y;
        let dk_w = dk.mul_vec(w);
        let d2k_w = d2k.mul_vec(w);
        let kinv_dk_w = self.inv.solve(&dk_w);
        // psi' = -w'K'w,  psi'' = -w'K''w + 2 (K'w)'K^-1 (K'w)
        let dpsi = -dot(w, &dk_w);
        let d2psi = -dot(w, &d2k_w) + 2.0 * dot(&dk_w, &kinv_dk_w);
        FitDerivatives {
            dk,
            d2k,
            dk_w,
            d2k_w,
            kinv_dk_w,
            dpsi,
            d2psi,
        }
    }
}

/// Derivative matrices and products for one [`GpFit`].
#[derive(Clone, Debug)]
pub struct FitDerivatives {
    pub dk: SquareMatrix,
    pub d2k: SquareMatrix,
    /// `K' w` with `w = K^-1 Y`.
    pub dk_w: Vec<f64>,
    pub d2k_w: Vec<f64>,
    /// `K^-1 K' w` (equals `-dw/dtheta`).
    pub kinv_dk_w: Vec<f64>,
    pub dpsi: f64,
    pub d2psi: f64,
}

/// Student-t predictive summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Student-t scale.
    pub scale2: f64,
    pub dof: usize,
    /// `scale2 * dof / (dof - 2)`; infinite for `dof <= 2`.
    pub variance: f64,
    pub theta_hat: f64,
    pub n_used: usize,
}

impl Prediction {
    /// Placeholder for a failed location.
    pub fn failed(theta: f64) -> Self {
        Prediction {
            mean: f64::NAN,
            scale2: f64::NAN,
            dof: 0,
            variance: f64::NAN,
            theta_hat: theta,
            n_used: 0,
        }
    }

    pub fn is_failed(&self) -> bool {
        !self.mean.is_finite()
    }
}

pub fn log_marginal(fit: &GpFit) -> Result<f64> {
    let j = fit.len() as f64;
    if !(fit.psi > 0.0) || !fit.psi.is_finite() {
        return Err(Error::Numerical(format!("psi = {} is not positive", fit.psi)));
    }
    Ok(ln_gamma(j / 2.0)
        - 0.5 * j * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * fit.inv.logdet()
        - 0.5 * j * (fit.psi / 2.0).ln())
}

/// First and second lengthscale derivatives of [`log_marginal`].
pub fn loglik_dtheta(fit: &GpFit) -> Result<(f64, f64)> {
    if fit.len() < 2 {
        return Err(Error::invalid("likelihood derivatives need at least 2 points"));
    }
    if !(fit.psi > 0.0) {
        return Err(Error::Numerical(format!("psi = {} is not positive", fit.psi)));
    }
    let d = fit.derivatives();
    Ok(loglik_dtheta_with(fit, &d))
}

fn loglik_dtheta_with(fit: &GpFit, d: &FitDerivatives) -> (f64, f64) {
    let j = fit.len() as f64;
    let kinv = fit.inv.kinv();
    let a = kinv.matmul(&d.dk); // K^-1 K'
    let tr_a = (0..a.dim()).map(|i| a[(i, i)]).sum::<f64>();
    let tr_kinv_d2k = trace_product(kinv, &d.d2k).expect("equal dims");
    let tr_aa = trace_product(&a, &a).expect("equal dims");
    let q = -d.dpsi; // w'K'w
    let psi = fit.psi;
    let l1 = -0.5 * tr_a + 0.5 * j * q / psi;
    let l2 = -0.5 * (tr_kinv_d2k - tr_aa) - 0.5 * j * (d.d2psi / psi - d.dpsi * d.dpsi / (psi * psi));
    (l1, l2)
}

/// Observed information `-l''`.
pub fn fisher_info(fit: &GpFit) -> Result<f64> {
    Ok(-loglik_dtheta(fit)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ThetaBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("invalid lengthscale bounds [{lo}, {hi}]")));
        }
        Ok(ThetaBounds { lo, hi })
    }

    /// `[1e-3 q, 1e3 q]` around a reference lengthscale `q`.
    pub fn around(q: f64) -> Self {
        ThetaBounds { lo: 1e-3 * q, hi: 1e3 * q }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundHit {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOutcome {
    pub theta: f64,
    pub iters: usize,
    pub converged: bool,
    pub boundary: Option<BoundHit>,
}

pub const DEFAULT_MLE_TOL: f64 = 1e-5;
pub const DEFAULT_MLE_MAX_ITER: usize = 50;

/// Maximizes the marginal likelihood over the lengthscale by safeguarded
/// Newton iterations.
///
/// A Newton step is taken when `l'' < 0` and the step stays strictly inside
/// the current bracket; otherwise a golden-ratio step is taken in log-theta
/// toward the side indicated by the sign of `l'`.
pub fn mle_theta(fit: &GpFit, bounds: ThetaBounds, tol: f64, max_iter: usize) -> Result<MleOutcome> {
    const GOLD: f64 = 0.381_966_011_250_105;
    let ThetaBounds { lo, hi } = bounds;
    let start = fit.h.theta;
    if !(lo > 0.0) || !(lo..=hi).contains(&start) {
        return Err(Error::invalid(format!(
            "starting lengthscale {start} outside bounds [{lo}, {hi}]"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let mut theta = start;
    let mut best: Option<(f64, f64)> = None; // (loglik, theta)
    let mut scale = None;
    let mut iters = 0;
    let mut current = fit.clone();

    while iters < max_iter {
        iters += 1;
        let (l1, l2) = match loglik_dtheta(&current) {
            Ok(v) => v,
            Err(e) if iters == 1 => return Err(e),
            Err(_) => (f64::NAN, f64::NAN),
        };
        if !l1.is_finite() {
            // Treat as a wall: pull back toward the last good point.
            if theta > best.map_or(start, |b| b.1) {
                b = theta;
            } else {
                a = theta;
            }
            let anchor = best.map_or(start, |b| b.1);
            theta = (anchor * theta).sqrt();
            current = refit_or_err(fit, theta)?;
            continue;
        }
        if let Ok(ll) = log_marginal(&current) {
            if best.is_none_or(|(bl, _)| ll > bl) {
                best = Some((ll, theta));
            }
        }
        let scale = *scale.get_or_insert(1.0 + l1.abs());
        if l1.abs() <= tol * scale {
            return Ok(MleOutcome { theta, iters, converged: true, boundary: None });
        }
        if theta >= hi && l1 > 0.0 {
            return Ok(MleOutcome { theta: hi, iters, converged: true, boundary: Some(BoundHit::Upper) });
        }
        if theta <= lo && l1 < 0.0 {
            return Ok(MleOutcome { theta: lo, iters, converged: true, boundary: Some(BoundHit::Lower) });
        }
        if l1 > 0.0 {
            a = theta;
        } else {
            b = theta;
        }
        let newton = if l2 < 0.0 { theta - l1 / l2 } else { f64::NAN };
        let next = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            // Golden step in log space, capped at one decade.
            let target = if l1 > 0.0 { b } else { a };
            let step = (GOLD * (target / theta).ln()).clamp(-std::f64::consts::LN_10, std::f64::consts::LN_10);
            let mut t = theta * step.exp();
            // Jump onto a hard bound when the golden step lands close to it.
            if l1 > 0.0 && (b - t) <= tol * b {
                t = b;
            } else if l1 < 0.0 && (t - a) <= tol * a {
                t = a;
            }
            t
        };
        if (next - theta).abs() <= tol * theta {
            return Ok(MleOutcome { theta: next, iters, converged: true, boundary: None });
        }
        theta = next;
        current = match fit.refit(theta) {
            Ok(f) => f,
            Err(_) => {
                // Bordered system went singular; shrink toward the good side.
                let anchor = best.map_or(start, |b| b.1);
                if theta > anchor {
                    b = theta;
                } else {
                    a = theta;
                }
                theta = (anchor * theta).sqrt();
                refit_or_err(fit, theta)?
            }
        };
    }
    Ok(MleOutcome {
        theta: best.map_or(theta, |b| b.1),
        iters,
        converged: false,
        boundary: None,
    })
}

fn refit_or_err(fit: &GpFit, theta: f64) -> Result<GpFit> {
    fit.refit(theta)
}

/// Student-t predictive equations at `x`.
pub fn predict(fit: &GpFit, x: &[f64]) -> Result<Prediction> {
    let j = fit.len();
    if j == 0 {
        return Err(Error::invalid("cannot predict from an empty design"));
    }
    let k = cross_corr_vector(x, fit.points(), &fit.h)?;
    let mean = dot(&k, &fit.kinv_y);
    let bracket = bracket(fit, &k)?;
    let scale2 = fit.psi * bracket / j as f64;
    let variance = if j > 2 {
        scale2 * j as f64 / (j as f64 - 2.0)
    } else {
        f64::INFINITY
    };
    Ok(Prediction {
        mean,
        scale2,
        dof: j,
        variance,
        theta_hat: fit.h.theta,
        n_used: j,
    })
}

fn bracket(fit: &GpFit, k: &[f64]) -> Result<f64> {
    let kinv = fit.inv.kinv();
    let v = fit.h.kself() - kinv.quad(k, k);
    if v < -BRACKET_TOL {
        // Forward error bound of the quadratic form.
        let j = k.len();
        let mut s = 0.0;
        for a in 0..j {
            s += k[a].abs() * kinv.row(a).iter().zip(k).map(|(m, kb)| (m * kb).abs()).sum::<f64>();
        }
        if v < -(j as f64) * f64::EPSILON * s {
            return Err(Error::Conditioning { pivot: j, value: v });
        }
    }
    Ok(v.max(0.0))
}

/// Predictive moments at a point together with their lengthscale derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveDerivs {
    pub mu: f64,
    /// Correlation bracket `K(x,x) - k'K^-1 k` (unclamped).
    pub v: f64,
    /// Predictive variance `psi v / (j - 2)`.
    pub var: f64,
    pub dmu: f64,
    pub d2mu: f64,
    pub dvar: f64,
    pub d2var: f64,
}

/// `(dmu, d2mu, dV, d2V)` at `x`.
pub fn predict_dtheta(fit: &GpFit, x: &[f64]) -> Result<PredictiveDerivs> {
    if fit.len() < 3 {
        return Err(Error::invalid("predictive derivatives need at least 3 points"));
    }
    let d = fit.derivatives();
    predict_dtheta_with(fit, &d, x)
}

/// As [`predict_dtheta`], reusing precomputed fit derivatives.
pub fn predict_dtheta_with(fit: &GpFit, d: &FitDerivatives, x: &[f64]) -> Result<PredictiveDerivs> {
    let j = fit.len();
    let pts = fit.points();
    let k = cross_corr_vector(x, pts, &fit.h)?;
    let (dk, d2k) = cross_corr_dtheta(x, pts, &fit.h)?;
    Ok(predictive_derivs(fit, d, &k, &dk, &d2k, j))
}

pub(crate) fn predictive_derivs(
    fit: &GpFit,
    d: &FitDerivatives,
    k: &[f64],
    dk: &[f64],
    d2k: &[f64],
    j: usize,
) -> PredictiveDerivs {
    let kinv = fit.inv.kinv();
    // z = K^-1 k,  z' = K^-1 (k' - K' z),  z'' = K^-1 (k'' - K'' z - 2 K' z')
    let z = kinv.mul_vec(k);
    let dk_z = d.dk.mul_vec(&z);
    let r1: Vec<f64> = dk.iter().zip(&dk_z).map(|(a, b)| a - b).collect();
    let dz = kinv.mul_vec(&r1);
    let d2k_z = d.d2k.mul_vec(&z);
    let dk_dz = d.dk.mul_vec(&dz);
    let r2: Vec<f64> = (0..j).map(|i| d2k[i] - d2k_z[i] - 2.0 * dk_dz[i]).collect();
    let d2z = kinv.mul_vec(&r2);

    let mu = dot(&z, &fit.y_sub);
    let dmu = dot(&dz, &fit.y_sub);
    let d2mu = dot(&d2z, &fit.y_sub);

    let v = fit.h.kself() - dot(k, &z);
    let dv = -(dot(dk, &z) + dot(k, &dz));
    let d2v = -(dot(d2k, &z) + 2.0 * dot(dk, &dz) + dot(k, &d2z));

    let denom = j as f64 - 2.0;
    let psi = fit.psi;
    PredictiveDerivs {
        mu,
        v,
        var: psi * v / denom,
        dmu,
        d2mu,
        dvar: (d.dpsi * v + psi * dv) / denom,
        d2var: (d.d2psi * v + 2.0 * d.dpsi * dv + psi * d2v) / denom,
    }
}
