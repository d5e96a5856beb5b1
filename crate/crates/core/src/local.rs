//! Greedy local designs around a single predictive location.
//!
//! Starting from the `n0` nearest neighbours of `x`, the design grows one
//! point at a time by
//!
//! * `Nn`: the next nearest neighbour;
//! * `Alc`: the candidate maximizing the reduction in predictive variance at
//!   `x` (active learning Cohn);
//! * `Mspe`: the candidate minimizing the approximate mean-squared prediction
//!   error, which adds a lengthscale-uncertainty penalty weighted by the
//!   expected Fisher information.
//!
//! The lengthscale stays fixed during the loop. All per-step updates are
//! O(j^2); candidate bookkeeping for ALC is O(j) per candidate.

use crate::design::{DesignSet, Neighbor};
use crate::error::{Error, Result};
use crate::gp::{fisher_info, mle_theta, predictive_derivs, GpFit, MleOutcome, PredictiveDerivs, ThetaBounds};
use crate::kernel::{corr_d2, corr_dtheta_d2, cross_corr_vector, sq_dist, Hyper, Points};
use crate::linalg::{dot, extend_scratch, extend_solution, spd_build, ExtensionScratch, SpdInverse, SquareMatrix};

/// Reductions below this fraction of the current bracket are roundoff.
const ALC_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criterion {
    Nn,
    Alc,
    Mspe,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Nn => "nn",
            Criterion::Alc => "alc",
            Criterion::Mspe => "mspe",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Criterion::Nn),
            "alc" => Ok(Criterion::Alc),
            "mspe" => Ok(Criterion::Mspe),
            other => Err(Error::invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sizes and criterion for one local design.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalConfig {
    pub method: Criterion,
    pub n0: usize,
    pub n: usize,
    /// Number of nearest rows (including the seed) searched as candidates.
    pub close: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            method: Criterion::Alc,
            n0: 6,
            n: 50,
            close: 1000,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n0 > self.n {
            return Err(Error::invalid(format!(
                "need 1 <= start ({}) <= end ({})",
                self.n0, self.n
            )));
        }
        if self.close < self.n {
            return Err(Error::invalid(format!(
                "candidate limit {} is smaller than the design size {}",
                self.close, self.n
            )));
        }
        if self.method == Criterion::Mspe && self.n0 < 3 {
            return Err(Error::invalid("mspe needs a starting design of at least 3 points"));
        }
        Ok(())
    }
}

/// Incremental state of one local design.
#[derive(Clone, Debug)]
pub struct LocalState {
    pub x: Vec<f64>,
    pub indices: Vec<usize>,
    pub inv: SpdInverse,
    pub kinv_y: Vec<f64>,
    pub psi: f64,
    /// Observed information at `h.theta`; tracked only for MSPE.
    pub fisher: Option<f64>,
    pub h: Hyper,
    /// `k_j(x)`.
    pub kx: Vec<f64>,
    /// `v_j(x) = K(x,x) - k_j(x)' K_j^-1 k_j(x)`.
    pub vx: f64,
    x_sub: Vec<f64>,
    y_sub: Vec<f64>,
    dim: usize,
}

impl LocalState {
    /// Builds a state from explicit rows with one batch factorization.
    pub fn from_rows(x: &[f64], design: &DesignSet, rows: &[usize], h: Hyper, capacity: usize) -> Result<Self> {
        let fit = GpFit::from_design(design, rows, h)?;
        let mut inv = fit.inv;
        inv.reserve(capacity.max(rows.len()));
        let kx = cross_corr_vector(x, fit_points(&fit.x_sub, design.dim()), &h)?;
        let mut st = LocalState {
            x: x.to_vec(),
            indices: rows.to_vec(),
            inv,
            kinv_y: fit.kinv_y,
            psi: fit.psi,
            fisher: None,
            h,
            kx,
            vx: 0.0,
            x_sub: fit.x_sub,
            y_sub: fit.y_sub,
            dim: design.dim(),
        };
        st.vx = st.bracket_at_x();
        Ok(st)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self) -> Points<'_> {
        fit_points(&self.x_sub, self.dim)
    }

    pub fn responses(&self) -> &[f64] {
        &self.y_sub
    }

    /// Recomputes `v_j(x)` from scratch.
    pub fn bracket_at_x(&self) -> f64 {
        self.h.kself() - self.inv.kinv().quad(&self.kx, &self.kx)
    }

    /// Snapshot as a batch fit (no refactorization).
    pub fn to_fit(&self) -> GpFit {
        GpFit {
            indices: self.indices.clone(),
            inv: self.inv.clone(),
            kinv_y: self.kinv_y.clone(),
            psi: self.psi,
            h: self.h,
            x_sub: self.x_sub.clone(),
            y_sub: self.y_sub.clone(),
            dim: self.dim,
        }
    }

    pub fn into_fit(self) -> GpFit {
        GpFit {
            indices: self.indices,
            inv: self.inv,
            kinv_y: self.kinv_y,
            psi: self.psi,
            h: self.h,
            x_sub: self.x_sub,
            y_sub: self.y_sub,
            dim: self.dim,
        }
    }

    /// Correlations of design row `row` with the current sub-design (no nugget:
    /// distinct rows are distinct observations).
    fn row_correlations(&self, design: &DesignSet, row: usize) -> Vec<f64> {
        let xr = design.x(row);
        self.points()
            .rows()
            .map(|r| corr_d2(sq_dist(xr, r), self.h.theta))
            .collect()
    }

    /// Starts tracking the observed information with one batch evaluation.
    pub fn track_fisher(&mut self) {
        self.fisher = Some(fisher_info(&self.to_fit()).unwrap_or(f64::NAN));
    }

    /// Appends `row` given its extension scratch.
    fn push(&mut self, design: &DesignSet, row: usize, s: &ExtensionScratch) {
        let y_new = design.y(row);
        if let Some(f) = self.fisher {
            self.fisher = Some(match update_fisher(self, design, row) {
                Ok(next) if f.is_finite() => next,
                _ => f64::NAN,
            });
        }
        extend_solution(&mut self.kinv_y, &mut self.psi, s, &self.y_sub, y_new);
        self.inv.extend(s);
        self.indices.push(row);
        self.x_sub.extend_from_slice(design.x(row));
        self.y_sub.push(y_new);
        let kx_new = cross_corr_vector(&self.x, fit_points(design.x(row), self.dim), &self.h)
            .expect("dimensions validated")[0];
        self.kx.push(kx_new);
        self.vx = self.bracket_at_x();
    }

    /// Adds a design row, refusing it on conditioning failure.
    pub fn add_row(&mut self, design: &DesignSet, row: usize) -> Result<()> {
        if self.indices.contains(&row) {
            return Err(Error::invalid(format!("row {row} is already in the design")));
        }
        let kvec = self.row_correlations(design, row);
        let s = extend_scratch(&self.inv, &kvec, self.h.kself())?;
        self.push(design, row, &s);
        Ok(())
    }
}

fn fit_points(x: &[f64], dim: usize) -> Points<'_> {
    Points::new(x, dim).expect("row-major buffer of whole points")
}

/// Seeds a design with the `n0` nearest rows to `x` (ties by lower row id).
pub fn init_nn(x: &[f64], design: &DesignSet, n0: usize, h: Hyper) -> Result<LocalState> {
    if n0 == 0 {
        return Err(Error::invalid("starting design must have at least one point"));
    }
    if design.len() < n0 {
        return Err(Error::invalid(format!(
            "design has {} rows, fewer than the starting size {n0}",
            design.len()
        )));
    }
    let rows: Vec<usize> = design.nearest(x, n0)?.iter().map(|nb| nb.row).collect();
    LocalState::from_rows(x, design, &rows, h, n0)
}

/// Reduction in the predictive bracket at `state.x` from adding `candidate`:
///
/// `v_j(x) - v_{j+1}(x) = k'G k / m + 2 k'g K(x',x) + K(x',x)^2 m`
///
/// with `G = g g'`. Errors when the bordered matrix is not positive definite.
pub fn alc_reduction(state: &LocalState, design: &DesignSet, candidate: usize) -> Result<f64> {
    let kvec = state.row_correlations(design, candidate);
    let s = extend_scratch(&state.inv, &kvec, state.h.kself())?;
    let kxc = cross_corr_vector(&state.x, fit_points(design.x(candidate), state.dim), &state.h)?[0];
    let kg = dot(&state.kx, &s.g);
    let red = kg * kg / s.m + 2.0 * kg * kxc + kxc * kxc * s.m;
    Ok(floor_reduction(red, state.vx))
}

#[inline]
fn floor_reduction(red: f64, vx: f64) -> f64 {
    if red < ALC_FLOOR * vx {
        0.0
    } else {
        red
    }
}

/// Components of the MSPE criterion for one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MspeValue {
    /// `(j+1) psi / (j (j-1)) v_{j+1}(x)`.
    pub variance_term: f64,
    /// `(dmu(x)/dtheta)^2 / G_{j+1}`, zero when the fallback applies.
    pub penalty: f64,
    /// Expected information `G_{j+1}`.
    pub info: f64,
    /// True when `G_{j+1}` was not positive and only the variance term is used.
    pub fallback: bool,
}

impl MspeValue {
    pub fn value(&self) -> f64 {
        self.variance_term + self.penalty
    }
}

/// Per-step quantities shared across MSPE candidates.
struct MspeContext {
    dk: SquareMatrix,
    dk_w: Vec<f64>,
    dpsi: f64,
    dmu_x: f64,
    /// Observed information clamped at zero.
    fisher: f64,
}

impl MspeContext {
    fn new(state: &LocalState) -> Self {
        let pts = state.points();
        let j = pts.len();
        let theta = state.h.theta;
        let mut dk = SquareMatrix::zeros(j);
        for a in 0..j {
            for b in 0..a {
                let v = corr_dtheta_d2(sq_dist(pts.row(a), pts.row(b)), theta).0;
                dk[(a, b)] = v;
                dk[(b, a)] = v;
            }
        }
        let w = &state.kinv_y;
        let dk_w = dk.mul_vec(w);
        let dpsi = -dot(w, &dk_w);
        // dmu(x) = k'(x).w - z(x).(K' w)
        let dkx: Vec<f64> = pts
            .rows()
            .map(|r| corr_dtheta_d2(sq_dist(&state.x, r), theta).0)
            .collect();
        let zx = state.inv.solve(&state.kx);
        let dmu_x = dot(&dkx, w) - dot(&zx, &dk_w);
        let fisher = match state.fisher {
            Some(f) if f.is_finite() && f > 0.0 => f,
            _ => 0.0,
        };
        MspeContext {
            dk,
            dk_w,
            dpsi,
            dmu_x,
            fisher,
        }
    }

    /// Scores a candidate from its correlations `kc` and squared distances
    /// `d2c` to the current design, and its correlation `kxc` with `x`.
    fn score(&self, state: &LocalState, kc: &[f64], d2c: &[f64], kxc: f64) -> Option<MspeValue> {
        let j = kc.len();
        let jf = j as f64;
        let theta = state.h.theta;
        let z = state.inv.solve(kc);
        let vc = state.h.kself() - dot(kc, &z);
        if !(vc > 0.0) {
            return None;
        }
        let t = kxc - dot(&state.kx, &z);
        let red = floor_reduction(t * t / vc, state.vx);
        let v_next = (state.vx - red).max(0.0);
        let variance_term = (jf + 1.0) * state.psi / (jf * (jf - 1.0)) * v_next;

        let dkc: Vec<f64> = d2c.iter().map(|&d2| corr_dtheta_d2(d2, theta).0).collect();
        let dk_z = self.dk.mul_vec(&z);
        let dmu_c = dot(&dkc, &state.kinv_y) - dot(&z, &self.dk_w);
        let dv_c = -(2.0 * dot(&dkc, &z) - dot(&z, &dk_z));
        let var_c = state.psi * vc / (jf - 2.0);
        let dvar_c = (self.dpsi * vc + state.psi * dv_c) / (jf - 2.0);
        let info = self.fisher + 0.5 * dvar_c * dvar_c / (var_c * var_c) + dmu_c * dmu_c / var_c;
        if info > 0.0 && info.is_finite() {
            Some(MspeValue {
                variance_term,
                penalty: self.dmu_x * self.dmu_x / info,
                info,
                fallback: false,
            })
        } else {
            Some(MspeValue {
                variance_term,
                penalty: 0.0,
                info,
                fallback: true,
            })
        }
    }
}

/// MSPE criterion for adding `candidate` (smaller is better).
pub fn mspe_criterion(state: &LocalState, design: &DesignSet, candidate: usize) -> Result<MspeValue> {
    if state.len() < 3 {
        return Err(Error::invalid("mspe needs at least 3 design points"));
    }
    let ctx = MspeContext::new(state);
    let xc = design.x(candidate);
    let d2c: Vec<f64> = state.points().rows().map(|r| sq_dist(xc, r)).collect();
    let kc: Vec<f64> = d2c.iter().map(|&d2| corr_d2(d2, state.h.theta)).collect();
    let kxc = cross_corr_vector(&state.x, fit_points(xc, state.dim), &state.h)?[0];
    ctx.score(state, &kc, &d2c, kxc).ok_or(Error::Conditioning {
        pivot: state.len(),
        value: f64::NAN,
    })
}

/// Second lengthscale derivative of the Student-t conditional log density of
/// `y` given the current design, from predictive moments and their
/// derivatives at the new point.
pub fn conditional_loglik_d2(y: f64, pd: &PredictiveDerivs, j: usize) -> f64 {
    let PredictiveDerivs {
        mu,
        var,
        dmu,
        d2mu,
        dvar,
        d2var,
        ..
    } = *pd;
    let r = y - mu;
    let nu = j as f64 - 2.0;
    let a = nu + r * r / var;
    let da = -2.0 * r * dmu / var - r * r * dvar / (var * var);
    let d2a = 2.0 * dmu * dmu / var - 2.0 * r * d2mu / var + 4.0 * r * dmu * dvar / (var * var)
        - r * r * d2var / (var * var)
        + 2.0 * r * r * dvar * dvar / (var * var * var);
    let half = 0.5 * (j as f64 + 1.0);
    -d2var / (2.0 * var) + dvar * dvar / (2.0 * var * var) - half * (d2a / a - da * da / (a * a))
}

/// Observed information after adding `new_row`: `F_{j+1} = F_j - l_j''(y_{j+1})`.
pub fn update_fisher(state: &LocalState, design: &DesignSet, new_row: usize) -> Result<f64> {
    let j = state.len();
    if j < 3 {
        return Err(Error::invalid("information recursion needs at least 3 points"));
    }
    let current = match state.fisher {
        Some(f) => f,
        None => fisher_info(&state.to_fit())?,
    };
    let fit = state.to_fit();
    let d = fit.derivatives();
    let xr = design.x(new_row);
    let pts = fit.points();
    let mut k = Vec::with_capacity(j);
    let mut dk = Vec::with_capacity(j);
    let mut d2k = Vec::with_capacity(j);
    for r in pts.rows() {
        let d2 = sq_dist(xr, r);
        k.push(corr_d2(d2, fit.h.theta));
        let (a, b) = corr_dtheta_d2(d2, fit.h.theta);
        dk.push(a);
        d2k.push(b);
    }
    let pd = predictive_derivs(&fit, &d, &k, &dk, &d2k, j);
    if !(pd.var > 0.0) {
        return Err(Error::Conditioning { pivot: j, value: pd.var });
    }
    Ok(current - conditional_loglik_d2(design.y(new_row), &pd, j))
}

/// Value of a candidate under a criterion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateScore {
    pub candidate: usize,
    /// Squared distance (NN), variance reduction (ALC) or MSPE value.
    pub value: f64,
    pub feasible: bool,
}

/// Candidate pool with cached correlations to the growing design.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    rows: Vec<usize>,
    d2x: Vec<f64>,
    kxc: Vec<f64>,
    /// Row-major `rows x cap`: correlations with the current sub-design.
    kc: Vec<f64>,
    d2c: Vec<f64>,
    /// `K(c,c) - k_c' K^-1 k_c`.
    vc: Vec<f64>,
    alive: Vec<bool>,
    cap: usize,
    j: usize,
    tracking: bool,
}

impl CandidateSet {
    /// Candidates given as neighbours of `state.x` (any order).
    pub fn new(state: &LocalState, design: &DesignSet, cands: &[Neighbor], capacity: usize) -> Result<Self> {
        let j = state.len();
        let cap = capacity.max(j + 1);
        let m = cands.len();
        let mut set = CandidateSet {
            rows: cands.iter().map(|c| c.row).collect(),
            d2x: cands.iter().map(|c| c.d2).collect(),
            kxc: Vec::with_capacity(m),
            kc: vec![0.0; m * cap],
            d2c: vec![0.0; m * cap],
            vc: vec![0.0; m],
            alive: vec![true; m],
            cap,
            j,
            tracking: true,
        };
        let pts = state.points();
        for (ci, &row) in set.rows.iter().enumerate() {
            if state.indices.contains(&row) {
                return Err(Error::invalid(format!("candidate {row} is already in the design")));
            }
            let xc = design.x(row);
            set.kxc.push(cross_corr_vector(&state.x, fit_points(xc, state.dim), &state.h)?[0]);
            let base = ci * cap;
            for (a, r) in pts.rows().enumerate() {
                let d2 = sq_dist(xc, r);
                set.d2c[base + a] = d2;
                set.kc[base + a] = corr_d2(d2, state.h.theta);
            }
            let kc = &set.kc[base..base + j];
            set.vc[ci] = state.h.kself() - state.inv.kinv().quad(kc, kc);
        }
        Ok(set)
    }

    /// Candidates as plain row ids; distances are computed here.
    pub fn from_rows(state: &LocalState, design: &DesignSet, rows: &[usize]) -> Result<Self> {
        let cands: Vec<Neighbor> = rows
            .iter()
            .map(|&row| Neighbor {
                row,
                d2: sq_dist(design.x(row), &state.x),
            })
            .collect();
        Self::new(state, design, &cands, state.len() + rows.len())
    }

    pub fn len(&self) -> usize {
        self.rows.iter().zip(&self.alive).filter(|(_, a)| **a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn kc(&self, ci: usize) -> &[f64] {
        &self.kc[ci * self.cap..ci * self.cap + self.j]
    }

    #[inline]
    fn d2c(&self, ci: usize) -> &[f64] {
        &self.d2c[ci * self.cap..ci * self.cap + self.j]
    }

    fn ensure_capacity(&mut self, need: usize) {
        if need <= self.cap {
            return;
        }
        let cap = need.max(2 * self.cap);
        let m = self.rows.len();
        let mut kc = vec![0.0; m * cap];
        let mut d2c = vec![0.0; m * cap];
        for ci in 0..m {
            kc[ci * cap..ci * cap + self.j].copy_from_slice(self.kc(ci));
            d2c[ci * cap..ci * cap + self.j].copy_from_slice(self.d2c(ci));
        }
        self.kc = kc;
        self.d2c = d2c;
        self.cap = cap;
    }

    /// Scores every live candidate.
    fn scores(&self, state: &LocalState, crit: Criterion) -> Vec<CandidateScore> {
        let live = (0..self.rows.len()).filter(|&ci| self.alive[ci]);
        match crit {
            Criterion::Nn => live
                .map(|ci| CandidateScore {
                    candidate: self.rows[ci],
                    value: self.d2x[ci],
                    feasible: true,
                })
                .collect(),
            Criterion::Alc => {
                let u = state.inv.solve(&state.kx);
                live.map(|ci| {
                    let vc = self.vc[ci];
                    let t = self.kxc[ci] - dot(&u, self.kc(ci));
                    let feasible = vc > 0.0 && vc.is_finite();
                    CandidateScore {
                        candidate: self.rows[ci],
                        value: if feasible { floor_reduction(t * t / vc, state.vx) } else { f64::NAN },
                        feasible,
                    }
                })
                .collect()
            }
            Criterion::Mspe => {
                let ctx = MspeContext::new(state);
                live.map(|ci| match ctx.score(state, self.kc(ci), self.d2c(ci), self.kxc[ci]) {
                    Some(v) => CandidateScore {
                        candidate: self.rows[ci],
                        value: v.value(),
                        feasible: true,
                    },
                    None => CandidateScore {
                        candidate: self.rows[ci],
                        value: f64::NAN,
                        feasible: false,
                    },
                })
                .collect()
            }
        }
    }

    fn kill(&mut self, row: usize) {
        if let Some(ci) = self.rows.iter().position(|&r| r == row) {
            self.alive[ci] = false;
        }
    }

    fn position(&self, row: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == row)
    }

    /// Folds the newly added design point into every live candidate.
    fn absorb(&mut self, state_before: &LocalState, design: &DesignSet, row: usize, s: &ExtensionScratch) {
        let j = self.j;
        self.ensure_capacity(j + 1);
        let xr = design.x(row);
        let theta = state_before.h.theta;
        for ci in 0..self.rows.len() {
            if !self.alive[ci] {
                continue;
            }
            let d2 = sq_dist(design.x(self.rows[ci]), xr);
            let k_new = corr_d2(d2, theta);
            if self.tracking {
                // s_{j+1} = s_j + m (k_new - z_r' k_c)^2, and g = -m z_r.
                let t = dot(&s.g, self.kc(ci)) / s.m + k_new;
                self.vc[ci] -= s.m * t * t;
            }
            let base = ci * self.cap;
            self.kc[base + j] = k_new;
            self.d2c[base + j] = d2;
        }
        self.j = j + 1;
    }
}

/// Picks the best score; ties go to the lower row id.
fn best_of(scores: &[CandidateScore], crit: Criterion) -> Option<CandidateScore> {
    let better = |a: &CandidateScore, b: &CandidateScore| -> bool {
        let ord = match crit {
            Criterion::Alc => b.value.total_cmp(&a.value),
            Criterion::Nn | Criterion::Mspe => a.value.total_cmp(&b.value),
        };
        ord.then(a.candidate.cmp(&b.candidate)).is_lt()
    };
    scores
        .iter()
        .filter(|s| s.feasible && !s.value.is_nan())
        .fold(None, |best: Option<CandidateScore>, s| match best {
            Some(b) if !better(s, &b) => Some(b),
            _ => Some(*s),
        })
}

/// Outcome of one greedy step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub chosen: usize,
    pub value: f64,
    /// Candidates rejected because the bordered matrix failed to factor.
    pub skipped: usize,
}

/// Chooses the best candidate and extends `state` with it in place.
pub fn greedy_step(
    state: &mut LocalState,
    design: &DesignSet,
    crit: Criterion,
    candidates: &mut CandidateSet,
) -> Result<StepOutcome> {
    if crit == Criterion::Mspe && state.len() < 3 {
        return Err(Error::invalid("mspe needs at least 3 design points"));
    }
    let mut skipped = 0;
    let mut scores = candidates.scores(state, crit);
    loop {
        let best = best_of(&scores, crit).ok_or(Error::DesignStall { size: state.len() })?;
        let ci = candidates.position(best.candidate).expect("scored candidates are pooled");
        let kvec = candidates.kc(ci).to_vec();
        match extend_scratch(&state.inv, &kvec, state.h.kself()) {
            Ok(s) => {
                candidates.kill(best.candidate);
                candidates.absorb(state, design, best.candidate, &s);
                state.push(design, best.candidate, &s);
                return Ok(StepOutcome {
                    chosen: best.candidate,
                    value: best.value,
                    skipped,
                });
            }
            Err(Error::Conditioning { .. }) => {
                skipped += 1;
                candidates.kill(best.candidate);
                for sc in scores.iter_mut().filter(|sc| sc.candidate == best.candidate) {
                    sc.feasible = false;
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// One entry of a selection trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub row: usize,
    pub value: f64,
    /// `v(x)` after adding the row.
    pub vx_after: f64,
}

/// A finished local design.
#[derive(Clone, Debug)]
pub struct LocalDesign {
    pub state: LocalState,
    /// Greedy choices after the nearest-neighbour seed.
    pub trace: Vec<TraceStep>,
    /// Candidates skipped for conditioning failures.
    pub skipped: usize,
}

impl LocalDesign {
    pub fn into_fit(self) -> GpFit {
        self.state.into_fit()
    }
}

/// Grows a local design for `x` at the fixed lengthscale in `h`.
///
/// The `close` nearest rows are fetched once; the first `n0` seed the design
/// and the rest are the candidates. Returns the partial design on a stall
/// through [`Error::DesignStall`].
pub fn local_design(x: &[f64], design: &DesignSet, cfg: &LocalConfig, h: Hyper) -> Result<LocalDesign> {
    match local_design_partial(x, design, cfg, h) {
        (Ok(()), d) => Ok(d.expect("design present on success")),
        (Err(e), _) => Err(e),
    }
}

/// As [`local_design`], but also hands back whatever was built before an error.
pub fn local_design_partial(
    x: &[f64],
    design: &DesignSet,
    cfg: &LocalConfig,
    h: Hyper,
) -> (Result<()>, Option<LocalDesign>) {
    if let Err(e) = cfg.validate().and_then(|_| h.validate()) {
        return (Err(e), None);
    }
    if design.len() < cfg.n {
        return (
            Err(Error::invalid(format!(
                "design has {} rows, fewer than the local design size {}",
                design.len(),
                cfg.n
            ))),
            None,
        );
    }
    let close = cfg.close.min(design.len());
    let neighbors = match design.nearest(x, close) {
        Ok(nb) => nb,
        Err(e) => return (Err(e), None),
    };
    let seed: Vec<usize> = neighbors[..cfg.n0].iter().map(|nb| nb.row).collect();
    let mut state = match LocalState::from_rows(x, design, &seed, h, cfg.n) {
        Ok(s) => s,
        Err(e) => return (Err(e), None),
    };
    let mut out = LocalDesign {
        state: state.clone(),
        trace: Vec::with_capacity(cfg.n - cfg.n0),
        skipped: 0,
    };
    if cfg.n == cfg.n0 {
        out.state = state;
        return (Ok(()), Some(out));
    }
    if cfg.method == Criterion::Mspe {
        state.track_fisher();
    }

    let result = if cfg.method == Criterion::Nn {
        // Candidates are already in (distance, row) order.
        let mut res = Ok(());
        let mut next = cfg.n0;
        while state.len() < cfg.n {
            let Some(nb) = neighbors.get(next) else {
                res = Err(Error::DesignStall { size: state.len() });
                break;
            };
            next += 1;
            match state.add_row(design, nb.row) {
                Ok(()) => out.trace.push(TraceStep {
                    row: nb.row,
                    value: nb.d2,
                    vx_after: state.vx,
                }),
                Err(Error::Conditioning { .. }) => out.skipped += 1,
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        res
    } else {
        let mut pool = match CandidateSet::new(&state, design, &neighbors[cfg.n0..], cfg.n) {
            Ok(p) => p,
            Err(e) => return (Err(e), None),
        };
        pool.tracking = cfg.method == Criterion::Alc;
        let mut res = Ok(());
        while state.len() < cfg.n {
            match greedy_step(&mut state, design, cfg.method, &mut pool) {
                Ok(step) => {
                    out.skipped += step.skipped;
                    out.trace.push(TraceStep {
                        row: step.chosen,
                        value: step.value,
                        vx_after: state.vx,
                    });
                }
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        res
    };
    out.state = state;
    (result, Some(out))
}

/// Full selection trace including the seed rows, whose value is the squared
/// distance to `x` and whose `vx_after` is the bracket of the prefix design.
pub fn design_trace(
    x: &[f64],
    design: &DesignSet,
    cfg: &LocalConfig,
    h: Hyper,
) -> (Result<()>, Vec<TraceStep>) {
    let (res, built) = local_design_partial(x, design, cfg, h);
    let Some(built) = built else {
        return (res, Vec::new());
    };
    let mut rows = Vec::with_capacity(built.state.len());
    let seed = &built.state.indices[..cfg.n0.min(built.state.len())];
    for i in 0..seed.len() {
        let prefix = &seed[..=i];
        let vx = LocalState::from_rows(x, design, prefix, h, prefix.len())
            .map(|s| s.vx)
            .unwrap_or(f64::NAN);
        rows.push(TraceStep {
            row: seed[i],
            value: sq_dist(design.x(seed[i]), x),
            vx_after: vx,
        });
    }
    rows.extend(built.trace.iter().copied());
    (res, rows)
}

/// Local lengthscale MLE followed by one refactorization at the estimate.
pub fn local_mle(fit: &GpFit, bounds: ThetaBounds, tol: f64, max_iter: usize) -> Result<(GpFit, MleOutcome)> {
    let mut start = fit.clone();
    let clamped = fit.h.theta.clamp(bounds.lo, bounds.hi);
    if clamped != fit.h.theta {
        start = fit.refit(clamped)?;
    }
    let out = mle_theta(&start, bounds, tol, max_iter)?;
    let refit = if out.theta == fit.h.theta {
        fit.clone()
    } else {
        fit.refit(out.theta)?
    };
    Ok((refit, out))
}

/// `v_j(x)` recomputed from scratch for an explicit row set.
pub fn bracket_from_scratch(x: &[f64], design: &DesignSet, rows: &[usize], h: Hyper) -> Result<f64> {
    let fit = GpFit::from_design(design, rows, h)?;
    let k = cross_corr_vector(x, fit.points(), &h)?;
    let inv = spd_build(&crate::gp::kernel_matrix(fit.points(), &h))?;
    Ok(h.kself() - inv.kinv().quad(&k, &k))
}
