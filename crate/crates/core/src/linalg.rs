//! Dense symmetric positive-definite algebra for growing kernel matrices.
//!
//! The inverse is held explicitly so that greedy criteria can take
//! inverse-vector products directly. Appending one row/column uses the
//! partition inverse identity
//!
//! ```text
//! [K  k]^-1   [K^-1 + g g'/m   g]
//! [k' c]    = [g'              m]   with  m^-1 = c - k'K^-1 k,  g = -m K^-1 k
//! ```
//!
//! so each extension costs O(j^2).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Square matrix stored row-major with a fixed row stride (`cap`), so that it
/// can grow in place up to `cap x cap`.
#[derive(Clone, Debug)]
pub struct SquareMatrix {
    dim: usize,
    cap: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self::with_capacity(dim, dim)
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        let cap = cap.max(dim);
        SquareMatrix {
            dim,
            cap,
            data: vec![0.0; cap * cap],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from row-major `dim x dim` data.
    pub fn from_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: rows.len(),
            });
        }
        Ok(Self::from_fn(dim, |i, j| rows[i * dim + j]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cap..i * self.cap + self.dim]
    }

    #[inline]
    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let (cap, dim) = (self.cap, self.dim);
        &mut self.data[i * cap..i * cap + dim]
    }

    /// Grows the stride so that `dim` may reach `cap`.
    pub fn reserve(&mut self, cap: usize) {
        if cap <= self.cap {
            return;
        }
        let mut data = vec![0.0; cap * cap];
        for i in 0..self.dim {
            data[i * cap..i * cap + self.dim].copy_from_slice(self.row(i));
        }
        self.data = data;
        self.cap = cap;
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        for (i, o) in out.iter_mut().take(self.dim).enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Quadratic form `u' A v`.
    pub fn quad(&self, u: &[f64], v: &[f64]) -> f64 {
        (0..self.dim).map(|i| u[i] * dot(self.row(i), v)).sum()
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (a, b) in self.row(i).iter().zip(other.row(i)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self[(i, j)])
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * self.cap + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.dim && j < self.dim);
        &mut self.data[i * self.cap + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Explicit inverse of an SPD matrix together with its log-determinant.
#[derive(Clone, Debug)]
pub struct SpdInverse {
    kinv: SquareMatrix,
    logdet: f64,
}

impl SpdInverse {
    pub fn dim(&self) -> usize {
        self.kinv.dim()
    }

    pub fn kinv(&self) -> &SquareMatrix {
        &self.kinv
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn reserve(&mut self, cap: usize) {
        self.kinv.reserve(cap);
    }

    /// `K^-1 v`.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        self.kinv.mul_vec(v)
    }

    /// `K^-1 v` into a caller buffer.
    pub fn solve_into(&self, v: &[f64], out: &mut [f64]) {
        self.kinv.mul_vec_into(v, out)
    }

    /// Appends one row/column in place, given scratch produced from `self`.
    pub fn extend(&mut self, s: &ExtensionScratch) {
        let j = self.dim();
        debug_assert_eq!(s.g.len(), j);
        if j + 1 > self.kinv.cap {
            self.kinv.reserve((2 * (j + 1)).max(4));
        }
        let inv_m = 1.0 / s.m;
        let k = &mut self.kinv;
        k.dim = j + 1;
        for a in 0..j {
            let ga = s.g[a] * inv_m;
            for b in a..j {
                let v = k[(a, b)] + ga * s.g[b];
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
            k[(a, j)] = s.g[a];
            k[(j, a)] = s.g[a];
        }
        k[(j, j)] = s.m;
        // log|K_{j+1}| = log|K_j| + log(c - k'K^-1 k); the bracket is m^-1.
        self.logdet += s.schur().ln();
    }
}

/// Per-candidate quantities for a one-row extension.
#[derive(Clone, Debug)]
pub struct ExtensionScratch {
    /// `g = -m K^-1 k`.
    pub g: Vec<f64>,
    /// `m = 1 / (c - k'K^-1 k)`.
    pub m: f64,
    pub kvec: Vec<f64>,
    pub kself: f64,
}

impl ExtensionScratch {
    /// The Schur complement `m^-1 = c - k'K^-1 k`.
    pub fn schur(&self) -> f64 {
        // Equivalent to kself + g'k / m.
        1.0 / self.m
    }
}

/// Cholesky factorization and explicit inverse.
pub fn spd_build(k: &SquareMatrix) -> Result<SpdInverse> {
    let n = k.dim();
    if n == 0 {
        return Err(Error::invalid("cannot factor an empty matrix"));
    }
    // Lower factor, row-major.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::Conditioning { pivot: i, value: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let logdet = 2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();

    // Invert L (lower triangular) in place into linv.
    let mut linv = vec![0.0; n * n];
    for i in 0..n {
        linv[i * n + i] = 1.0 / l[i * n + i];
        for j in 0..i {
            let mut s = 0.0;
            for p in j..i {
                s += l[i * n + p] * linv[p * n + j];
            }
            linv[i * n + j] = -s / l[i * n + i];
        }
    }
    // K^-1 = L^-T L^-1; fill upper triangle then mirror.
    let mut kinv = SquareMatrix::zeros(n);
    for a in 0..n {
        for b in a..n {
            let mut s = 0.0;
            for p in b..n {
                s += linv[p * n + a] * linv[p * n + b];
            }
            kinv[(a, b)] = s;
            kinv[(b, a)] = s;
        }
    }
    Ok(SpdInverse { kinv, logdet })
}

/// Computes `g` and `m` for appending a point with cross-correlations `kvec`
/// and self-correlation `kself`.
pub fn extend_scratch(inv: &SpdInverse, kvec: &[f64], kself: f64) -> Result<ExtensionScratch> {
    let j = inv.dim();
    if kvec.len() != j {
        return Err(Error::DimensionMismatch {
            expected: j,
            got: kvec.len(),
        });
    }
    let mut z = inv.solve(kvec);
    let schur = kself - dot(kvec, &z);
    if !(schur > 0.0) || !schur.is_finite() {
        return Err(Error::Conditioning {
            pivot: j,
            value: schur,
        });
    }
    let m = 1.0 / schur;
    for v in z.iter_mut() {
        *v *= -m;
    }
    Ok(ExtensionScratch {
        g: z,
        m,
        kvec: kvec.to_vec(),
        kself,
    })
}

/// Returns the inverse of the bordered matrix. Allocates; see
/// [`SpdInverse::extend`] for the in-place form.
pub fn extend_inverse(inv: &SpdInverse, s: &ExtensionScratch) -> SpdInverse {
    let mut out = inv.clone();
    out.extend(s);
    out
}

/// Updates `K^-1 Y` and `psi = Y'K^-1 Y` for a new response `y_new`, in place.
///
/// With `h = Y'g`: the top block gains `g (h/m + y_new)`, the new entry is
/// `h + y_new m`, and `psi` gains `h^2/m + 2 y_new h + y_new^2 m`.
pub fn extend_solution(
    kinv_y: &mut Vec<f64>,
    psi: &mut f64,
    s: &ExtensionScratch,
    y: &[f64],
    y_new: f64,
) {
    debug_assert_eq!(kinv_y.len(), s.g.len());
    let h = dot(y, &s.g);
    let coef = h / s.m + y_new;
    for (w, g) in kinv_y.iter_mut().zip(&s.g) {
        *w += g * coef;
    }
    kinv_y.push(h + y_new * s.m);
    *psi += h * h / s.m + 2.0 * y_new * h + y_new * y_new * s.m;
}

/// `tr(AB) = sum_{k,l} A_lk B_kl` without forming the product.
pub fn trace_product(a: &SquareMatrix, b: &SquareMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let n = a.dim();
    let mut t = 0.0;
    for l in 0..n {
        let arow = a.row(l);
        for (k, &alk) in arow.iter().enumerate() {
            t += alk * b[(k, l)];
        }
    }
    Ok(t)
}

/// Ratio of the largest to the smallest eigenvalue of a symmetric matrix;
/// `+inf` when the smallest eigenvalue is not positive.
pub fn condition_number(k: &SquareMatrix) -> f64 {
    if k.dim() == 0 {
        return f64::NAN;
    }
    let eig = SymmetricEigen::new(k.to_nalgebra()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
