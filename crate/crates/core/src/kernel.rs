//! Isotropic Gaussian correlation with a nugget.
//!
//! `K(x, x') = exp(-||x - x'||^2 / theta) + eta * [x == x']`
//!
//! Only squared distances are ever needed, so no square roots are taken.
//! Derivatives are with respect to the lengthscale `theta`; the nugget term
//! does not depend on it.

use crate::error::{Error, Result};

/// Default nugget.
pub const DEFAULT_NUGGET: f64 = 1e-6;

/// Correlation hyperparameters: lengthscale and nugget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub theta: f64,
    pub eta: f64,
}

impl Hyper {
    pub fn new(theta: f64, eta: f64) -> Result<Self> {
        let h = Hyper { theta, eta };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::invalid(format!(
                "lengthscale must be finite and > 0; got {}",
                self.theta
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(format!(
                "nugget must be finite and >= 0; got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn with_theta(self, theta: f64) -> Self {
        Hyper { theta, ..self }
    }

    /// Self-correlation `K(x, x) = 1 + eta`.
    #[inline]
    pub fn kself(&self) -> f64 {
        1.0 + self.eta
    }
}

/// A pair of points of equal dimension.
#[derive(Clone, Copy, Debug)]
pub struct PointPair<'a> {
    pub x: &'a [f64],
    pub x_prime: &'a [f64],
}

impl<'a> PointPair<'a> {
    pub fn new(x: &'a [f64], x_prime: &'a [f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        if x.len() != x_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: x_prime.len(),
            });
        }
        if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        Ok(PointPair { x, x_prime })
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[inline]
fn bitwise_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
}

/// Correlation without the nugget term, from a squared distance.
#[inline]
pub fn corr_d2(d2: f64, theta: f64) -> f64 {
    (-d2 / theta).exp()
}

/// First and second lengthscale derivatives from a squared distance.
#[inline]
pub fn corr_dtheta_d2(d2: f64, theta: f64) -> (f64, f64) {
    let k0 = corr_d2(d2, theta);
    let t2 = theta * theta;
    let a = d2 / t2;
    (k0 * a, k0 * (a * a - 2.0 * d2 / (t2 * theta)))
}

/// `K(x, x')`, including the nugget when the points are bitwise identical.
pub fn corr(pair: PointPair<'_>, h: &Hyper) -> f64 {
    let d2 = sq_dist(pair.x, pair.x_prime);
    let base = corr_d2(d2, h.theta);
    if bitwise_equal(pair.x, pair.x_prime) {
        base + h.eta
    } else {
        base
    }
}

/// `(dK/dtheta, d2K/dtheta2)` at `pair`.
pub fn corr_dtheta(pair: PointPair<'_>, h: &Hyper) -> (f64, f64) {
    corr_dtheta_d2(sq_dist(pair.x, pair.x_prime), h.theta)
}

/// Row-major view of a `rows x dim` point set.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "point buffer of length {} is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        Ok(Points { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

/// Cross-correlation vector `k(x)` against every row of `sub`.
pub fn cross_corr_vector(x: &[f64], sub: Points<'_>, h: &Hyper) -> Result<Vec<f64>> {
    if x.len() != sub.dim() {
        return Err(Error::DimensionMismatch {
            expected: sub.dim(),
            got: x.len(),
        });
    }
    Ok(sub
        .rows()
        .map(|r| {
            let base = corr_d2(sq_dist(x, r), h.theta);
            if bitwise_equal(x, r) {
                base + h.eta
            } else {
                base
            }
        })
        .collect())
}

/// Lengthscale derivative vectors `(dk, d2k)` of `k(x)` against `sub`.
pub fn cross_corr_dtheta(x: &[f64], sub: Points<'_>, h: &Hyper) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != sub.dim() {
        return Err(Error::DimensionMismatch {
            expected: sub.dim(),
            got: x.len(),
        });
    }
    Ok(sub
        .rows()
        .map(|r| corr_dtheta_d2(sq_dist(x, r), h.theta))
        .unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h(theta: f64, eta: f64) -> Hyper {
        Hyper::new(theta, eta).unwrap()
    }

    #[test]
    fn identical_points_give_one_plus_nugget() {
        let x = [0.3, -1.2];
        let p = PointPair::new(&x, &x).unwrap();
        assert_eq!(corr(p, &h(0.5, 1e-6)), 1.0 + 1e-6);
        assert_eq!(corr_dtheta(p, &h(0.5, 1e-6)), (0.0, 0.0));
    }

    #[test]
    fn distance_equal_to_theta() {
        let (a, b) = ([0.0, 0.0], [0.6, 0.8]);
        let v = corr(PointPair::new(&a, &b).unwrap(), &h(1.0, 0.0));
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn far_points_decorrelate() {
        let (a, b) = ([0.0], [1e6]);
        assert_eq!(corr(PointPair::new(&a, &b).unwrap(), &h(1.0, 0.1)), 0.0);
    }

    #[test]
    fn near_duplicates_get_no_nugget() {
        let a = [0.5];
        let b = [0.5 + f64::EPSILON];
        let v = corr(PointPair::new(&a, &b).unwrap(), &h(1.0, 0.25));
        assert!(v <= 1.0);
    }

    #[test]
    fn first_derivative_at_twice_theta() {
        let theta = 0.7;
        let (a, b) = ([0.0], [(2.0 * theta as f64).sqrt()]);
        let (dk, _) = corr_dtheta(PointPair::new(&a, &b).unwrap(), &h(theta, 0.0));
        let expect = 2.0 * (-2.0f64).exp() / theta;
        assert!((dk - expect).abs() < 1e-14 * expect.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PointPair::new(&[f64::NAN], &[0.0]).is_err());
        assert!(PointPair::new(&[0.0, 1.0], &[0.0]).is_err());
        assert!(Hyper::new(0.0, 0.0).is_err());
        assert!(Hyper::new(1.0, -1e-9).is_err());
        let pts = [0.0, 1.0, 2.0];
        assert!(cross_corr_vector(&[0.0, 0.0], Points::new(&pts, 1).unwrap(), &h(1.0, 0.0)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &theta in &[1e-2f64, 0.1, 1.0, 10.0, 1e2] {
            for _ in 0..50 {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                // Keep d^2/theta in a range where the correlation is not negligible.
                let scale = theta.sqrt() * rng.random_range(0.2..1.5) / 3f64.sqrt();
                let b: Vec<f64> = a.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
                let pair = PointPair::new(&a, &b).unwrap();
                let step = 1e-5 * theta;
                let f = |t: f64| corr(pair, &h(t, 0.0));
                let (dk, d2k) = corr_dtheta(pair, &h(theta, 0.0));
                let fd1 = (f(theta + step) - f(theta - step)) / (2.0 * step);
                let g = |t: f64| corr_dtheta(pair, &h(t, 0.0)).0;
                let fd2 = (g(theta + step) - g(theta - step)) / (2.0 * step);
                assert!(dk >= 0.0);
                assert!((dk - fd1).abs() <= 1e-6 * dk.abs().max(1e-8 / theta), "dk {dk} fd {fd1}");
                assert!(
                    (d2k - fd2).abs() <= 1e-6 * d2k.abs().max(1e-8 / (theta * theta)),
                    "d2k {d2k} fd {fd2}"
                );
            }
        }
    }

    #[test]
    fn vector_matches_scalar_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = Points::new(&sub, 2).unwrap();
        let x = [0.1, 0.2];
        let hp = h(0.4, 1e-3);
        let k = cross_corr_vector(&x, pts, &hp).unwrap();
        for (i, r) in pts.rows().enumerate() {
            assert_eq!(k[i], corr(PointPair::new(&x, r).unwrap(), &hp));
        }
        assert!(cross_corr_vector(&x, Points::new(&[], 2).unwrap(), &hp).unwrap().is_empty());
        assert_eq!(cross_corr_vector(&x, Points::new(&x, 2).unwrap(), &hp).unwrap(), vec![1.0 + 1e-3]);
    }

    proptest::proptest! {
        #[test]
        fn symmetric(a in proptest::collection::vec(-5.0f64..5.0, 3),
                     b in proptest::collection::vec(-5.0f64..5.0, 3),
                     theta in 1e-2f64..1e2) {
            let hp = h(theta, 1e-6);
            let ab = corr(PointPair::new(&a, &b).unwrap(), &hp);
            let ba = corr(PointPair::new(&b, &a).unwrap(), &hp);
            proptest::prop_assert_eq!(ab, ba);
        }
    }
}
