//! Power-law viscous stress `S(A) = (κ + |A|²)^{(p-2)/2} A`, its companion
//! `V(A) = (κ + |A|²)^{(p-2)/4} A`, and the directional derivative of `S`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2×2 matrix, row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0; 2]; 2]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2([[a11, a12], [a21, a22]])
    }

    /// Frobenius product `A : B`.
    pub fn ddot(&self, other: &Mat2) -> f64 {
        let (a, b) = (&self.0, &other.0);
        a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn transpose(&self) -> Mat2 {
        let a = &self.0;
        Mat2([[a[0][0], a[1][0]], [a[0][1], a[1][1]]])
    }

    pub fn sym(&self) -> Mat2 {
        let a = &self.0;
        let off = 0.5 * (a[0][1] + a[1][0]);
        Mat2([[a[0][0], off], [off, a[1][1]]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let a = &self.0;
        Mat2([[s * a[0][0], s * a[0][1]], [s * a[1][0], s * a[1][1]]])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + o.scale(-1.0)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        self.scale(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RheologyParams {
    pub p: f64,
    pub kappa: f64,
}

impl RheologyParams {
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        let params = Self { p, kappa };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("growth exponent p must lie in (1, inf), got {}", self.p)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.p < 2.0 && self.kappa == 0.0 {
            return Err(Error::Config("p < 2 requires kappa > 0".into()));
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        self.p == 2.0
    }

    /// `κ + |A|²`, rejecting the singular point of the shear-thinning branch.
    fn base(&self, a: &Mat2) -> Result<f64> {
        let b = self.kappa + a.norm_sq();
        if b == 0.0 && self.p < 2.0 {
            return Err(Error::RheologySingular { p: self.p });
        }
        Ok(b)
    }

    fn power(&self, base: f64, exponent: f64) -> f64 {
        if exponent == 0.0 {
            1.0
        } else {
            base.powf(exponent)
        }
    }

    pub fn stress(&self, a: &Mat2) -> Result<Mat2> {
        let b = self.base(a)?;
        Ok(a.scale(self.power(b, 0.5 * (self.p - 2.0))))
    }

    pub fn v_tensor(&self, a: &Mat2) -> Result<Mat2> {
        let b = self.base(a)?;
        Ok(a.scale(self.power(b, 0.25 * (self.p - 2.0))))
    }

    /// Directional derivative `DS(A)[H]`.
    pub fn stress_derivative(&self, a: &Mat2, h: &Mat2) -> Result<Mat2> {
        let (c, d) = self.derivative_coefficients(a)?;
        Ok(h.scale(c) + a.scale(d * a.ddot(h)))
    }

    /// Coefficients `(c, d)` with `DS(A)[H] = c H + d (A:H) A`.
    pub fn derivative_coefficients(&self, a: &Mat2) -> Result<(f64, f64)> {
        let b = self.base(a)?;
        let c = self.power(b, 0.5 * (self.p - 2.0));
        let d = if self.p == 2.0 {
            0.0
        } else if b == 0.0 {
            // p > 2, kappa = 0, A = 0: the second term vanishes with A
            0.0
        } else {
            (self.p - 2.0) * b.powf(0.5 * (self.p - 4.0))
        };
        Ok((c, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, scale: f64) -> Mat2 {
        Mat2::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn linear_case_is_identity() {
        let r = RheologyParams::new(2.0, 0.37).unwrap();
        let a = Mat2::new(1.0, -2.0, 0.5, 3.0);
        assert_eq!(r.stress(&a).unwrap(), a);
        assert_eq!(r.v_tensor(&a).unwrap(), a);
        let h = Mat2::new(0.2, 0.1, -0.4, 1.0);
        assert_eq!(r.stress_derivative(&a, &h).unwrap(), h);
    }

    #[test]
    fn zero_argument() {
        for p in [1.5, 2.0, 3.0] {
            let r = RheologyParams::new(p, 0.1).unwrap();
            assert_eq!(r.stress(&Mat2::ZERO).unwrap(), Mat2::ZERO);
            assert_eq!(r.v_tensor(&Mat2::ZERO).unwrap(), Mat2::ZERO);
            let h = Mat2::new(1.0, 2.0, 2.0, -1.0);
            let d = r.stress_derivative(&Mat2::ZERO, &h).unwrap();
            let expect = h.scale(0.1f64.powf((p - 2.0) / 2.0));
            assert!((d - expect).max_abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_values() {
        let r = RheologyParams::new(3.0, 0.1).unwrap();
        let s = r.stress(&Mat2::IDENTITY).unwrap();
        assert!((s.0[0][0] - 2.1f64.sqrt()).abs() < 1e-15);
        assert!((s.0[0][0] - 1.449138).abs() < 1e-6);
        assert_eq!(s.0[0][1], 0.0);
        let v = r.v_tensor(&Mat2::IDENTITY).unwrap();
        assert!((v.0[1][1] - 2.1f64.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn singular_point_rejected() {
        let r = RheologyParams { p: 1.5, kappa: 0.0 };
        assert!(matches!(r.stress(&Mat2::ZERO), Err(Error::RheologySingular { .. })));
        assert!(RheologyParams::new(1.5, 0.0).is_err());
        assert!(RheologyParams::new(1.0, 0.1).is_err());
        assert!(RheologyParams::new(2.0, -1.0).is_err());
        // p >= 2 is fine at zero even without regularization
        let r = RheologyParams::new(3.0, 0.0).unwrap();
        assert_eq!(r.stress(&Mat2::ZERO).unwrap(), Mat2::ZERO);
    }

    #[test]
    fn symmetric_in_symmetric_out() {
        let r = RheologyParams::new(1.5, 0.1).unwrap();
        let a = Mat2::new(0.3, -1.2, -1.2, 2.0);
        let s = r.stress(&a).unwrap();
        assert_eq!(s.0[0][1], s.0[1][0]);
    }

    #[test]
    fn homogeneity_without_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [1.5, 2.5, 3.0] {
            let r = RheologyParams { p, kappa: 0.0 };
            for _ in 0..100 {
                let a = random_mat(&mut rng, 2.0);
                let lambda: f64 = rng.random_range(0.1..5.0);
                let lhs = r.stress(&a.scale(lambda)).unwrap();
                let rhs = r.stress(&a).unwrap().scale(lambda.powf(p - 1.0));
                assert!((lhs - rhs).max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
            }
        }
    }

    #[test]
    fn derivative_first_order_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [1.5, 2.0, 3.0] {
            let r = RheologyParams::new(p, 0.1).unwrap();
            for _ in 0..100 {
                let a = random_mat(&mut rng, 1.5);
                let h = random_mat(&mut rng, 1.0);
                let d = r.stress_derivative(&a, &h).unwrap();
                let errs: Vec<f64> = [1e-4, 1e-5, 1e-6]
                    .iter()
                    .map(|&eps| {
                        let fd = (r.stress(&(a + h.scale(eps))).unwrap() - r.stress(&a).unwrap()).scale(1.0 / eps);
                        (fd - d).norm()
                    })
                    .collect();
                if p == 2.0 {
                    assert!(errs.iter().all(|&e| e < 1e-8));
                    continue;
                }
                // first-order forward difference: error shrinks about tenfold per decade
                let order = (errs[0] / errs[1]).log10();
                assert!(order >= 0.9, "p={p} observed order {order} ({errs:?})");
            }
        }
    }

    #[test]
    fn monotone_and_related_to_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [1.5, 2.0, 3.0] {
            let r = RheologyParams::new(p, 0.1).unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for _ in 0..10_000 {
                let a = random_mat(&mut rng, 3.0);
                let b = random_mat(&mut rng, 3.0);
                let lhs = (r.stress(&a).unwrap() - r.stress(&b).unwrap()).ddot(&(a - b));
                assert!(lhs > 0.0);
                let vv = (r.v_tensor(&a).unwrap() - r.v_tensor(&b).unwrap()).norm_sq();
                let ratio = lhs / vv;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            // bracket of the equivalence constants stays away from 0 and infinity
            assert!(lo > 0.1 && hi < 10.0, "p={p}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn jacobian_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = RheologyParams::new(3.0, 0.1).unwrap();
        for _ in 0..100 {
            let (a, h, k) = (random_mat(&mut rng, 2.0), random_mat(&mut rng, 1.0), random_mat(&mut rng, 1.0));
            let lhs = r.stress_derivative(&a, &h).unwrap().ddot(&k);
            let rhs = r.stress_derivative(&a, &k).unwrap().ddot(&h);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
