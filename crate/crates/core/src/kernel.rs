//! Stationary ARD covariance functions on the rescaled unit box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Signal standard deviation.
    pub amplitude: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, amplitude: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::Contract("kernel needs at least one dimension".into()));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Contract(format!("amplitude must be positive, got {amplitude}")));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Contract(format!("lengthscale must be positive, got {l}")));
        }
        Ok(Self { family, amplitude, lengthscales })
    }

    pub fn iso(family: KernelFamily, amplitude: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(family, amplitude, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// k(x, x).
    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum()
    }

    /// Covariance as a function of the scaled squared distance.
    pub fn from_sq_dist(&self, r2: f64) -> f64 {
        let v = self.variance();
        match self.family {
            KernelFamily::SquaredExponential => v * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                v * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Covariance k(x, y); panics in debug builds on dimension mismatch.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        self.from_sq_dist(self.scaled_sq_dist(x, y))
    }

    /// Checked covariance evaluation.
    pub fn try_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::Contract(format!(
                "kernel of dimension {} evaluated at points of dimension {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval(x, y))
    }

    /// Gradient of k(x, y) with respect to x.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let r2 = self.scaled_sq_dist(x, y);
        let v = self.variance();
        // dk/d(r2) for each family
        let dk_dr2 = match self.family {
            KernelFamily::SquaredExponential => -0.5 * v * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                -5.0 / 6.0 * v * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        };
        x.iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| dk_dr2 * 2.0 * (a - b) / (l * l))
            .collect()
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.variance();
            for j in 0..i {
                let v = self.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Matrix with entries k(a_i, b_j).
    pub fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }

    pub fn cross_vec(&self, a: &[Vec<f64>], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(a.len(), a.iter().map(|p| self.eval(p, x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    #[test]
    fn zero_distance_gives_variance() {
        let se = KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, 0.3, 2).unwrap();
        assert_eq!(se.eval(&[0.2, 0.7], &[0.2, 0.7]), 1.0);
        let m = KernelSpec::iso(KernelFamily::Matern52, 1.0, 0.3, 1).unwrap();
        assert_eq!(m.eval(&[0.4], &[0.4]), 1.0);
    }

    #[test]
    fn se_closed_form() {
        let se = KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, 0.1, 1).unwrap();
        assert!((se.eval(&[0.3], &[0.4]) - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn matern_closed_form() {
        // r = 1: (1 + √5 + 5/3) e^{−√5}
        let m = KernelSpec::iso(KernelFamily::Matern52, 2.0, 0.5, 1).unwrap();
        let expected = 4.0 * (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((m.eval(&[0.0], &[0.5]) - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let se = KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, 0.1, 2).unwrap();
        assert!(matches!(se.try_eval(&[0.0], &[0.0, 1.0]), Err(Error::Contract(_))));
        assert!(KernelSpec::new(KernelFamily::Matern52, -1.0, vec![1.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern52, 1.0, vec![0.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let k = KernelSpec::new(family, 1.3, vec![0.2, 0.5]).unwrap();
            let x = [0.31, 0.62];
            let y = [0.4, 0.5];
            let g = k.grad_x(&x, &y);
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += 1e-6;
                xm[d] -= 1e-6;
                let fd = (k.eval(&xp, &y) - k.eval(&xm, &y)) / 2e-6;
                assert!((fd - g[d]).abs() < 1e-7, "{family:?} {d}: {fd} vs {}", g[d]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gram_is_psd(
            pts in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 2), 2..200),
            ls in 0.05f64..1.0,
            matern in any::<bool>(),
        ) {
            let family = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let k = KernelSpec::iso(family, 1.0, ls, 2).unwrap();
            let g = k.gram(&pts);
            let max = g.clone().symmetric_eigenvalues().max();
            prop_assert!(min_eigenvalue(&g) >= -1e-8 * max);
        }

        #[test]
        fn symmetric(a in proptest::collection::vec(-1.0f64..2.0, 3), b in proptest::collection::vec(-1.0f64..2.0, 3)) {
            let k = KernelSpec::new(KernelFamily::Matern52, 0.7, vec![0.1, 0.4, 2.0]).unwrap();
            prop_assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
        }
    }
}
