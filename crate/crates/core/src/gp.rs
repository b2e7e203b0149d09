//! Exact GP posteriors with incremental Cholesky maintenance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{self, cholesky_jittered, solve_lower, solve_lower_t};

/// Latent variances below this (relative to the kernel variance) are flagged.
pub const NEGATIVE_VARIANCE_WARN: f64 = -1e-6;
/// Minimum squared pivot accepted by a rank-one extension, relative to the kernel variance.
pub const MIN_PIVOT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub mean: f64,
}

impl GpHyper {
    pub fn new(kernel: KernelSpec, noise_variance: f64, mean: f64) -> Result<Self> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::Contract(format!("noise variance must be ≥ 0, got {noise_variance}")));
        }
        Ok(Self { kernel, noise_variance, mean })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var_latent: f64,
    pub var_obs: f64,
    /// Set when the raw latent variance was below the warning threshold before clamping.
    pub warning: bool,
}

/// Posterior of one function under fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct GpState {
    pub hyper: GpHyper,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Lower Cholesky factor of K + (ν + jitter) I.
    pub chol: DMatrix<f64>,
    /// (K + νI)⁻¹ (y − mean).
    pub alpha: DVector<f64>,
    pub jitter: f64,
}

impl GpState {
    pub fn prior(hyper: GpHyper) -> Self {
        Self {
            hyper,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
        }
    }

    pub fn fit(hyper: GpHyper, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Contract("inputs and targets differ in length".into()));
        }
        let dim = hyper.kernel.dim();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Contract(format!("all inputs must have dimension {dim}")));
        }
        let mut k = hyper.kernel.gram(&inputs);
        for i in 0..inputs.len() {
            k[(i, i)] += hyper.noise_variance;
        }
        let factor = cholesky_jittered(&k, hyper.kernel.variance())?;
        let resid = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - hyper.mean));
        let alpha = solve_lower_t(&factor.l, &solve_lower(&factor.l, &resid));
        Ok(Self { hyper, inputs, targets, chol: factor.l, alpha, jitter: factor.jitter })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `L⁻¹ k(X, x)`.
    pub fn whitened_cross(&self, x: &[f64]) -> DVector<f64> {
        let k = self.hyper.kernel.cross_vec(&self.inputs, x);
        if self.is_empty() {
            return k;
        }
        solve_lower(&self.chol, &k)
    }

    /// `L⁻¹ k(X, Z)` for a set of points.
    pub fn whitened_cross_mat(&self, zs: &[Vec<f64>]) -> DMatrix<f64> {
        let k = self.hyper.kernel.cross(&self.inputs, zs);
        if self.is_empty() {
            return k;
        }
        linalg::solve_lower_mat(&self.chol, &k)
    }

    /// Posterior mean and unclamped latent variance, plus the whitened cross-covariance.
    pub fn predict_raw(&self, x: &[f64]) -> (f64, f64, DVector<f64>) {
        let kx = self.hyper.kernel.cross_vec(&self.inputs, x);
        let mean = self.hyper.mean + kx.dot(&self.alpha);
        if self.is_empty() {
            return (mean, self.hyper.kernel.variance(), kx);
        }
        let v = solve_lower(&self.chol, &kx);
        (mean, self.hyper.kernel.variance() - v.norm_squared(), v)
    }

    /// Batched `predict_raw`: means, unclamped latent variances, and `L⁻¹ k(X, xs)`.
    pub fn predict_raw_many(&self, xs: &[Vec<f64>]) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let k = self.hyper.kernel.cross(&self.inputs, xs);
        let mean = k.tr_mul(&self.alpha).add_scalar(self.hyper.mean);
        let kv = self.hyper.kernel.variance();
        if self.is_empty() {
            return (mean, DVector::from_element(xs.len(), kv), k);
        }
        let v = linalg::solve_lower_mat(&self.chol, &k);
        let var = DVector::from_iterator(xs.len(), v.column_iter().map(|c| kv - c.norm_squared()));
        (mean, var, v)
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        let (mean, raw, _) = self.predict_raw(x);
        let warning = raw < NEGATIVE_VARIANCE_WARN * self.hyper.kernel.variance();
        let var_latent = raw.max(0.0);
        Prediction { mean, var_latent, var_obs: var_latent + self.hyper.noise_variance, warning }
    }

    /// Posterior mean vector and latent covariance matrix at a set of points.
    pub fn joint(&self, zs: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let kzx = self.hyper.kernel.cross(zs, &self.inputs);
        let mean = DVector::from_iterator(zs.len(), (0..zs.len()).map(|i| self.hyper.mean + kzx.row(i).dot(&self.alpha.transpose())));
        let mut cov = self.hyper.kernel.gram(zs);
        if !self.is_empty() {
            let b = linalg::solve_lower_mat(&self.chol, &kzx.transpose());
            cov -= b.transpose() * &b;
        }
        (mean, (&cov + cov.transpose()) * 0.5)
    }

    /// Gradient of the posterior mean with respect to x.
    pub fn mean_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (xi, a) in self.inputs.iter().zip(self.alpha.iter()) {
            for (gd, kd) in g.iter_mut().zip(self.hyper.kernel.grad_x(x, xi)) {
                *gd += a * kd;
            }
        }
        g
    }

    /// Add one observation with an O(N²) append to the Cholesky factor.
    pub fn extend(&self, x: Vec<f64>, y: f64) -> Result<Self> {
        if x.len() != self.hyper.kernel.dim() {
            return Err(Error::Contract("observation dimension does not match kernel".into()));
        }
        let kern = &self.hyper.kernel;
        let cross = kern.cross_vec(&self.inputs, &x);
        let diag = kern.variance() + self.hyper.noise_variance + self.jitter;
        let chol = linalg::append(&self.chol, &cross, diag, MIN_PIVOT * kern.variance())?;
        let mut inputs = self.inputs.clone();
        inputs.push(x);
        let mut targets = self.targets.clone();
        targets.push(y);
        let resid = DVector::from_iterator(targets.len(), targets.iter().map(|t| t - self.hyper.mean));
        let alpha = solve_lower_t(&chol, &solve_lower(&chol, &resid));
        Ok(Self { hyper: self.hyper.clone(), inputs, targets, chol, alpha, jitter: self.jitter })
    }

    /// `extend` after checking that `hyper` matches the hyperparameters of the fit.
    pub fn extend_with(&self, hyper: &GpHyper, x: Vec<f64>, y: f64) -> Result<Self> {
        if *hyper != self.hyper {
            return Err(Error::Contract("hyperparameters changed since the state was fitted".into()));
        }
        self.extend(x, y)
    }

    /// Extend by several points, refitting from scratch if an append fails.
    pub fn extend_many(&self, points: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut s = self.clone();
        for (i, (x, y)) in points.iter().enumerate() {
            match s.extend(x.clone(), *y) {
                Ok(next) => s = next,
                Err(Error::Numerical(_)) => {
                    let mut inputs = s.inputs.clone();
                    let mut targets = s.targets.clone();
                    for (x, y) in &points[i..] {
                        inputs.push(x.clone());
                        targets.push(*y);
                    }
                    return GpState::fit(self.hyper.clone(), inputs, targets);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(s)
    }
}

/// Log marginal likelihood of the data under `hyper`.
pub fn log_marginal_likelihood(hyper: &GpHyper, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    let n = inputs.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut k = hyper.kernel.gram(inputs);
    for i in 0..n {
        k[(i, i)] += hyper.noise_variance;
    }
    let f = cholesky_jittered(&k, hyper.kernel.variance())?;
    let r = DVector::from_iterator(n, targets.iter().map(|y| y - hyper.mean));
    let w = solve_lower(&f.l, &r);
    let logdet: f64 = (0..n).map(|i| f.l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * w.norm_squared() - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::substream;
    use crate::kernel::KernelFamily;
    use proptest::prelude::*;
    use rand::Rng;

    fn hyper(ls: f64, noise: f64) -> GpHyper {
        GpHyper::new(KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, ls, 1).unwrap(), noise, 0.0).unwrap()
    }

    /// Dense posterior via an explicit matrix inverse.
    fn dense_oracle(h: &GpHyper, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> (f64, f64) {
        let n = xs.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| h.kernel.eval(&xs[i], &xs[j]));
        for i in 0..n {
            k[(i, i)] += h.noise_variance;
        }
        let kinv = k.try_inverse().unwrap();
        let kx = DVector::from_fn(n, |i, _| h.kernel.eval(&xs[i], x));
        let y = DVector::from_column_slice(ys);
        let mean = h.mean + (kx.transpose() * &kinv * y)[0];
        let var = h.kernel.eval(x, x) - (kx.transpose() * &kinv * &kx)[0];
        (mean, var)
    }

    #[test]
    fn empty_state_is_prior() {
        let mut h = hyper(0.2, 0.1);
        h.mean = 1.5;
        let s = GpState::fit(h, vec![], vec![]).unwrap();
        let p = s.predict(&[0.3]);
        assert_eq!(p.mean, 1.5);
        assert_eq!(p.var_latent, 1.0);
        assert!((p.var_obs - 1.1).abs() < 1e-15);
    }

    #[test]
    fn single_noiseless_observation_interpolates() {
        let s = GpState::fit(hyper(0.2, 0.0), vec![vec![0.4]], vec![0.7]).unwrap();
        let p = s.predict(&[0.4]);
        assert!((p.mean - 0.7).abs() < 1e-12);
        assert!(p.var_latent <= 1e-10);
    }

    #[test]
    fn two_points_match_closed_form() {
        // 2×2 inverse written out by hand.
        let h = hyper(0.3, 0.05);
        let xs = vec![vec![0.2], vec![0.5]];
        let ys = [1.0, -0.5];
        let s = GpState::fit(h.clone(), xs.clone(), ys.to_vec()).unwrap();
        let x = [0.35];
        let (a, b, c) = (1.0 + 0.05, h.kernel.eval(&xs[0], &xs[1]), 1.0 + 0.05);
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        let k = [h.kernel.eval(&xs[0], &x), h.kernel.eval(&xs[1], &x)];
        let w = [inv[0][0] * k[0] + inv[0][1] * k[1], inv[1][0] * k[0] + inv[1][1] * k[1]];
        let mean = w[0] * ys[0] + w[1] * ys[1];
        let var = 1.0 - (w[0] * k[0] + w[1] * k[1]);
        let p = s.predict(&x);
        assert!((p.mean - mean).abs() < 1e-10);
        assert!((p.var_latent - var).abs() < 1e-10);
    }

    #[test]
    fn far_point_recovers_prior_variance() {
        let s = GpState::fit(hyper(0.1, 0.01), vec![vec![0.0], vec![0.1]], vec![1.0, 2.0]).unwrap();
        let p = s.predict(&[5.0]);
        assert!((p.var_latent - 1.0).abs() < 1e-6);
    }

    #[test]
    fn five_points_match_dense_solve_on_grid() {
        let h = hyper(0.1, 0.01);
        let mut rng = substream(11, &[]);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>()]).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let s = GpState::fit(h.clone(), xs.clone(), ys.clone()).unwrap();
        for i in 0..100 {
            let x = [i as f64 / 99.0];
            let (m, v) = dense_oracle(&h, &xs, &ys, &x);
            let p = s.predict(&x);
            assert!((p.mean - m).abs() < 1e-8);
            assert!((p.var_latent - v.max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn joint_covariance_diagonal_matches_predict() {
        let h = hyper(0.2, 0.01);
        let s = GpState::fit(h, vec![vec![0.1], vec![0.6]], vec![0.3, -0.2]).unwrap();
        let zs = vec![vec![0.2], vec![0.9]];
        let (m, c) = s.joint(&zs);
        for (i, z) in zs.iter().enumerate() {
            let p = s.predict(z);
            assert!((m[i] - p.mean).abs() < 1e-12);
            assert!((c[(i, i)] - p.var_latent).abs() < 1e-12);
        }
    }

    #[test]
    fn extend_empty_equals_fresh_fit() {
        let h = hyper(0.2, 0.01);
        let a = GpState::prior(h.clone()).extend(vec![0.3], 0.4).unwrap();
        let b = GpState::fit(h, vec![vec![0.3]], vec![0.4]).unwrap();
        for x in [0.0, 0.3, 0.77] {
            let (pa, pb) = (a.predict(&[x]), b.predict(&[x]));
            assert!((pa.mean - pb.mean).abs() < 1e-14);
            assert!((pa.var_latent - pb.var_latent).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicate_input_depends_on_noise() {
        let noisy = GpState::fit(hyper(0.2, 0.01), vec![vec![0.3]], vec![0.4]).unwrap();
        assert!(noisy.extend(vec![0.3], 0.5).is_ok());
        let exact = GpState::fit(hyper(0.2, 0.0), vec![vec![0.3]], vec![0.4]).unwrap();
        assert!(matches!(exact.extend(vec![0.3], 0.5), Err(Error::Numerical(_))));
        // The batch path recovers through a jittered refit.
        assert!(exact.extend_many(&[(vec![0.3], 0.5)]).is_ok());
    }

    #[test]
    fn changed_hyperparameters_rejected() {
        let s = GpState::fit(hyper(0.2, 0.01), vec![vec![0.3]], vec![0.4]).unwrap();
        let other = hyper(0.3, 0.01);
        assert!(matches!(s.extend_with(&other, vec![0.5], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn mean_gradient_matches_finite_difference() {
        let h = GpHyper::new(KernelSpec::new(KernelFamily::Matern52, 1.0, vec![0.3, 0.2]).unwrap(), 0.01, 0.2).unwrap();
        let xs = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.7, 0.3]];
        let s = GpState::fit(h, xs, vec![0.5, -1.0, 0.3]).unwrap();
        let x = [0.4, 0.45];
        let g = s.mean_gradient(&x);
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += 1e-6;
            xm[d] -= 1e-6;
            let fd = (s.predict(&xp).mean - s.predict(&xm).mean) / 2e-6;
            assert!((fd - g[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn log_marginal_likelihood_matches_dense() {
        let h = hyper(0.25, 0.02);
        let xs = vec![vec![0.1], vec![0.4], vec![0.8]];
        let ys = [0.3, -0.1, 0.9];
        let mut k = DMatrix::from_fn(3, 3, |i, j| h.kernel.eval(&xs[i], &xs[j]));
        for i in 0..3 {
            k[(i, i)] += 0.02;
        }
        let y = DVector::from_column_slice(&ys);
        let quad = (y.transpose() * k.clone().try_inverse().unwrap() * &y)[0];
        let expected = -0.5 * quad - 0.5 * k.determinant().ln() - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((log_marginal_likelihood(&h, &xs, &ys).unwrap() - expected).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn extension_equals_refit(seed in any::<u64>(), n in 1usize..50) {
            let h = GpHyper::new(KernelSpec::new(KernelFamily::SquaredExponential, 1.0, vec![0.3, 0.5]).unwrap(), 0.01, 0.1).unwrap();
            let mut rng = substream(seed, &[]);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut inc = GpState::prior(h.clone());
            for (x, y) in xs.iter().zip(&ys) {
                inc = inc.extend(x.clone(), *y).unwrap();
            }
            let full = GpState::fit(h, xs, ys).unwrap();
            for _ in 0..10 {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                let (a, b) = (inc.predict(&x), full.predict(&x));
                prop_assert!((a.mean - b.mean).abs() < 1e-8);
                prop_assert!((a.var_latent - b.var_latent).abs() < 1e-8);
            }
        }

        #[test]
        fn noiseless_interpolation_and_nonnegative_variance(seed in any::<u64>(), n in 1usize..12) {
            let h = hyper(0.15, 0.0);
            let mut rng = substream(seed, &[7]);
            // well-separated inputs keep the Gram matrix well conditioned
            let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5 * rng.random::<f64>()) / n as f64]).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let s = GpState::fit(h, xs.clone(), ys.clone()).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                let p = s.predict(x);
                prop_assert!((p.mean - y).abs() < 1e-8);
                prop_assert!(p.var_latent >= 0.0);
            }
            let p = s.predict(&[rng.random::<f64>()]);
            prop_assert!(p.var_latent >= 0.0 && p.var_obs >= 0.0);
        }
    }
}
