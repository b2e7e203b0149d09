//! Slice sampling of GP hyperparameters in log space.
//!
//! Each chain's state is `[log amplitude, log ℓ_1..ℓ_D, log noise variance]`.
//! Priors are normal in log space: N(0, 1) for amplitude and lengthscales,
//! N(−4, 2²) for the noise variance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood, GpHyper};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::optim::pattern_search;

const LOG_SCALE_PRIOR: (f64, f64) = (0.0, 1.0);
const LOG_NOISE_PRIOR: (f64, f64) = (-4.0, 2.0);
const MAP_BOX: (f64, f64) = (-12.0, 4.0);
const SLICE_WIDTH: f64 = 1.0;
const MAX_STEP_OUT: usize = 20;
const MAX_SHRINK: usize = 100;

fn normal_logpdf(x: f64, (mu, sd): (f64, f64)) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln()
}

/// How hyperparameters are obtained for each function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperMode {
    /// Slice sampling with this many burn-in sweeps per refresh.
    Sample { burn_in: usize },
    /// Known hyperparameters, one per function.
    Fixed(Vec<GpHyper>),
    /// Point estimate maximizing the log posterior; every sample shares it.
    Map,
}

/// Persistent Markov chain state for one function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperChain {
    pub family: KernelFamily,
    pub params: Vec<f64>,
    /// Noise variance held fixed instead of sampled (noise-free problems).
    #[serde(default)]
    pub fixed_noise: Option<f64>,
}

impl HyperChain {
    /// Chain started at the prior medians.
    pub fn new(family: KernelFamily, dim: usize) -> Self {
        let mut params = vec![LOG_SCALE_PRIOR.0; dim + 1];
        params.push(LOG_NOISE_PRIOR.0);
        Self { family, params, fixed_noise: None }
    }

    /// Chain whose noise variance stays at `noise`.
    pub fn with_fixed_noise(family: KernelFamily, dim: usize, noise: f64) -> Self {
        let mut c = Self::new(family, dim);
        c.params[dim + 1] = noise.ln();
        c.fixed_noise = Some(noise);
        c
    }

    /// Number of coordinates that are sampled or optimized.
    fn free(&self) -> usize {
        if self.fixed_noise.is_some() {
            self.params.len() - 1
        } else {
            self.params.len()
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len() - 2
    }

    fn hyper_from(&self, params: &[f64], mean: f64) -> GpHyper {
        let d = self.dim();
        GpHyper {
            kernel: KernelSpec {
                family: self.family,
                amplitude: params[0].exp(),
                lengthscales: params[1..=d].iter().map(|v| v.exp()).collect(),
            },
            noise_variance: self.fixed_noise.unwrap_or_else(|| params[d + 1].exp()),
            mean,
        }
    }

    pub fn current(&self, mean: f64) -> GpHyper {
        self.hyper_from(&self.params, mean)
    }

    fn log_prior(&self, params: &[f64]) -> f64 {
        let d = self.dim();
        let scales = params[..=d].iter().map(|p| normal_logpdf(*p, LOG_SCALE_PRIOR)).sum::<f64>();
        if self.fixed_noise.is_some() {
            scales
        } else {
            scales + normal_logpdf(params[d + 1], LOG_NOISE_PRIOR)
        }
    }

    /// Unnormalized log posterior; non-finite likelihoods map to −∞ so the
    /// slice sampler rejects them.
    pub fn log_posterior(&self, params: &[f64], inputs: &[Vec<f64>], targets: &[f64], mean: f64) -> f64 {
        if params.iter().any(|p| !p.is_finite() || p.abs() > 30.0) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(params);
        match log_marginal_likelihood(&self.hyper_from(params, mean), inputs, targets) {
            Ok(ll) if ll.is_finite() => lp + ll,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Move the chain to a local maximum of the log posterior by compass
    /// search in log space, starting from the current state.
    pub fn optimize(&mut self, inputs: &[Vec<f64>], targets: &[f64], mean: f64) {
        let (lo, hi) = (MAP_BOX.0, MAP_BOX.1);
        let to_unit = |p: &[f64]| p.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect::<Vec<_>>();
        let from_unit = |u: &[f64]| u.iter().map(|v| lo + v * (hi - lo)).collect::<Vec<_>>();
        let free = self.free();
        let start = to_unit(&self.params[..free]);
        let tail = self.params[free..].to_vec();
        let full = |u: &[f64]| {
            let mut p = from_unit(u);
            p.extend_from_slice(&tail);
            p
        };
        let (u, _) = pattern_search(
            |u| {
                let lp = self.log_posterior(&full(u), inputs, targets, mean);
                if lp.is_finite() { -lp } else { f64::INFINITY }
            },
            &start,
            0.1,
            1e-4,
            200 * free,
        );
        self.params = full(&u);
    }

    /// One sweep of univariate slice updates over every coordinate.
    pub fn sweep<R: Rng>(&mut self, inputs: &[Vec<f64>], targets: &[f64], mean: f64, rng: &mut R) {
        let mut params = self.params.clone();
        let mut current = self.log_posterior(&params, inputs, targets, mean);
        for i in 0..self.free() {
            let chain = &*self;
            let (v, lp) = slice_1d(params[i], current, SLICE_WIDTH, rng, |v| {
                let mut p = params.clone();
                p[i] = v;
                chain.log_posterior(&p, inputs, targets, mean)
            });
            params[i] = v;
            current = lp;
        }
        self.params = params;
    }
}

/// Univariate slice sampling with stepping out and shrinkage.
pub fn slice_1d<R: Rng, F: FnMut(f64) -> f64>(x0: f64, logp0: f64, width: f64, rng: &mut R, mut logp: F) -> (f64, f64) {
    let logp0 = if logp0.is_finite() { logp0 } else { logp(x0) };
    if !logp0.is_finite() {
        return (x0, logp0);
    }
    let level = logp0 + rng.random::<f64>().ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let mut steps = 0;
    while steps < MAX_STEP_OUT && logp(lo) > level {
        lo -= width;
        steps += 1;
    }
    steps = 0;
    while steps < MAX_STEP_OUT && logp(hi) > level {
        hi += width;
        steps += 1;
    }
    for _ in 0..MAX_SHRINK {
        let x = lo + (hi - lo) * rng.random::<f64>();
        let lp = logp(x);
        if lp > level {
            return (x, lp);
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    (x0, logp0)
}

/// Data for one function: inputs on the unit box, targets, prior mean.
pub struct FunctionData<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [f64],
    pub mean: f64,
}

/// Draw `count` joint hyperparameter samples (one `GpHyper` per function each).
///
/// In sampling mode every chain first runs `burn_in` sweeps, then one sweep
/// per retained sample.
pub fn sample_hyperparameters<R: Rng>(
    mode: &HyperMode,
    chains: &mut [HyperChain],
    data: &[FunctionData<'_>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<GpHyper>>> {
    if count == 0 {
        return Err(Error::Contract("hyperparameter sample count must be ≥ 1".into()));
    }
    match mode {
        HyperMode::Fixed(h) => {
            if h.len() != data.len() {
                return Err(Error::Contract(format!(
                    "{} fixed hyperparameter sets supplied for {} functions",
                    h.len(),
                    data.len()
                )));
            }
            Ok(vec![h.clone(); count])
        }
        HyperMode::Sample { burn_in } => {
            if chains.len() != data.len() {
                return Err(Error::Contract("one chain per function required".into()));
            }
            let mut per_function = Vec::with_capacity(data.len());
            for (chain, d) in chains.iter_mut().zip(data) {
                for _ in 0..*burn_in {
                    chain.sweep(d.inputs, d.targets, d.mean, rng);
                }
                let mut draws = Vec::with_capacity(count);
                for _ in 0..count {
                    chain.sweep(d.inputs, d.targets, d.mean, rng);
                    draws.push(chain.current(d.mean));
                }
                per_function.push(draws);
            }
            Ok((0..count).map(|j| per_function.iter().map(|f| f[j].clone()).collect()).collect())
        }
        HyperMode::Map => {
            if chains.len() != data.len() {
                return Err(Error::Contract("one chain per function required".into()));
            }
            let point: Vec<GpHyper> = chains
                .iter_mut()
                .zip(data)
                .map(|(chain, d)| {
                    chain.optimize(d.inputs, d.targets, d.mean);
                    chain.current(d.mean)
                })
                .collect();
            Ok(vec![point; count])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::substream;
    use crate::gp::GpState;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn slice_sampler_recovers_standard_normal() {
        let mut rng = substream(5, &[]);
        let mut x = 0.0;
        let mut lp = 0.0;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let r = slice_1d(x, lp, 1.0, &mut rng, |v| -0.5 * v * v);
            x = r.0;
            lp = r.1;
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
    }

    #[test]
    fn fixed_mode_returns_configured_hypers() {
        let h = GpHyper::new(KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, 0.1, 1).unwrap(), 0.01, 0.0).unwrap();
        let mut rng = substream(1, &[]);
        let out = sample_hyperparameters(
            &HyperMode::Fixed(vec![h.clone()]),
            &mut [],
            &[FunctionData { inputs: &[], targets: &[], mean: 0.0 }],
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, vec![vec![h]]);
    }

    fn generated_data(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let h = GpHyper::new(KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, 0.1, 1).unwrap(), 0.0, 0.0).unwrap();
        let mut rng = substream(seed, &[]);
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 + rng.random::<f64>()) / 50.0]).collect();
        let (_, cov) = GpState::prior(h).joint(&xs);
        let l = crate::linalg::cholesky_jittered(&cov, 1.0).unwrap().l;
        let z: nalgebra::DVector<f64> = nalgebra::DVector::from_fn(50, |_, _| StandardNormal.sample(&mut rng));
        let f = l * z;
        let ys = (0..50)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                f[i] + 0.1 * e
            })
            .collect();
        (xs, ys)
    }

    #[test]
    fn posterior_lengthscale_near_generating_value() {
        let (xs, ys) = generated_data(21);
        let mut chains = vec![HyperChain::new(KernelFamily::SquaredExponential, 1)];
        let mut rng = substream(2, &[]);
        let data = [FunctionData { inputs: &xs, targets: &ys, mean: 0.0 }];
        let draws = sample_hyperparameters(&HyperMode::Sample { burn_in: 50 }, &mut chains, &data, 51, &mut rng).unwrap();
        let mut ls: Vec<f64> = draws.iter().map(|d| d[0].kernel.lengthscales[0]).collect();
        ls.sort_by(f64::total_cmp);
        let median = ls[25];
        assert!((0.05..=0.2).contains(&median), "median lengthscale {median}");
    }

    #[test]
    fn same_seed_same_samples() {
        let (xs, ys) = generated_data(3);
        let data = [FunctionData { inputs: &xs, targets: &ys, mean: 0.0 }];
        let run = || {
            let mut chains = vec![HyperChain::new(KernelFamily::Matern52, 1)];
            let mut rng = substream(9, &[1]);
            sample_hyperparameters(&HyperMode::Sample { burn_in: 3 }, &mut chains, &data, 4, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_data_samples_prior() {
        let mut chains = vec![HyperChain::new(KernelFamily::SquaredExponential, 2)];
        let mut rng = substream(4, &[]);
        let data = [FunctionData { inputs: &[], targets: &[], mean: 0.0 }];
        let draws = sample_hyperparameters(&HyperMode::Sample { burn_in: 10 }, &mut chains, &data, 200, &mut rng).unwrap();
        let mean_log_amp: f64 = draws.iter().map(|d| d[0].kernel.amplitude.ln()).sum::<f64>() / 200.0;
        assert!(mean_log_amp.abs() < 0.4);
    }

    #[test]
    fn map_estimate_improves_posterior_and_is_shared() {
        let (xs, ys) = generated_data(21);
        let mut chains = vec![HyperChain::new(KernelFamily::SquaredExponential, 1)];
        let start = chains[0].log_posterior(&chains[0].params, &xs, &ys, 0.0);
        let mut rng = substream(3, &[]);
        let data = [FunctionData { inputs: &xs, targets: &ys, mean: 0.0 }];
        let out = sample_hyperparameters(&HyperMode::Map, &mut chains, &data, 3, &mut rng).unwrap();
        assert!(chains[0].log_posterior(&chains[0].params, &xs, &ys, 0.0) > start);
        assert!(out.iter().all(|s| s == &out[0]));
        let ls = out[0][0].kernel.lengthscales[0];
        assert!((0.04..0.25).contains(&ls), "{ls}");
    }

    #[test]
    fn fixed_noise_is_never_moved() {
        let (xs, ys) = generated_data(5);
        let mut chains = vec![HyperChain::with_fixed_noise(KernelFamily::SquaredExponential, 1, 1e-6)];
        let mut rng = substream(4, &[]);
        let data = [FunctionData { inputs: &xs, targets: &ys, mean: 0.0 }];
        for mode in [HyperMode::Sample { burn_in: 3 }, HyperMode::Map] {
            let out = sample_hyperparameters(&mode, &mut chains, &data, 4, &mut rng).unwrap();
            assert!(out.iter().all(|s| s[0].noise_variance == 1e-6));
        }
    }
}
