//! Rejection-sampling ground truth for the information-gain acquisition.
//!
//! Joint posterior samples of every function are drawn on a discrete grid plus
//! a set of probe points. Each sample's feasible grid argmin is its x⋆; samples
//! are grouped by x⋆ and the accepted values at the probes give conditional
//! moments. Entropies are Gaussian with per-function variances (correlations
//! between functions are ignored).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::GpState;

/// Groups with fewer accepted samples than this are dropped.
pub const MIN_ACCEPT: usize = 50;
const BATCH: usize = 512;
const EIG_REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RsConfig {
    /// Candidate minimizer locations; for the dynamic-grid variant, x⋆ samples.
    pub grid: Vec<Vec<f64>>,
    /// Number of joint function samples.
    pub n_joint: usize,
    /// Number of x⋆ Monte-Carlo draws from the empirical minimizer distribution;
    /// 0 averages over groups exactly with their empirical weights.
    pub m_star: usize,
    pub seed: u64,
    pub min_accept: usize,
}

impl RsConfig {
    pub fn new(grid: Vec<Vec<f64>>, n_joint: usize, seed: u64) -> Self {
        Self { grid, n_joint, m_star: 0, seed, min_accept: MIN_ACCEPT }
    }
}

/// Low-rank square root of a posterior covariance: cov ≈ S Sᵀ.
fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > EIG_REL_TOL * max).collect();
    let mut s = DMatrix::zeros(cov.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        s.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    s
}

/// Per-group sufficient statistics of accepted samples at the probes.
#[derive(Clone, Debug)]
pub struct RsSummary {
    /// Accepted samples per grid index.
    pub counts: Vec<usize>,
    /// Samples with no feasible grid point.
    pub no_feasible: usize,
    n_probes: usize,
    n_functions: usize,
    /// `[group][function][probe]` sums of values and squares.
    sums: Vec<Vec<Vec<f64>>>,
    sq: Vec<Vec<Vec<f64>>>,
    total_sum: Vec<Vec<f64>>,
    total_sq: Vec<Vec<f64>>,
}

impl RsSummary {
    pub fn n_joint(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.no_feasible
    }

    /// Empirical mean/variance of every function at each probe among samples whose x⋆ is grid point `g`.
    pub fn conditional_moments(&self, g: usize) -> Option<Vec<Vec<(f64, f64)>>> {
        let n = self.counts[g];
        if n < 2 {
            return None;
        }
        let nf = n as f64;
        Some(
            (0..self.n_probes)
                .map(|p| {
                    (0..self.n_functions)
                        .map(|i| {
                            let m = self.sums[g][i][p] / nf;
                            (m, (self.sq[g][i][p] / nf - m * m).max(0.0) * nf / (nf - 1.0))
                        })
                        .collect()
                })
                .collect(),
        )
    }

    fn total_var(&self, i: usize, p: usize) -> f64 {
        let n = self.n_joint() as f64;
        let m = self.total_sum[i][p] / n;
        (self.total_sq[i][p] / n - m * m).max(0.0) * n / (n - 1.0)
    }
}

/// Draw joint samples and accumulate per-x⋆ statistics.
pub fn rs_summary(states: &[GpState], grid: &[Vec<f64>], probes: &[Vec<f64>], n_joint: usize, seed: u64) -> Result<RsSummary> {
    if grid.is_empty() || n_joint < 2 {
        return Err(Error::Contract("rejection sampling needs a non-empty grid and n_joint ≥ 2".into()));
    }
    let g = grid.len();
    let p = probes.len();
    let nf = states.len();
    let mut pts = grid.to_vec();
    pts.extend(probes.iter().cloned());
    let moments: Vec<(DVector<f64>, DMatrix<f64>)> = states
        .iter()
        .map(|s| {
            let (m, c) = s.joint(&pts);
            (m, sqrt_factor(&c))
        })
        .collect();
    let mut rng = crate::domain::substream(seed, &[0x5253]);
    let mut summary = RsSummary {
        counts: vec![0; g],
        no_feasible: 0,
        n_probes: p,
        n_functions: nf,
        sums: vec![vec![vec![0.0; p]; nf]; g],
        sq: vec![vec![vec![0.0; p]; nf]; g],
        total_sum: vec![vec![0.0; p]; nf],
        total_sq: vec![vec![0.0; p]; nf],
    };
    let mut done = 0;
    while done < n_joint {
        let b = BATCH.min(n_joint - done);
        let vals: Vec<DMatrix<f64>> = moments
            .iter()
            .map(|(m, s)| {
                let z = DMatrix::from_fn(s.ncols(), b, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut v = s * z;
                for mut col in v.column_iter_mut() {
                    col += m;
                }
                v
            })
            .collect();
        for col in 0..b {
            let mut best: Option<usize> = None;
            for gi in 0..g {
                if (1..nf).all(|i| vals[i][(gi, col)] >= 0.0) && best.is_none_or(|bi| vals[0][(gi, col)] < vals[0][(bi, col)]) {
                    best = Some(gi);
                }
            }
            for i in 0..nf {
                for pi in 0..p {
                    let v = vals[i][(g + pi, col)];
                    summary.total_sum[i][pi] += v;
                    summary.total_sq[i][pi] += v * v;
                }
            }
            match best {
                None => summary.no_feasible += 1,
                Some(gi) => {
                    summary.counts[gi] += 1;
                    for i in 0..nf {
                        for pi in 0..p {
                            let v = vals[i][(g + pi, col)];
                            summary.sums[gi][i][pi] += v;
                            summary.sq[gi][i][pi] += v * v;
                        }
                    }
                }
            }
        }
        done += b;
    }
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct RsAcquisition {
    /// `[probe][function]` information gain in nats.
    pub per_function: Vec<Vec<f64>>,
    /// Grid points that were some sample's x⋆ but fell below the acceptance floor.
    pub dropped_groups: usize,
    pub summary: RsSummary,
}

impl RsAcquisition {
    pub fn total(&self, p: usize) -> f64 {
        self.per_function[p].iter().sum()
    }

    pub fn task(&self, p: usize, functions: &[usize]) -> f64 {
        functions.iter().map(|&i| self.per_function[p][i]).sum()
    }
}

/// RS estimate of the per-function acquisition at each probe.
///
/// The conditional latent variance is the exact predictive variance scaled by
/// the ratio of the group's empirical variance to the empirical variance of
/// all samples, which removes the Monte-Carlo error shared by both.
pub fn rs_acquisition(states: &[GpState], probes: &[Vec<f64>], cfg: &RsConfig) -> Result<RsAcquisition> {
    let summary = rs_summary(states, &cfg.grid, probes, cfg.n_joint, cfg.seed)?;
    let nf = states.len();
    let kept: Vec<usize> = (0..cfg.grid.len()).filter(|&g| summary.counts[g] >= cfg.min_accept.max(2)).collect();
    let dropped_groups = (0..cfg.grid.len()).filter(|&g| summary.counts[g] > 0 && summary.counts[g] < cfg.min_accept.max(2)).count();
    if kept.is_empty() {
        return Err(Error::Contract("no x⋆ group reached the acceptance floor".into()));
    }
    // Weights: empirical frequencies, or m_star draws from them.
    let mut weights = vec![0.0; kept.len()];
    if cfg.m_star == 0 {
        for (w, &g) in weights.iter_mut().zip(&kept) {
            *w = summary.counts[g] as f64;
        }
    } else {
        let total: usize = kept.iter().map(|&g| summary.counts[g]).sum();
        let mut rng = crate::domain::substream(cfg.seed, &[0x4d53]);
        for _ in 0..cfg.m_star {
            let mut u = rng.random_range(0..total);
            for (w, &g) in weights.iter_mut().zip(&kept) {
                if u < summary.counts[g] {
                    *w += 1.0;
                    break;
                }
                u -= summary.counts[g];
            }
        }
    }
    let wsum: f64 = weights.iter().sum();
    let preds: Vec<Vec<crate::gp::Prediction>> = states.iter().map(|s| probes.iter().map(|x| s.predict(x)).collect()).collect();
    let cond: Vec<Vec<Vec<(f64, f64)>>> = kept.iter().map(|&g| summary.conditional_moments(g).expect("count ≥ 2")).collect();
    let per_function = (0..probes.len())
        .map(|p| {
            (0..nf)
                .map(|i| {
                    let pr = &preds[i][p];
                    let nu = states[i].hyper.noise_variance;
                    let all = summary.total_var(i, p);
                    let h_unc = 0.5 * pr.var_obs.ln();
                    let mut h_cond = 0.0;
                    for (w, c) in weights.iter().zip(&cond) {
                        if *w == 0.0 {
                            continue;
                        }
                        let ratio = if all > 0.0 { c[p][i].1 / all } else { 1.0 };
                        h_cond += w * 0.5 * (pr.var_latent * ratio + nu).max(1e-300).ln();
                    }
                    h_unc - h_cond / wsum
                })
                .collect()
        })
        .collect();
    Ok(RsAcquisition { per_function, dropped_groups, summary })
}

/// Moments at the probes among samples whose feasible grid minimizer is `grid[x_star]`,
/// and the number of accepted samples.
pub fn rs_conditional_moments(
    states: &[GpState],
    x_star: usize,
    probes: &[Vec<f64>],
    cfg: &RsConfig,
) -> Result<(Vec<Vec<(f64, f64)>>, usize)> {
    if x_star >= cfg.grid.len() {
        return Err(Error::Contract("x⋆ index outside the grid".into()));
    }
    let s = rs_summary(states, &cfg.grid, probes, cfg.n_joint, cfg.seed)?;
    let n = s.counts[x_star];
    s.conditional_moments(x_star)
        .map(|m| (m, n))
        .ok_or_else(|| Error::Contract(format!("only {n} samples accepted for the requested x⋆")))
}
