//! Separable PESC acquisition, the EIC baseline, cost adjustment and
//! global maximization over the unit box.
//!
//! All information quantities are in nats. Per-function values are rounded to
//! a multiple of 2⁻⁴⁰ so that sums over any partition of functions are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::shifted_halton;
use crate::ep::{run_ep, EpProblem, EpSolution, QueryCache, SiteFactors};
use crate::error::{Error, Result};
use crate::gp::GpState;
use crate::normal::{cdf, pdf};
use crate::optim::pattern_search;

/// Variance floor inside the logarithms, relative to the kernel variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
const QUANTUM: f64 = 1_099_511_627_776.0; // 2⁴⁰

fn quantize(v: f64) -> f64 {
    (v * QUANTUM).round() / QUANTUM
}

/// `½ log σ²_unc − ½ log σ²_cond` with both variances floored; the flag reports flooring.
pub fn entropy_reduction(unconditioned: f64, conditioned: f64, floor: f64) -> (f64, bool) {
    let floored = unconditioned < floor || conditioned < floor || !conditioned.is_finite();
    let u = unconditioned.max(floor);
    let c = if conditioned.is_finite() { conditioned.max(floor) } else { u };
    (0.5 * (u.ln() - c.ln()), floored)
}

/// A subset of function indices evaluated jointly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub functions: Vec<usize>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, functions: Vec<usize>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::Contract("a task needs at least one function".into()));
        }
        Ok(Self { id: id.into(), functions })
    }
}

/// One (Θʲ, x⋆ʲ) pair with its fitted states and EP solution.
#[derive(Clone, Debug)]
pub struct SampleContext {
    pub states: Vec<GpState>,
    pub x_star: Vec<f64>,
    pub x_star_feasible: bool,
    pub ep: EpSolution,
    cache: QueryCache,
}

/// Everything needed to evaluate the acquisition at arbitrary inputs.
#[derive(Clone, Debug)]
pub struct AcquisitionState {
    pub samples: Vec<SampleContext>,
    /// Samples whose EP failed irrecoverably and were left out.
    pub dropped: usize,
    /// Samples whose EP hit the sweep cap and are used as-is.
    pub unconverged: usize,
    pub total_sweeps: usize,
}

/// Input to [`AcquisitionState::build`]: per-function states, x⋆ and its feasibility flag.
pub struct SampleInput {
    pub states: Vec<GpState>,
    pub x_star: Vec<f64>,
    pub x_star_feasible: bool,
}

/// Map sites of a previous solution onto new objective inputs by exact input equality.
pub fn warm_sites(prev: &EpSolution, objective_inputs: &[Vec<f64>]) -> Option<SiteFactors> {
    let old = &prev.sites;
    let kc = old.n_cons();
    if objective_inputs.iter().any(|x| Some(x.len()) != prev.z.last().map(|z| z.len())) {
        return None;
    }
    let mut sites = SiteFactors::zeros(objective_inputs.len(), kc);
    let mut used = vec![false; prev.n_obj];
    for (n, x) in objective_inputs.iter().enumerate() {
        if let Some(m) = (0..prev.n_obj).find(|&m| !used[m] && prev.z[m] == *x) {
            used[m] = true;
            sites.psi_prec[n] = old.psi_prec[m];
            sites.psi_mean[n] = old.psi_mean[m];
            for k in 0..kc {
                sites.c_prec[k][n] = old.c_prec[k][m];
                sites.c_mean[k][n] = old.c_mean[k][m];
            }
        }
    }
    sites.gamma_prec = old.gamma_prec.clone();
    sites.gamma_mean = old.gamma_mean.clone();
    Some(sites)
}

impl AcquisitionState {
    /// Run EP for every sample; `warm` supplies previous solutions to start from
    /// (matched by sample index when x⋆ is unchanged).
    pub fn build(inputs: Vec<SampleInput>, warm: Option<&AcquisitionState>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Contract("acquisition needs at least one minimizer sample".into()));
        }
        let mut samples = Vec::with_capacity(inputs.len());
        let mut dropped = 0;
        let mut unconverged = 0;
        let mut total_sweeps = 0;
        let mut last_err = None;
        for (j, s) in inputs.into_iter().enumerate() {
            let objective_inputs = s.states[0].inputs.clone();
            let prob = EpProblem::new(&s.states, &s.x_star, &objective_inputs);
            let init = warm
                .and_then(|w| w.samples.get(j))
                .filter(|prev| prev.x_star == s.x_star && prev.states.len() == s.states.len())
                .and_then(|prev| warm_sites(&prev.ep, &objective_inputs));
            match run_ep(&prob, init) {
                Ok(ep) => {
                    if !ep.converged {
                        unconverged += 1;
                    }
                    total_sweeps += ep.sweeps;
                    let cache = ep.query_cache(&s.states, &prob);
                    samples.push(SampleContext {
                        states: s.states,
                        x_star: s.x_star,
                        x_star_feasible: s.x_star_feasible,
                        ep,
                        cache,
                    });
                }
                Err(e) => {
                    dropped += 1;
                    last_err = Some(e);
                }
            }
        }
        if samples.is_empty() {
            return Err(last_err.unwrap_or_else(|| Error::Ep("every EP run failed".into())));
        }
        Ok(Self { samples, dropped, unconverged, total_sweeps })
    }

    pub fn n_functions(&self) -> usize {
        self.samples[0].states.len()
    }

    /// α̃ᵢ at every x for every function (`out[x][i]`), plus the number of floored variances.
    pub fn per_function_many(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, usize) {
        let nf = self.n_functions();
        let mut acc = vec![vec![0.0; nf]; xs.len()];
        let mut floored = 0;
        for s in &self.samples {
            let cms = s.ep.conditioned_moments_many(&s.states, &s.cache, xs);
            for (a, cm) in acc.iter_mut().zip(&cms) {
                for i in 0..nf {
                    let h = &s.states[i].hyper;
                    let nu = h.noise_variance;
                    let (v, fl) = entropy_reduction(
                        cm.unconditioned[i].1 + nu,
                        cm.conditioned[i].1 + nu,
                        VARIANCE_FLOOR * h.kernel.variance(),
                    );
                    a[i] += v;
                    floored += fl as usize;
                }
            }
        }
        let m = self.samples.len() as f64;
        for a in acc.iter_mut() {
            for v in a.iter_mut() {
                *v = quantize(*v / m);
            }
        }
        (acc, floored)
    }

    pub fn per_function_all(&self, x: &[f64]) -> Vec<f64> {
        self.per_function_many(&[x.to_vec()]).0.pop().expect("one point")
    }

    pub fn per_function_alpha(&self, i: usize, x: &[f64]) -> f64 {
        self.per_function_all(x)[i]
    }

    pub fn task_alpha(&self, functions: &[usize], x: &[f64]) -> f64 {
        sum_task(&self.per_function_all(x), functions)
    }

    pub fn task_alpha_many(&self, functions: &[usize], xs: &[Vec<f64>]) -> Vec<f64> {
        self.per_function_many(xs).0.iter().map(|a| sum_task(a, functions)).collect()
    }
}

fn sum_task(alphas: &[f64], functions: &[usize]) -> f64 {
    functions.iter().map(|&i| alphas[i]).sum()
}

/// EIC from latent predictive moments of f and the constraints. Without an
/// incumbent only the feasibility probability is returned.
pub fn eic_value(f: (f64, f64), constraints: &[(f64, f64)], eta: Option<f64>) -> f64 {
    let pf: f64 = constraints.iter().map(|&(m, v)| crate::ep::prob_nonnegative(m, v)).product();
    match eta {
        None => pf,
        Some(eta) => {
            let (mu, var) = f;
            let ei = if var <= 0.0 {
                (eta - mu).max(0.0)
            } else {
                let sd = var.sqrt();
                let z = (eta - mu) / sd;
                sd * (z * cdf(z) + pdf(z))
            };
            ei * pf
        }
    }
}

/// EIC averaged over hyperparameter samples (`states[j][i]`).
pub fn eic_averaged(states: &[Vec<GpState>], xs: &[Vec<f64>], eta: Option<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; xs.len()];
    for per_fn in states {
        let preds: Vec<_> = per_fn.iter().map(|s| s.predict_raw_many(xs)).collect();
        for (j, a) in acc.iter_mut().enumerate() {
            let m = |i: usize| (preds[i].0[j], preds[i].1[j].max(0.0));
            let cons: Vec<(f64, f64)> = (1..per_fn.len()).map(m).collect();
            *a += eic_value(m(0), &cons, eta);
        }
    }
    let n = states.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

/// Expected evaluation cost ζ_t(x) per task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    #[default]
    Unit,
    /// Fixed cost per task, indexed like the task list.
    PerTask(Vec<f64>),
}

impl CostModel {
    pub fn cost(&self, task: usize, _x: &[f64]) -> f64 {
        match self {
            CostModel::Unit => 1.0,
            CostModel::PerTask(c) => c.get(task).copied().unwrap_or(1.0),
        }
    }
}

/// `α / ζ`.
pub fn cost_adjusted(alpha: f64, cost: f64) -> Result<f64> {
    if !(cost > 0.0) {
        return Err(Error::Contract(format!("task cost must be positive, got {cost}")));
    }
    Ok(alpha / cost)
}

/// Grid size and local-refinement tolerance for acquisition maximization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub grid_size: usize,
    pub tol: f64,
}

impl SearchSettings {
    pub const SLOW: Self = Self { grid_size: 1000, tol: 1e-6 };
    pub const FAST: Self = Self { grid_size: 200, tol: 1e-3 };
}

/// Maximize a batched objective over the unit box: quasi-random grid plus
/// `extra` points, then compass-search refinement of the best point.
pub fn maximize<F, R>(f: F, dim: usize, settings: SearchSettings, extra: &[Vec<f64>], rng: &mut R) -> (Vec<f64>, f64)
where
    F: Fn(&[Vec<f64>]) -> Vec<f64>,
    R: Rng,
{
    let mut grid = shifted_halton(settings.grid_size.max(1), dim, rng);
    grid.extend(extra.iter().cloned());
    let vals = f(&grid);
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] || (vals[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    let x0 = grid[best].clone();
    let f0 = vals[best];
    let step0 = 0.5 / (settings.grid_size.max(1) as f64).powf(1.0 / dim as f64);
    let (x, neg) = pattern_search(
        |x| {
            let v = f(&[x.to_vec()])[0];
            if v.is_nan() { f64::INFINITY } else { -v }
        },
        &x0,
        step0,
        settings.tol,
        100 + 60 * dim,
    );
    if -neg > f0 { (x, -neg) } else { (x0, f0) }
}

/// Maximize a task's acquisition.
pub fn maximize_task_alpha<R: Rng>(
    state: &AcquisitionState,
    task: &TaskSpec,
    settings: SearchSettings,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let dim = state.samples[0].x_star.len();
    maximize(|xs| state.task_alpha_many(&task.functions, xs), dim, settings, &[], rng)
}
