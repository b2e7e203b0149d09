//! Expectation propagation for the minimizer-conditioned predictive.
//!
//! For one hyperparameter sample and one minimizer sample `x⋆`, the joint GP
//! posterior of every function on `Z = [x_f^1..x_f^N, x⋆]` is tilted by
//!
//! * `Ψ(x_f^n)`: either `x_f^n` is infeasible or `f(x_f^n) > f(x⋆)`,
//! * `Γ(x⋆)`: every constraint is non-negative at `x⋆`.
//!
//! Each `Ψ` factor is approximated by a Gaussian site on `δ_n = f(x_f^n) − f(x⋆)`
//! (a rank-one 2×2 precision on the pair) and one scalar site per constraint;
//! each `Γ` factor by one scalar site per constraint. Sites act as
//! pseudo-observations on the posterior of `Z`, so no prior inverse is needed
//! and constraint data may be decoupled from the objective's.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::gp::GpState;
use crate::normal::{cdf, inv_mills, log_cdf, log_pdf};

pub const CONVERGENCE_TOL: f64 = 1e-4;
pub const MAX_SWEEPS: usize = 200;
pub const DAMPING_DECAY: f64 = 0.99;
pub const MIN_DAMPING: f64 = 1e-6;
const PSD_TOL: f64 = 1e-8;
const MIN_Z: f64 = 1e-300;

/// Gaussian site parameters in natural form.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteFactors {
    /// Precision κ_n of the site on δ_n; the 2×2 form is κ_n·uuᵀ with u = [1, −1].
    pub psi_prec: Vec<f64>,
    /// Natural mean ν_n of the site on δ_n; the 2-vector form is ν_n·u.
    pub psi_mean: Vec<f64>,
    /// `c_prec[k][n]`, `c_mean[k][n]`: sites on c_k(x_f^n).
    pub c_prec: Vec<Vec<f64>>,
    pub c_mean: Vec<Vec<f64>>,
    /// Sites on c_k(x⋆).
    pub gamma_prec: Vec<f64>,
    pub gamma_mean: Vec<f64>,
}

impl SiteFactors {
    pub fn zeros(n_obj: usize, n_cons: usize) -> Self {
        Self {
            psi_prec: vec![0.0; n_obj],
            psi_mean: vec![0.0; n_obj],
            c_prec: vec![vec![0.0; n_obj]; n_cons],
            c_mean: vec![vec![0.0; n_obj]; n_cons],
            gamma_prec: vec![0.0; n_cons],
            gamma_mean: vec![0.0; n_cons],
        }
    }

    pub fn n_obj(&self) -> usize {
        self.psi_prec.len()
    }

    pub fn n_cons(&self) -> usize {
        self.gamma_prec.len()
    }

    /// Ã_n on [f(x_f^n), f(x⋆)].
    pub fn a_tilde(&self, n: usize) -> Matrix2<f64> {
        let k = self.psi_prec[n];
        Matrix2::new(k, -k, -k, k)
    }

    /// b̃_n on [f(x_f^n), f(x⋆)].
    pub fn b_tilde(&self, n: usize) -> Vector2<f64> {
        Vector2::new(self.psi_mean[n], -self.psi_mean[n])
    }

    fn seed_empty_from(&mut self, new: &SiteFactors) {
        for n in 0..self.n_obj() {
            let empty = self.psi_prec[n] == 0.0
                && self.psi_mean[n] == 0.0
                && (0..self.n_cons()).all(|k| self.c_prec[k][n] == 0.0 && self.c_mean[k][n] == 0.0);
            if empty {
                self.psi_prec[n] = new.psi_prec[n];
                self.psi_mean[n] = new.psi_mean[n];
                for k in 0..self.n_cons() {
                    self.c_prec[k][n] = new.c_prec[k][n];
                    self.c_mean[k][n] = new.c_mean[k][n];
                }
            }
        }
        for k in 0..self.n_cons() {
            if self.gamma_prec[k] == 0.0 && self.gamma_mean[k] == 0.0 {
                self.gamma_prec[k] = new.gamma_prec[k];
                self.gamma_mean[k] = new.gamma_mean[k];
            }
        }
    }

    fn damp_from(&mut self, new: &SiteFactors, eps: f64) {
        let mix = |a: &mut f64, b: f64| *a = eps * b + (1.0 - eps) * *a;
        for n in 0..self.n_obj() {
            mix(&mut self.psi_prec[n], new.psi_prec[n]);
            mix(&mut self.psi_mean[n], new.psi_mean[n]);
        }
        for k in 0..self.n_cons() {
            for n in 0..self.n_obj() {
                mix(&mut self.c_prec[k][n], new.c_prec[k][n]);
                mix(&mut self.c_mean[k][n], new.c_mean[k][n]);
            }
            mix(&mut self.gamma_prec[k], new.gamma_prec[k]);
            mix(&mut self.gamma_mean[k], new.gamma_mean[k]);
        }
    }
}

/// Cavity on δ = f(x_n) − f(x⋆) and on each c_k(x_n).
#[derive(Clone, Debug, PartialEq)]
pub struct PsiCavity {
    pub delta_mean: f64,
    pub delta_var: f64,
    pub c_mean: Vec<f64>,
    pub c_var: Vec<f64>,
}

/// Moments of the tilted distribution cavity × Ψ, plus log Z.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTilted {
    pub log_z: f64,
    pub delta_mean: f64,
    pub delta_var: f64,
    pub c_mean: Vec<f64>,
    pub c_var: Vec<f64>,
    /// First and second derivatives of log Z with respect to the cavity means.
    pub d1_delta: f64,
    pub d2_delta: f64,
    pub d1_c: Vec<f64>,
    pub d2_c: Vec<f64>,
}

/// Tilted moments for `Z = Φ(α)∏Φ(α_k) + 1 − ∏Φ(α_k)`, computed in log space.
pub fn psi_tilted(cav: &PsiCavity) -> Option<PsiTilted> {
    let sd = cav.delta_var.sqrt();
    let alpha = cav.delta_mean / sd;
    let alphas: Vec<f64> = cav.c_mean.iter().zip(&cav.c_var).map(|(m, v)| m / v.sqrt()).collect();
    let log_p: f64 = alphas.iter().map(|a| log_cdf(*a)).sum();
    // Z = PΦ(α) + (1 − P), both terms non-negative.
    let one_minus_p = -log_p.exp_m1();
    let pz = (log_p + log_cdf(alpha)).exp();
    let z = pz + one_minus_p;
    if !(z > MIN_Z) {
        return None;
    }
    let log_z = z.ln();
    let r = (log_p + log_pdf(alpha) - log_z).exp();
    let d1_delta = r / sd;
    let d2_delta = -(r * r + r * alpha) / cav.delta_var;
    // Z − 1 = −PΦ(−α)
    let z_minus_one_over_z = -(log_p + log_cdf(-alpha) - log_z).exp();
    let mut d1_c = Vec::with_capacity(alphas.len());
    let mut d2_c = Vec::with_capacity(alphas.len());
    for (ak, vk) in alphas.iter().zip(&cav.c_var) {
        let sdk = vk.sqrt();
        let g1 = z_minus_one_over_z * inv_mills(*ak) / sdk;
        d1_c.push(g1);
        d2_c.push(-g1 * ak / sdk - g1 * g1);
    }
    Some(PsiTilted {
        log_z,
        delta_mean: cav.delta_mean + cav.delta_var * d1_delta,
        delta_var: cav.delta_var + cav.delta_var * cav.delta_var * d2_delta,
        c_mean: cav.c_mean.iter().zip(&cav.c_var).zip(&d1_c).map(|((m, v), g)| m + v * g).collect(),
        c_var: cav.c_var.iter().zip(&d2_c).map(|(v, g)| v + v * v * g).collect(),
        d1_delta,
        d2_delta,
        d1_c,
        d2_c,
    })
}

/// Site natural parameters matching a tilted mean/variance given the cavity:
/// precision −g2/(1 + v g2), natural mean (g1 − m g2)/(1 + v g2).
fn site_from_derivatives(mean: f64, var: f64, g1: f64, g2: f64) -> Option<(f64, f64)> {
    let denom = 1.0 + var * g2;
    if !(denom > 0.0) || !g1.is_finite() || !g2.is_finite() {
        return None;
    }
    Some((-g2 / denom, (g1 - mean * g2) / denom))
}

/// New Ψ site `(κ, ν, [(d̃_k, ẽ_k)])` from a cavity.
pub fn psi_site_update(cav: &PsiCavity) -> Option<(f64, f64, Vec<(f64, f64)>)> {
    let t = psi_tilted(cav)?;
    let (kappa, nu) = site_from_derivatives(cav.delta_mean, cav.delta_var, t.d1_delta, t.d2_delta)?;
    let mut cs = Vec::with_capacity(cav.c_mean.len());
    for k in 0..cav.c_mean.len() {
        cs.push(site_from_derivatives(cav.c_mean[k], cav.c_var[k], t.d1_c[k], t.d2_c[k])?);
    }
    Some((kappa, nu, cs))
}

/// Tilted mean/variance of N(mean, var) truncated to c ≥ 0, and the site.
pub fn gamma_site_update(mean: f64, var: f64) -> Option<((f64, f64), (f64, f64))> {
    let sd = var.sqrt();
    let a = mean / sd;
    let lam = inv_mills(a);
    let g1 = lam / sd;
    let g2 = -lam * (a + lam) / var;
    let site = site_from_derivatives(mean, var, g1, g2)?;
    Some(((mean + var * g1, var + var * var * g2), site))
}

/// x-independent inputs: the posterior of every function on Z.
#[derive(Clone, Debug)]
pub struct EpProblem {
    pub z: Vec<Vec<f64>>,
    pub n_obj: usize,
    pub prior_mean: Vec<DVector<f64>>,
    pub prior_cov: Vec<DMatrix<f64>>,
    /// Prior signal variance of each function, the reference for PSD tolerances.
    pub scale: Vec<f64>,
}

impl EpProblem {
    /// `states[0]` models the objective, `states[1..]` the constraints.
    pub fn new(states: &[GpState], x_star: &[f64], objective_inputs: &[Vec<f64>]) -> Self {
        let mut z = objective_inputs.to_vec();
        z.push(x_star.to_vec());
        let (prior_mean, prior_cov) = states.iter().map(|s| s.joint(&z)).unzip();
        let scale = states.iter().map(|s| s.hyper.kernel.variance()).collect();
        Self { z, n_obj: objective_inputs.len(), prior_mean, prior_cov, scale }
    }

    pub fn n_cons(&self) -> usize {
        self.prior_mean.len() - 1
    }

    fn star(&self) -> usize {
        self.n_obj
    }

    /// Site precision matrix and natural mean for function i.
    fn site_matrices(&self, sites: &SiteFactors, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let np = self.n_obj + 1;
        let s = self.star();
        let mut sm = DMatrix::zeros(np, np);
        let mut t = DVector::zeros(np);
        if i == 0 {
            for n in 0..self.n_obj {
                let (k, v) = (sites.psi_prec[n], sites.psi_mean[n]);
                sm[(n, n)] += k;
                sm[(s, s)] += k;
                sm[(n, s)] -= k;
                sm[(s, n)] -= k;
                t[n] += v;
                t[s] -= v;
            }
        } else {
            let k = i - 1;
            for n in 0..self.n_obj {
                sm[(n, n)] = sites.c_prec[k][n];
                t[n] = sites.c_mean[k][n];
            }
            sm[(s, s)] = sites.gamma_prec[k];
            t[s] = sites.gamma_mean[k];
        }
        (sm, t)
    }

    /// q-moments for function i, with W = (I + SC)⁻¹S and w = (I + SC)⁻¹(t − Sμ).
    fn posterior(&self, sites: &SiteFactors, i: usize) -> Option<Moments> {
        let (sm, t) = self.site_matrices(sites, i);
        let c = &self.prior_cov[i];
        let mu = &self.prior_mean[i];
        let np = c.nrows();
        let a = DMatrix::identity(np, np) + &sm * c;
        let lu = a.lu();
        let w_mat = lu.solve(&sm)?;
        let w_vec = lu.solve(&(t - &sm * mu))?;
        let w_mat = (&w_mat + w_mat.transpose()) * 0.5;
        let mean = mu + c * &w_vec;
        let cov = c - c * &w_mat * c;
        let cov = (&cov + cov.transpose()) * 0.5;
        Some(Moments { mean, cov, w_mat, w_vec })
    }
}

#[derive(Clone, Debug)]
struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    w_mat: DMatrix<f64>,
    w_vec: DVector<f64>,
}

fn is_psd(m: &DMatrix<f64>, scale: f64) -> bool {
    let n = m.nrows();
    if n == 0 {
        return true;
    }
    let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let shift = PSD_TOL * trace.abs().max(scale).max(1e-300);
    if !trace.is_finite() || (0..n).any(|i| m[(i, i)] < -shift) {
        return false;
    }
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    shifted.cholesky().is_some()
}

/// Converged (or best-effort) EP approximation for one (Θ, x⋆) pair.
#[derive(Clone, Debug)]
pub struct EpSolution {
    pub sites: SiteFactors,
    /// q-means and covariances of every function on Z.
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub converged: bool,
    pub sweeps: usize,
    pub damping: f64,
    /// Site updates skipped because of an invalid cavity or a vanishing Z.
    pub skipped_updates: usize,
    pub z: Vec<Vec<f64>>,
    pub n_obj: usize,
    w_mats: Vec<DMatrix<f64>>,
    w_vecs: Vec<DVector<f64>>,
}

fn all_moments(prob: &EpProblem, sites: &SiteFactors) -> Option<Vec<Moments>> {
    (0..prob.prior_mean.len()).map(|i| prob.posterior(sites, i)).collect()
}

fn max_change(a: &[Moments], b: &[Moments]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (&x.mean - &y.mean).amax().max((&x.cov - &y.cov).amax()))
        .fold(0.0, f64::max)
}

/// Full set of undamped site updates from the current q. Returns the count of skipped updates.
fn propose(prob: &EpProblem, q: &[Moments], current: &SiteFactors) -> (SiteFactors, usize) {
    let mut next = current.clone();
    let mut skipped = 0;
    let s = prob.star();
    let kc = prob.n_cons();
    let qf = &q[0];
    for n in 0..prob.n_obj {
        let dm = qf.mean[n] - qf.mean[s];
        let dv = qf.cov[(n, n)] + qf.cov[(s, s)] - 2.0 * qf.cov[(n, s)];
        let scale = (qf.cov[(n, n)] + qf.cov[(s, s)]).abs();
        if !(dv > 1e-14 * scale) || dv <= 0.0 {
            skipped += 1;
            continue;
        }
        let cav_prec = 1.0 / dv - current.psi_prec[n];
        if !(cav_prec > 0.0) {
            skipped += 1;
            continue;
        }
        let delta_var = 1.0 / cav_prec;
        let delta_mean = delta_var * (dm / dv - current.psi_mean[n]);
        let mut c_mean = Vec::with_capacity(kc);
        let mut c_var = Vec::with_capacity(kc);
        let mut ok = true;
        for k in 0..kc {
            let qk = &q[k + 1];
            let v = qk.cov[(n, n)];
            let p = 1.0 / v - current.c_prec[k][n];
            if !(v > 0.0) || !(p > 0.0) {
                ok = false;
                break;
            }
            c_var.push(1.0 / p);
            c_mean.push((qk.mean[n] / v - current.c_mean[k][n]) / p);
        }
        if !ok {
            skipped += 1;
            continue;
        }
        match psi_site_update(&PsiCavity { delta_mean, delta_var, c_mean, c_var }) {
            Some((kappa, nu, cs)) => {
                next.psi_prec[n] = kappa;
                next.psi_mean[n] = nu;
                for (k, (d, e)) in cs.into_iter().enumerate() {
                    next.c_prec[k][n] = d;
                    next.c_mean[k][n] = e;
                }
            }
            None => skipped += 1,
        }
    }
    for k in 0..kc {
        let qk = &q[k + 1];
        let v = qk.cov[(s, s)];
        let p = 1.0 / v - current.gamma_prec[k];
        if !(v > 0.0) || !(p > 0.0) {
            skipped += 1;
            continue;
        }
        let g = 1.0 / p;
        let h = g * (qk.mean[s] / v - current.gamma_mean[k]);
        match gamma_site_update(h, g) {
            Some((_, (prec, mean))) => {
                next.gamma_prec[k] = prec;
                next.gamma_mean[k] = mean;
            }
            None => skipped += 1,
        }
    }
    (next, skipped)
}

/// Run damped parallel EP sweeps, starting from `init` sites if given
/// (which must match the problem's shape) or from zero sites.
pub fn run_ep(prob: &EpProblem, init: Option<SiteFactors>) -> Result<EpSolution> {
    let shape_ok = |s: &SiteFactors| s.n_obj() == prob.n_obj && s.n_cons() == prob.n_cons();
    let warm = init.is_some();
    let mut sites = match init {
        Some(s) if shape_ok(&s) => s,
        Some(_) => return Err(Error::Contract("initial sites do not match the problem shape".into())),
        None => SiteFactors::zeros(prob.n_obj, prob.n_cons()),
    };
    let psd_moments = |s: &SiteFactors| all_moments(prob, s).filter(|m| m.iter().zip(&prob.scale).all(|(x, sc)| is_psd(&x.cov, *sc)));
    let mut q = psd_moments(&sites).ok_or_else(|| Error::Ep("initial approximation is not positive semi-definite".into()))?;
    if warm {
        // Sites without a previous value get one local update against the warm q.
        let (proposal, _) = propose(prob, &q, &sites);
        let mut seeded = sites.clone();
        seeded.seed_empty_from(&proposal);
        if let Some(nq) = psd_moments(&seeded) {
            sites = seeded;
            q = nq;
        }
    }
    let mut eps = 1.0;
    let mut skipped_total = 0;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let (proposal, skipped) = propose(prob, &q, &sites);
        let mut trial = sites.clone();
        trial.damp_from(&proposal, eps);
        match all_moments(prob, &trial).filter(|m| m.iter().zip(&prob.scale).all(|(x, sc)| is_psd(&x.cov, *sc))) {
            Some(nq) => {
                sweeps += 1;
                skipped_total += skipped;
                let change = max_change(&q, &nq);
                sites = trial;
                q = nq;
                eps *= DAMPING_DECAY;
                if change < CONVERGENCE_TOL {
                    converged = true;
                    break;
                }
            }
            None => {
                eps *= 0.5;
                if eps < MIN_DAMPING {
                    return Err(Error::Ep(format!("no positive semi-definite update with damping ≥ {MIN_DAMPING}")));
                }
            }
        }
    }
    let (means, covs, w_mats, w_vecs) = q.into_iter().fold(
        (vec![], vec![], vec![], vec![]),
        |(mut a, mut b, mut c, mut d), m| {
            a.push(m.mean);
            b.push(m.cov);
            c.push(m.w_mat);
            d.push(m.w_vec);
            (a, b, c, d)
        },
    );
    Ok(EpSolution {
        sites,
        means,
        covs,
        converged,
        sweeps,
        damping: eps,
        skipped_updates: skipped_total,
        z: prob.z.clone(),
        n_obj: prob.n_obj,
        w_mats,
        w_vecs,
    })
}

/// Largest change in q-moments caused by one undamped parallel update from `sites`.
pub fn fixed_point_residual(prob: &EpProblem, sites: &SiteFactors) -> Option<f64> {
    let q = all_moments(prob, sites)?;
    let (proposal, _) = propose(prob, &q, sites);
    let mut next = sites.clone();
    next.damp_from(&proposal, 1.0);
    Some(max_change(&q, &all_moments(prob, &next)?))
}

/// Per-function predictive moments at one x: without conditioning and
/// conditioned on x⋆ (latent values; add noise for observation variances).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedMoments {
    pub unconditioned: Vec<(f64, f64)>,
    pub conditioned: Vec<(f64, f64)>,
    /// True when Var[f(x) − f(x⋆)] was degenerate and Ψ(x) was left out.
    pub psi_inactive: bool,
}

/// Cached per-function cross terms `L⁻¹ k(X, Z)` for fast queries.
#[derive(Clone, Debug)]
pub struct QueryCache {
    cross: Vec<DMatrix<f64>>,
    /// W_f C_f[:, x⋆], used for Cov_q(f(x), f(x⋆)).
    wc_star: DVector<f64>,
}

impl EpSolution {
    pub fn query_cache(&self, states: &[GpState], prob: &EpProblem) -> QueryCache {
        let cross = states.iter().map(|s| s.whitened_cross_mat(&self.z)).collect();
        let star = self.n_obj;
        let wc_star = &self.w_mats[0] * prob.prior_cov[0].column(star);
        QueryCache { cross, wc_star }
    }

    /// Moments of every function at x after adding the x-dependent factor Ψ(x).
    pub fn conditioned_moments(&self, states: &[GpState], cache: &QueryCache, x: &[f64]) -> ConditionedMoments {
        self.conditioned_moments_many(states, cache, &[x.to_vec()]).pop().expect("one point")
    }

    /// Batched [`Self::conditioned_moments`].
    pub fn conditioned_moments_many(&self, states: &[GpState], cache: &QueryCache, xs: &[Vec<f64>]) -> Vec<ConditionedMoments> {
        let nf = states.len();
        let g = xs.len();
        let star = self.n_obj;
        let mut unc_mean = Vec::with_capacity(nf);
        let mut unc_var = Vec::with_capacity(nf);
        let mut q_mean = Vec::with_capacity(nf);
        let mut q_var = Vec::with_capacity(nf);
        let mut cov_f_star = DVector::zeros(0);
        for (i, s) in states.iter().enumerate() {
            let (mu, var, v) = s.predict_raw_many(xs);
            let kz = s.hyper.kernel.cross(&self.z, xs);
            let c_zx = if s.is_empty() { kz } else { kz - cache.cross[i].tr_mul(&v) };
            let wc = &self.w_mats[i] * &c_zx;
            let qm = &mu + c_zx.tr_mul(&self.w_vecs[i]);
            let qv = DVector::from_iterator(g, (0..g).map(|j| var[j] - c_zx.column(j).dot(&wc.column(j))));
            if i == 0 {
                cov_f_star = DVector::from_iterator(g, (0..g).map(|j| c_zx[(star, j)] - c_zx.column(j).dot(&cache.wc_star)));
            }
            unc_mean.push(mu);
            unc_var.push(var);
            q_mean.push(qm);
            q_var.push(qv);
        }
        let m_star = self.means[0][star];
        let v_star = self.covs[0][(star, star)];
        (0..g)
            .map(|j| {
                let unconditioned = (0..nf).map(|i| (unc_mean[i][j], unc_var[i][j].max(0.0))).collect();
                let qm: Vec<f64> = q_mean.iter().map(|m| m[j]).collect();
                let qv: Vec<f64> = q_var.iter().map(|v| v[j]).collect();
                let (conditioned, psi_inactive) = tilt_by_psi(&qm, &qv, cov_f_star[j], m_star, v_star);
                ConditionedMoments { unconditioned, conditioned, psi_inactive }
            })
            .collect()
    }
}

/// Apply the single factor Ψ(x) to the q-marginals at x.
fn tilt_by_psi(q_mean: &[f64], q_var: &[f64], cov_f_star: f64, m_star: f64, v_star: f64) -> (Vec<(f64, f64)>, bool) {
    let nf = q_mean.len();
    let mut conditioned: Vec<(f64, f64)> = q_mean.iter().cloned().zip(q_var.iter().cloned()).collect();
    let s = q_var[0] + v_star - 2.0 * cov_f_star;
    let scale = (q_var[0].abs() + v_star.abs()).max(1e-300);
    if !(s > 1e-12 * scale) {
        return (conditioned, true);
    }
    let sd = s.sqrt();
    let alpha = (q_mean[0] - m_star) / sd;
    // A vanishing constraint variance makes its factor a step.
    let mut log_p = 0.0;
    let mut alphas = Vec::with_capacity(nf - 1);
    for i in 1..nf {
        let a = if q_var[i] > 0.0 {
            q_mean[i] / q_var[i].sqrt()
        } else if q_mean[i] >= 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        log_p += log_cdf(a);
        alphas.push(a);
    }
    let one_minus_p = -log_p.exp_m1();
    let z = (log_p + log_cdf(alpha)).exp() + one_minus_p;
    if !(z > MIN_Z) {
        return (conditioned, true);
    }
    let log_z = z.ln();
    let r = (log_p + log_pdf(alpha) - log_z).exp();
    let cf = q_var[0] - cov_f_star;
    conditioned[0] = (q_mean[0] + cf * r / sd, q_var[0] - r * (r + alpha) / s * cf * cf);
    let ratio = -(log_p + log_cdf(-alpha) - log_z).exp();
    for i in 1..nf {
        let a = alphas[i - 1];
        if !a.is_finite() || q_var[i] <= 0.0 {
            continue;
        }
        let sdk = q_var[i].sqrt();
        let g1 = ratio * inv_mills(a) / sdk;
        let g2 = -g1 * a / sdk - g1 * g1;
        conditioned[i] = (q_mean[i] + q_var[i] * g1, q_var[i] + q_var[i] * q_var[i] * g2);
    }
    (conditioned, false)
}

/// Probability that a Gaussian is non-negative.
pub fn prob_nonnegative(mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if mean >= 0.0 { 1.0 } else { 0.0 };
    }
    cdf(mean / var.sqrt())
}
