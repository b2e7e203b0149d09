//! Approximate posterior function draws with random Fourier features, and
//! minimizer samples of the sampled constrained problem.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::domain::{shifted_halton, substream};
use crate::error::{Error, Result};
use crate::gp::{GpHyper, GpState};
use crate::kernel::KernelFamily;
use crate::linalg::{cholesky_jittered, solve_lower, solve_lower_t};
use crate::optim::{minimize_constrained, Surface};

pub const DEFAULT_BASIS: usize = 1000;
pub const DEFAULT_GRID: usize = 1000;
/// Sampled constraint values above `-FEASIBILITY_TOL` count as satisfied after refinement.
pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const REFINE_TOL: f64 = 1e-6;

const PI_HI: f64 = 3.141_592_651_605_606;
const PI_LO: f64 = 1.984_187_159_361_081e-9;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const COS_COEFFS: [f64; 11] = [
    1.0,
    -0.5,
    0.041_666_666_666_666_664,
    -0.001_388_888_888_888_889,
    2.480_158_730_158_73e-5,
    -2.755_731_922_398_589e-7,
    2.087_675_698_786_81e-9,
    -1.147_074_559_772_972_5e-11,
    4.779_477_332_387_385e-14,
    -1.561_920_696_858_622_5e-16,
    4.110_317_623_312_165e-19,
];

/// Branch-free cosine for moderate arguments (|x| < 1e7), written so feature
/// loops vectorize. Reduces by multiples of π and evaluates a degree-20
/// polynomial on [−π/2, π/2].
#[inline(always)]
pub fn fast_cos(x: f64) -> f64 {
    let k = (x * std::f64::consts::FRAC_1_PI + ROUND_MAGIC) - ROUND_MAGIC;
    let r = (x - k * PI_HI) - k * PI_LO;
    let half = (k * 0.5 + ROUND_MAGIC) - ROUND_MAGIC;
    let odd = (k - 2.0 * half).abs();
    let z = r * r;
    let mut p = COS_COEFFS[10];
    for c in COS_COEFFS[..10].iter().rev() {
        p = p * z + c;
    }
    p * (1.0 - 2.0 * odd)
}

#[inline(always)]
fn weighted_cos_generic(buf: &mut [f64], w: &[f64]) {
    for (a, wi) in buf.iter_mut().zip(w) {
        *a = wi * fast_cos(*a);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weighted_cos_avx2(buf: &mut [f64], w: &[f64]) {
    weighted_cos_generic(buf, w)
}

/// `buf[m] ← w[m]·cos(buf[m])`, using AVX2 when the CPU has it. Both paths
/// perform the same unfused operations, so results are identical.
fn weighted_cos(buf: &mut [f64], w: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { weighted_cos_avx2(buf, w) };
    }
    weighted_cos_generic(buf, w)
}

fn sum4(v: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = v.chunks_exact(4);
    let rest: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for l in 0..4 {
            acc[l] += c[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + rest
}

/// `x ↦ mean + Σ_m w_m cos(ω_m·x + b_m)`.
#[derive(Clone, Debug)]
pub struct SampledFunction {
    dim: usize,
    /// Frequencies stored dimension-major: `omega[d * M + m]`.
    omega: Vec<f64>,
    phase: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
}

impl SampledFunction {
    pub fn basis_count(&self) -> usize {
        self.phase.len()
    }

    fn arguments(&self, x: &[f64], buf: &mut Vec<f64>) {
        let m = self.phase.len();
        buf.clear();
        buf.extend_from_slice(&self.phase);
        for (d, xd) in x.iter().enumerate() {
            let om = &self.omega[d * m..(d + 1) * m];
            for (a, o) in buf.iter_mut().zip(om) {
                *a += o * xd;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.phase.len());
        self.eval_with(x, &mut buf)
    }

    /// Evaluation reusing a scratch buffer.
    pub fn eval_with(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.arguments(x, buf);
        weighted_cos(buf, &self.weights);
        self.mean + sum4(buf)
    }

    pub fn eval_many(&self, xs: &[&Vec<f64>]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.phase.len());
        xs.iter().map(|x| self.eval_with(x, &mut buf)).collect()
    }
}

impl Surface for SampledFunction {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let m = self.phase.len();
        let mut args = Vec::with_capacity(m);
        self.arguments(x, &mut args);
        let mut s: Vec<f64> = args.iter().map(|a| a - std::f64::consts::FRAC_PI_2).collect();
        let mut c = args;
        weighted_cos(&mut c, &self.weights);
        weighted_cos(&mut s, &self.weights);
        let g = (0..self.dim)
            .map(|d| {
                let om = &self.omega[d * m..(d + 1) * m];
                let prod: Vec<f64> = s.iter().zip(om).map(|(a, b)| a * b).collect();
                -sum4(&prod)
            })
            .collect();
        (self.mean + sum4(&c), g)
    }
}

fn draw_features<R: Rng>(hyper: &GpHyper, count: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let dim = hyper.kernel.dim();
    let mut omega = vec![0.0; count * dim];
    let chi = ChiSquared::<f64>::new(5.0).expect("valid degrees of freedom");
    for m in 0..count {
        let scale = match hyper.kernel.family {
            KernelFamily::SquaredExponential => 1.0,
            KernelFamily::Matern52 => (5.0f64 / chi.sample(rng)).sqrt(),
        };
        for (d, l) in hyper.kernel.lengthscales.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            omega[d * count + m] = z * scale / l;
        }
    }
    let phase = (0..count).map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI).collect();
    (omega, phase)
}

/// Draw an approximate posterior sample of the function modelled by `state`.
///
/// With more basis functions than observations the weights are sampled by
/// conditioning a prior draw on the data (an N×N solve); otherwise the
/// M×M weight posterior is factorized directly.
pub fn draw_sampled_function<R: Rng>(state: &GpState, basis_count: usize, rng: &mut R) -> Result<SampledFunction> {
    if basis_count == 0 {
        return Err(Error::Contract("basis_count must be ≥ 1".into()));
    }
    let hyper = &state.hyper;
    let dim = hyper.kernel.dim();
    let (omega, phase) = draw_features(hyper, basis_count, rng);
    let scale = hyper.kernel.amplitude * (2.0 / basis_count as f64).sqrt();
    let n = state.len();
    let m = basis_count;
    let phi = DMatrix::from_fn(n, m, |i, j| {
        let arg = (0..dim).map(|d| omega[d * m + j] * state.inputs[i][d]).sum::<f64>() + phase[j];
        scale * fast_cos(arg)
    });
    let noise = hyper.noise_variance + state.jitter;
    let resid = DVector::from_iterator(n, state.targets.iter().map(|y| y - hyper.mean));
    let z: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    let theta = if n == 0 {
        z
    } else if m > n {
        let eps = DVector::from_fn(n, |_, _| {
            let e: f64 = StandardNormal.sample(rng);
            noise.sqrt() * e
        });
        let mut gram = &phi * phi.transpose();
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let l = cholesky_jittered(&gram, hyper.kernel.variance())?.l;
        let r = &resid - &phi * &z - eps;
        let a = solve_lower_t(&l, &solve_lower(&l, &r));
        z + phi.transpose() * a
    } else {
        let mut prec = phi.transpose() * &phi;
        for i in 0..m {
            prec[(i, i)] += noise;
        }
        let l = cholesky_jittered(&prec, hyper.kernel.variance())?.l;
        let mean = solve_lower_t(&l, &solve_lower(&l, &(phi.transpose() * &resid)));
        mean + solve_lower_t(&l, &z) * noise.sqrt()
    };
    let weights = theta.iter().map(|t| t * scale).collect();
    Ok(SampledFunction { dim, omega, phase, weights, mean: hyper.mean })
}

/// Result of solving one sampled constrained problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// False when no candidate satisfied the sampled constraints and the most
    /// nearly feasible point was returned instead.
    pub feasible: bool,
}

/// Minimize `funcs[0]` subject to `funcs[k] ≥ 0` (k ≥ 1) over the unit box.
///
/// Candidates are `grid` plus `extra`; the best feasible one is refined with a
/// constrained local optimizer and the refinement is kept only if it stays
/// feasible and does not increase the objective.
pub fn solve_sampled_problem<S: Surface + ?Sized>(funcs: &[&S], grid: &[Vec<f64>], extra: &[Vec<f64>]) -> Result<Solution> {
    if funcs.is_empty() {
        return Err(Error::Contract("need at least the objective".into()));
    }
    let cands: Vec<&Vec<f64>> = grid.iter().chain(extra).collect();
    if cands.is_empty() {
        return Err(Error::Contract("grid must contain at least one point".into()));
    }
    let cons = &funcs[1..];
    let mut feasible = vec![true; cands.len()];
    for c in cons {
        for (i, x) in cands.iter().enumerate() {
            if feasible[i] {
                feasible[i] = c.value(x) >= 0.0;
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in cands.iter().enumerate() {
        if feasible[i] {
            let v = funcs[0].value(x);
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let Some((bi, bv)) = best else {
        // No feasible candidate: complete min_k c_k everywhere and take its argmax.
        let mut worst = vec![f64::INFINITY; cands.len()];
        for c in cons {
            for (i, x) in cands.iter().enumerate() {
                worst[i] = worst[i].min(c.value(x));
            }
        }
        let i = (0..cands.len()).max_by(|a, b| worst[*a].total_cmp(&worst[*b])).unwrap_or(0);
        return Ok(Solution { x: cands[i].clone(), objective: funcs[0].value(cands[i]), feasible: false });
    };
    let start = cands[bi].clone();
    let refined = minimize_constrained(funcs[0], cons, &start, REFINE_TOL);
    let rv = funcs[0].value(&refined);
    let ok = rv <= bv && cons.iter().all(|c| c.value(&refined) >= -FEASIBILITY_TOL);
    Ok(if ok {
        Solution { x: refined, objective: rv, feasible: true }
    } else {
        Solution { x: start, objective: bv, feasible: true }
    })
}

/// A joint draw of hyperparameters and the constrained minimizer they imply.
#[derive(Clone, Debug)]
pub struct MinimizerSample {
    pub theta: Vec<GpHyper>,
    pub x_star: Vec<f64>,
    pub feasible: bool,
    pub functions: Vec<SampledFunction>,
}

/// Settings for drawing minimizer samples.
#[derive(Clone, Copy, Debug)]
pub struct SamplerSettings {
    pub basis_count: usize,
    pub grid_size: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { basis_count: DEFAULT_BASIS, grid_size: DEFAULT_GRID }
    }
}

/// Draw one minimizer per entry of `states` (one fitted state per function
/// under a shared hyperparameter sample). Sample j uses the substream (seed, j).
pub fn sample_minimizers(
    states: &[Vec<GpState>],
    settings: SamplerSettings,
    observed: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<MinimizerSample>> {
    if states.is_empty() {
        return Err(Error::Contract("need at least one hyperparameter sample".into()));
    }
    states
        .iter()
        .enumerate()
        .map(|(j, fs)| {
            let mut rng = substream(seed, &[j as u64]);
            let dim = fs[0].hyper.kernel.dim();
            let functions = fs
                .iter()
                .map(|s| draw_sampled_function(s, settings.basis_count, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let grid = shifted_halton(settings.grid_size, dim, &mut rng);
            let refs: Vec<&SampledFunction> = functions.iter().collect();
            let sol = solve_sampled_problem(&refs, &grid, observed)?;
            Ok(MinimizerSample {
                theta: fs.iter().map(|s| s.hyper.clone()).collect(),
                x_star: sol.x,
                feasible: sol.feasible,
                functions,
            })
        })
        .collect()
}
