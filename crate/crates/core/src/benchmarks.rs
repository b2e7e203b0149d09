//! Benchmark problems, the utility-gap metric and a simulated-clock experiment runner.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{Clock, Controller, SimulatedClock, UpdateMode};
use crate::domain::{halton, latin_hypercube, substream, uniform_grid};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{cholesky_jittered, solve_lower_t};
use crate::optim::{minimize_constrained, Surface};
use crate::scheduler::{Engine, EngineConfig, Recommendation, TaskGraph};

/// Points in the construction grid of synthetic problems.
pub const SYNTHETIC_GRID: usize = 1000;
/// Lengthscale of synthetic problems.
pub const SYNTHETIC_LENGTHSCALE: f64 = 0.1;
/// Observation noise variance of synthetic problems.
pub const SYNTHETIC_NOISE: f64 = 0.01;
/// Points in the ground-truth oracle grid.
pub const ORACLE_GRID: usize = 10_000;
/// Jitter-level noise variance used when modelling the noise-free toy problem.
pub const TOY_NOISE: f64 = 1e-10;

/// Constrained minimizer of the toy problem.
pub const TOY_X_STAR: [f64; 2] = [0.1951226885525727, 0.4046653634583427];

/// Kernel interpolant Σᵢ k(x, zᵢ) wᵢ.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolant {
    pub kernel: KernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub weights: DVector<f64>,
}

impl Interpolant {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers.iter().zip(self.weights.iter()).map(|(c, w)| self.kernel.eval(x, c) * w).sum()
    }
}

impl Surface for Interpolant {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let mut v = 0.0;
        for (c, w) in self.centers.iter().zip(self.weights.iter()) {
            v += self.kernel.eval(x, c) * w;
            for (gd, kd) in g.iter_mut().zip(self.kernel.grad_x(x, c)) {
                *gd += kd * w;
            }
        }
        (v, g)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Functions {
    Toy,
    Interpolants(Vec<Interpolant>),
}

/// A benchmark problem on the unit box. Function 0 is the objective, the rest
/// are constraints c ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub function_names: Vec<String>,
    functions: Functions,
    /// Noise variance added to each function's evaluations.
    pub noise: Vec<f64>,
    /// Evaluation delay of each function in seconds.
    pub delays: Vec<f64>,
    pub x_star: Option<Vec<f64>>,
    pub u_star: Option<f64>,
    /// Objective value charged to infeasible recommendations.
    pub worst: f64,
}

fn toy_eval(i: usize, x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    match i {
        0 => a + b,
        1 => 0.5 * (2.0 * std::f64::consts::PI * (a * a - 2.0 * b)).sin() + a + 2.0 * b - 1.5,
        _ => -a * a - b * b + 1.5,
    }
}

impl Problem {
    pub fn n_functions(&self) -> usize {
        self.function_names.len()
    }

    /// Noise-free value of function i.
    pub fn exact(&self, i: usize, x: &[f64]) -> f64 {
        match &self.functions {
            Functions::Toy => toy_eval(i, x),
            Functions::Interpolants(f) => f[i].eval(x),
        }
    }

    /// Value of function i with observation noise drawn from `rng`.
    pub fn evaluate<R: Rng>(&self, i: usize, x: &[f64], rng: &mut R) -> f64 {
        let y = self.exact(i, x);
        if self.noise[i] > 0.0 {
            let e: f64 = StandardNormal.sample(rng);
            y + self.noise[i].sqrt() * e
        } else {
            y
        }
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        (1..self.n_functions()).all(|i| self.exact(i, x) >= 0.0)
    }

    pub fn utility(&self, x: &[f64]) -> f64 {
        if self.is_feasible(x) {
            self.exact(0, x)
        } else {
            self.worst
        }
    }

    /// Delay of a task: the slowest of its functions.
    pub fn task_delay(&self, functions: &[usize]) -> f64 {
        functions.iter().map(|&i| self.delays.get(i).copied().unwrap_or(0.0)).fold(0.0, f64::max)
    }
}

/// |u(x) − u(x⋆)|, where u is the objective if x is truly feasible and the
/// problem's worst objective value otherwise.
pub fn utility_gap(x: &[f64], problem: &Problem) -> Result<f64> {
    let u_star = problem.u_star.ok_or_else(|| Error::Unsupported(format!("'{}' has no known minimizer", problem.name)))?;
    Ok((problem.utility(x) - u_star).abs())
}

/// The two-dimensional problem with a linear objective and two constraints.
pub fn toy_problem() -> Problem {
    Problem {
        name: "toy".into(),
        dim: 2,
        function_names: vec!["f".into(), "c1".into(), "c2".into()],
        functions: Functions::Toy,
        noise: vec![0.0; 3],
        delays: vec![0.0; 3],
        x_star: Some(TOY_X_STAR.to_vec()),
        u_star: Some(TOY_X_STAR[0] + TOY_X_STAR[1]),
        worst: 2.0,
    }
}

fn oracle_grid(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => uniform_grid(ORACLE_GRID, 1),
        2 => uniform_grid(100, 2),
        _ => halton(ORACLE_GRID, dim, 0),
    }
}

/// Feasible grid argmin refined by a constrained local solve, or None when no
/// grid point is feasible.
fn ground_truth(functions: &[Interpolant], grid: &[Vec<f64>]) -> Option<Vec<f64>> {
    let feasible = |x: &[f64]| functions[1..].iter().all(|c| c.eval(x) >= 0.0);
    let best = grid
        .iter()
        .filter(|x| feasible(x))
        .map(|x| (x, functions[0].eval(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let cons: Vec<&Interpolant> = functions[1..].iter().collect();
    let refined = minimize_constrained(&functions[0], &cons, best.0, 1e-8);
    Some(if feasible(&refined) && functions[0].eval(&refined) < best.1 { refined } else { best.0.clone() })
}

/// Objective and `constraints` constraints drawn from a zero-mean GP prior
/// (SE kernel, unit amplitude, ℓ = 0.1) on a Halton grid and turned into their
/// posterior-mean interpolants. Draws with no feasible oracle-grid point are
/// redrawn.
pub fn make_synthetic_problem(dim: usize, seed: u64, constraints: usize) -> Result<Problem> {
    if dim == 0 {
        return Err(Error::Contract("dimension must be ≥ 1".into()));
    }
    let kernel = KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, SYNTHETIC_LENGTHSCALE, dim)?;
    let centers = halton(SYNTHETIC_GRID, dim, 0);
    let mut gram = kernel.gram(&centers);
    for i in 0..SYNTHETIC_GRID {
        gram[(i, i)] += 1e-8;
    }
    let factor = cholesky_jittered(&gram, 1.0)?;
    let grid = oracle_grid(dim);
    for attempt in 0u64.. {
        let mut rng = substream(seed, &[attempt]);
        // With K + εI = LLᵀ, y = Lz is a prior draw and (K + εI)⁻¹y = L⁻ᵀz.
        let functions: Vec<Interpolant> = (0..=constraints)
            .map(|_| {
                let z = DVector::from_fn(SYNTHETIC_GRID, |_, _| StandardNormal.sample(&mut rng));
                Interpolant { kernel: kernel.clone(), centers: centers.clone(), weights: solve_lower_t(&factor.l, &z) }
            })
            .collect();
        let Some(x_star) = ground_truth(&functions, &grid) else { continue };
        let worst = grid.iter().map(|x| functions[0].eval(x)).fold(f64::NEG_INFINITY, f64::max);
        let u_star = functions[0].eval(&x_star);
        let mut names = vec!["f".to_string()];
        names.extend((1..=constraints).map(|k| format!("c{k}")));
        return Ok(Problem {
            name: format!("synthetic-{dim}d"),
            dim,
            function_names: names,
            functions: Functions::Interpolants(functions),
            noise: vec![SYNTHETIC_NOISE; constraints + 1],
            delays: vec![0.0; constraints + 1],
            x_star: Some(x_star),
            u_star: Some(u_star),
            worst,
        });
    }
    unreachable!("attempt counter is unbounded")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProblemSpec {
    Toy,
    Synthetic { dim: usize, constraints: usize },
}

impl ProblemSpec {
    pub fn build(&self, seed: u64) -> Result<Problem> {
        match self {
            Self::Toy => Ok(toy_problem()),
            Self::Synthetic { dim, constraints } => make_synthetic_problem(*dim, seed, *constraints),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy => 2,
            Self::Synthetic { dim, .. } => *dim,
        }
    }

    pub fn n_functions(&self) -> usize {
        match self {
            Self::Toy => 3,
            Self::Synthetic { constraints, .. } => constraints + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Template; the seed is replaced per repetition.
    pub engine: EngineConfig,
    pub graph: TaskGraph,
    /// Rationality level; `None` means every refresh is slow.
    pub gamma: Option<f64>,
    /// Stop issuing after this many task evaluations (initial design excluded).
    pub max_iterations: Option<usize>,
    /// Stop issuing once the simulated clock reaches this many seconds.
    pub time_budget: Option<f64>,
    pub n_initial: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Per-function delay override in seconds.
    pub delays: Option<Vec<f64>>,
    /// Compute a recommendation after every completed evaluation.
    pub record_recommendations: bool,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, engine: EngineConfig, graph: TaskGraph) -> Self {
        Self {
            problem,
            engine,
            graph,
            gamma: None,
            max_iterations: Some(30),
            time_budget: None,
            n_initial: 3,
            repetitions: 1,
            seed: 0,
            delays: None,
            record_recommendations: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Simulated time at which the evaluation completed.
    pub time: f64,
    pub mode: UpdateMode,
    pub task: String,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    /// BO computation time spent issuing this evaluation.
    pub bo_seconds: f64,
    pub recommendation: Option<Recommendation>,
    pub utility_gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBuckets {
    pub slow_bo: f64,
    pub fast_bo: f64,
    /// Evaluation time per task.
    pub evaluation: Vec<f64>,
}

impl TimingBuckets {
    pub fn total_evaluation(&self) -> f64 {
        self.evaluation.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionTrace {
    pub repetition: usize,
    pub seed: u64,
    pub initial: Vec<(Vec<f64>, Vec<f64>)>,
    pub records: Vec<IterationRecord>,
    pub final_recommendation: Option<Recommendation>,
    pub final_gap: Option<f64>,
    /// Completed evaluations per function.
    pub function_counts: Vec<usize>,
    pub slow_refreshes: usize,
    pub fast_refreshes: usize,
    pub timing: TimingBuckets,
    pub elapsed: f64,
    pub error: Option<String>,
}

impl RepetitionTrace {
    /// Completed evaluations of each function after the first `n` iterations.
    pub fn counts_after(&self, n: usize, graph: &TaskGraph, n_functions: usize) -> Vec<usize> {
        let mut c = vec![0; n_functions];
        for r in self.records.iter().take(n) {
            if let Some(t) = graph.task_index(&r.task) {
                for &f in &graph.tasks[t].functions {
                    c[f] += 1;
                }
            }
        }
        c
    }
}

/// Seed of repetition r: a pure function of the experiment seed and r.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    substream(seed, &[rep as u64]).next_u64()
}

const TAG_INITIAL: u64 = 10;
const TAG_NOISE: u64 = 11;
const TAG_PROBLEM: u64 = 12;

struct InFlight {
    finish: f64,
    pending_id: u64,
    task: usize,
    x: Vec<f64>,
    values: Vec<f64>,
    mode: UpdateMode,
    bo_seconds: f64,
}

/// Run one repetition. Errors are returned as is; [`run_experiment`] isolates them.
pub fn run_repetition(config: &ExperimentConfig, rep: usize) -> Result<RepetitionTrace> {
    if config.max_iterations.is_none() && config.time_budget.is_none() {
        return Err(Error::Contract("need an iteration limit or a time budget".into()));
    }
    let seed = repetition_seed(config.seed, rep);
    let mut problem = config.problem.build(substream(seed, &[TAG_PROBLEM]).next_u64())?;
    if let Some(d) = &config.delays {
        if d.len() != problem.n_functions() || d.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract("one non-negative delay per function required".into()));
        }
        problem.delays = d.clone();
    }
    let mut ec = config.engine.clone();
    ec.seed = seed;
    let graph = &config.graph;
    let mut engine = Engine::new(ec, graph.clone())?;
    let mut noise_rng = substream(seed, &[TAG_NOISE]);

    let mut trace = RepetitionTrace {
        repetition: rep,
        seed,
        initial: Vec::new(),
        records: Vec::new(),
        final_recommendation: None,
        final_gap: None,
        function_counts: vec![0; problem.n_functions()],
        slow_refreshes: 0,
        fast_refreshes: 0,
        timing: TimingBuckets { evaluation: vec![0.0; graph.tasks.len()], ..Default::default() },
        elapsed: 0.0,
        error: None,
    };

    let mut init_rng = substream(config.seed, &[TAG_INITIAL, rep as u64]);
    for x in latin_hypercube(config.n_initial, problem.dim, &mut init_rng) {
        let values: Vec<f64> = (0..problem.n_functions()).map(|i| problem.evaluate(i, &x, &mut noise_rng)).collect();
        for (t, spec) in graph.tasks.iter().enumerate() {
            let v: Vec<f64> = spec.functions.iter().map(|&i| values[i]).collect();
            engine.observe(t, &x, &v)?;
        }
        trace.initial.push((x, values));
    }

    let mut controller = config.gamma.map(Controller::new).transpose()?;
    let mut clock = SimulatedClock::new();
    let mut inflight: Vec<InFlight> = Vec::new();
    let mut completed = 0usize;
    let may_issue = |issued: usize, now: f64| {
        config.max_iterations.is_none_or(|m| issued < m) && config.time_budget.is_none_or(|b| now < b)
    };
    loop {
        for r in 0..graph.resources.len() {
            while engine.occupancy(r) < graph.resources[r].capacity && may_issue(completed + inflight.len(), clock.now()) {
                if graph.tasks_on(r).is_empty() {
                    break;
                }
                let mode = controller.as_ref().map_or(UpdateMode::Slow, |c| c.decide(clock.now()));
                let start = clock.now();
                let t0 = Instant::now();
                let report = engine.refresh(mode)?;
                let s = engine.next_suggestion(r)?;
                let dt = t0.elapsed().as_secs_f64();
                clock.advance(dt);
                let mode = report.mode.unwrap_or(mode);
                match mode {
                    UpdateMode::Slow => {
                        trace.timing.slow_bo += dt;
                        trace.slow_refreshes += 1;
                        if let Some(c) = controller.as_mut() {
                            c.record_slow(start, clock.now());
                        }
                    }
                    UpdateMode::Fast => {
                        trace.timing.fast_bo += dt;
                        trace.fast_refreshes += 1;
                    }
                }
                let fns = &graph.tasks[s.task].functions;
                let values: Vec<f64> = fns.iter().map(|&i| problem.evaluate(i, &s.x, &mut noise_rng)).collect();
                let pending_id = engine.register_pending(&s)?;
                inflight.push(InFlight {
                    finish: clock.now() + problem.task_delay(fns),
                    pending_id,
                    task: s.task,
                    x: s.x,
                    values,
                    mode,
                    bo_seconds: dt,
                });
            }
        }
        let Some(next) = inflight
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.finish.total_cmp(&b.1.finish).then(a.1.pending_id.cmp(&b.1.pending_id)))
            .map(|(i, _)| i)
        else {
            break;
        };
        let ev = inflight.swap_remove(next);
        if ev.finish > clock.now() {
            clock.advance(ev.finish - clock.now());
        }
        let delay = problem.task_delay(&graph.tasks[ev.task].functions);
        trace.timing.evaluation[ev.task] += delay;
        engine.observe(ev.task, &ev.x, &ev.values)?;
        for &f in &graph.tasks[ev.task].functions {
            trace.function_counts[f] += 1;
        }
        completed += 1;
        let (recommendation, utility_gap) = if config.record_recommendations {
            let rec = engine.recommend()?;
            let gap = utility_gap(&rec.x, &problem).ok();
            (Some(rec), gap)
        } else {
            (None, None)
        };
        trace.records.push(IterationRecord {
            iteration: completed,
            time: clock.now(),
            mode: ev.mode,
            task: graph.tasks[ev.task].id.clone(),
            x: ev.x,
            values: ev.values,
            bo_seconds: ev.bo_seconds,
            recommendation,
            utility_gap,
        });
    }
    trace.elapsed = clock.now();
    let rec = engine.recommend()?;
    trace.final_gap = utility_gap(&rec.x, &problem).ok();
    trace.final_recommendation = Some(rec);
    Ok(trace)
}

/// Run every repetition; a failing repetition is recorded with its error and
/// does not abort the batch. Repetitions run on all available cores.
pub fn run_experiment(config: &ExperimentConfig) -> Vec<RepetitionTrace> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.repetitions.max(1));
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<RepetitionTrace>> = Mutex::new(Vec::with_capacity(config.repetitions));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::SeqCst);
                if rep >= config.repetitions {
                    break;
                }
                let result = catch_unwind(AssertUnwindSafe(|| run_repetition(config, rep)));
                let trace = match result {
                    Ok(Ok(t)) => t,
                    Ok(Err(e)) => failed_trace(config, rep, e.to_string()),
                    Err(_) => failed_trace(config, rep, "repetition panicked".into()),
                };
                out.lock().expect("no poisoned lock").push(trace);
            });
        }
    });
    let mut traces = out.into_inner().expect("no poisoned lock");
    traces.sort_by_key(|t| t.repetition);
    traces
}

fn failed_trace(config: &ExperimentConfig, rep: usize, error: String) -> RepetitionTrace {
    RepetitionTrace {
        repetition: rep,
        seed: repetition_seed(config.seed, rep),
        initial: Vec::new(),
        records: Vec::new(),
        final_recommendation: None,
        final_gap: None,
        function_counts: vec![0; config.problem.n_functions()],
        slow_refreshes: 0,
        fast_refreshes: 0,
        timing: TimingBuckets::default(),
        elapsed: 0.0,
        error: Some(error),
    }
}

/// Pearson correlation; NaN when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Percentile bootstrap interval of the median at the given central level.
pub fn bootstrap_median_interval(values: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = substream(seed, &[]);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let draw: Vec<f64> = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
            median(&draw)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| stats[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(tail), at(1.0 - tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper::HyperMode;
    use crate::scheduler::Method;

    #[test]
    fn toy_values_at_printed_point() {
        let p = toy_problem();
        let x = [0.1954, 0.4404];
        assert!((p.exact(0, &x) - 0.6358).abs() < 1e-12);
        assert!((p.exact(2, &x) - 1.26786).abs() < 1e-4);
        assert!(p.exact(2, &x) > 0.0);
        assert!(p.exact(1, &[0.1954, 0.4044]).abs() <= 5e-3);
    }

    #[test]
    fn toy_minimizer_is_feasible_and_active() {
        let p = toy_problem();
        let x = p.x_star.clone().unwrap();
        assert!(p.is_feasible(&x));
        assert!(p.exact(1, &x).abs() < 1e-9);
        assert_eq!(utility_gap(&x, &p).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_gap_uses_worst_value() {
        let p = toy_problem();
        let g = utility_gap(&[0.0, 0.0], &p).unwrap();
        assert!((g - (2.0 - p.u_star.unwrap())).abs() < 1e-12);
        assert!((g - 1.400212).abs() < 1e-6);
    }

    #[test]
    fn feasible_gap_is_objective_difference() {
        let p = toy_problem();
        let x = [0.7, 0.7];
        assert!(p.is_feasible(&x));
        assert!((utility_gap(&x, &p).unwrap() - (1.4 - p.u_star.unwrap())).abs() < 1e-12);
    }

    #[test]
    fn gap_requires_known_minimizer() {
        let mut p = toy_problem();
        p.u_star = None;
        assert!(matches!(utility_gap(&[0.5, 0.5], &p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn synthetic_problem_is_deterministic_and_feasible() {
        let a = make_synthetic_problem(1, 7, 1).unwrap();
        let b = make_synthetic_problem(1, 7, 1).unwrap();
        for x in halton(100, 1, 3) {
            assert_eq!(a.exact(0, &x).to_bits(), b.exact(0, &x).to_bits());
            assert_eq!(a.exact(1, &x).to_bits(), b.exact(1, &x).to_bits());
        }
        let xs = a.x_star.clone().unwrap();
        assert!(a.exact(1, &xs) >= 0.0);
        assert!(a.worst >= a.u_star.unwrap());
    }

    #[test]
    fn synthetic_objective_has_unit_scale() {
        let sds: Vec<f64> = (0..20)
            .map(|s| {
                let p = make_synthetic_problem(1, s, 1).unwrap();
                let ys: Vec<f64> = uniform_grid(1000, 1).iter().map(|x| p.exact(0, x)).collect();
                let m = ys.iter().sum::<f64>() / ys.len() as f64;
                (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64).sqrt()
            })
            .collect();
        let inside = sds.iter().filter(|sd| (0.5..1.5).contains(*sd)).count();
        assert!(inside >= 18, "{sds:?}");
        assert!((0.5..1.5).contains(&median(&sds)));
    }

    #[test]
    fn synthetic_minimizer_beats_the_oracle_grid() {
        let p = make_synthetic_problem(2, 4, 1).unwrap();
        let u = p.u_star.unwrap();
        for x in uniform_grid(100, 2) {
            if p.exact(1, &x) >= 0.0 {
                assert!(p.exact(0, &x) >= u - 1e-12);
            }
        }
    }

    #[test]
    fn pearson_of_affine_map_is_one() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &b.iter().map(|v| -v).collect::<Vec<_>>()) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_brackets_median() {
        let v: Vec<f64> = (0..51).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_median_interval(&v, 0.8, 2000, 1);
        assert!(lo <= 25.0 && hi >= 25.0 && lo < hi);
    }

    fn tiny_experiment() -> ExperimentConfig {
        let p = toy_problem();
        let mut e = EngineConfig::new(Method::Eic, 2, 3, 0);
        e.samples = 2;
        e.hyper = HyperMode::Map;
        e.slow.grid_size = 100;
        let mut c = ExperimentConfig::new(ProblemSpec::Toy, e, TaskGraph::coupled(p.n_functions(), 1));
        c.max_iterations = Some(0);
        c
    }

    #[test]
    fn zero_iterations_gives_initial_design_and_recommendation() {
        let t = run_repetition(&tiny_experiment(), 0).unwrap();
        assert_eq!(t.initial.len(), 3);
        assert!(t.records.is_empty());
        assert!(t.final_recommendation.is_some());
        assert!(t.final_gap.unwrap() >= 0.0);
    }

    #[test]
    fn repetitions_are_seed_isolated() {
        let mut c = tiny_experiment();
        c.max_iterations = Some(2);
        c.repetitions = 2;
        let all = run_experiment(&c);
        let single = run_repetition(&c, 1).unwrap();
        assert_eq!(all[1].initial, single.initial);
        assert_eq!(all[1].records.iter().map(|r| r.x.clone()).collect::<Vec<_>>(), single.records.iter().map(|r| r.x.clone()).collect::<Vec<_>>());
        assert_ne!(all[0].initial, all[1].initial);
    }

    #[test]
    fn failing_repetition_does_not_abort_batch() {
        let mut c = tiny_experiment();
        c.repetitions = 2;
        c.delays = Some(vec![1.0]);
        let all = run_experiment(&c);
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|t| t.error.is_some()));
    }

    #[test]
    fn every_suggestion_is_observed() {
        let mut c = tiny_experiment();
        c.max_iterations = Some(4);
        c.graph = TaskGraph::competitive(&["f", "c1", "c2"], 2);
        c.engine.method = Method::Pesc;
        c.engine.basis_count = 200;
        c.engine.sampler_grid = 200;
        let t = run_repetition(&c, 0).unwrap();
        assert_eq!(t.records.len(), 4);
        assert_eq!(t.function_counts.iter().sum::<usize>(), 4);
    }
}
