//! Task–resource graphs and the suggestion engine.
//!
//! The engine works on the unit box. It owns the observations, the pending
//! evaluations with their fantasy values, and the hyperparameter chains; the
//! derived snapshot (hyperparameter samples, fitted states, minimizer samples
//! and EP solutions) is rebuilt by [`Engine::refresh`] and is not persisted.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    cost_adjusted, eic_averaged, maximize, AcquisitionState, CostModel, SampleInput, SearchSettings, TaskSpec,
};
use crate::controller::UpdateMode;
use crate::domain::{shifted_halton, substream};
use crate::error::{Error, Result};
use crate::gp::{GpHyper, GpState};
use crate::hyper::{sample_hyperparameters, FunctionData, HyperChain, HyperMode};
use crate::kernel::KernelFamily;
use crate::optim::pattern_search;
use crate::oracle::{rs_acquisition, RsConfig};
use crate::sampler::{sample_minimizers, SamplerSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub id: String,
    pub capacity: usize,
}

/// Bipartite graph between tasks and resources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<TaskSpec>,
    pub resources: Vec<Resource>,
    /// (task index, resource index) pairs.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphClass {
    /// One task, one evaluation at a time.
    Coupled,
    /// One task, several simultaneous evaluations.
    Parallel,
    /// Several tasks, no resource shared between tasks.
    NonCompetitive,
    /// Several tasks competing for at least one resource.
    Competitive,
}

impl TaskGraph {
    /// One task holding every function, on one resource of the given capacity.
    pub fn coupled(n_functions: usize, capacity: usize) -> Self {
        Self {
            tasks: vec![TaskSpec { id: "all".into(), functions: (0..n_functions).collect() }],
            resources: vec![Resource { id: "r".into(), capacity }],
            edges: vec![(0, 0)],
        }
    }

    /// One task per function, all sharing one resource.
    pub fn competitive(names: &[&str], capacity: usize) -> Self {
        Self {
            tasks: names.iter().enumerate().map(|(i, n)| TaskSpec { id: n.to_string(), functions: vec![i] }).collect(),
            resources: vec![Resource { id: "r".into(), capacity }],
            edges: (0..names.len()).map(|t| (t, 0)).collect(),
        }
    }

    /// One task per function, each on its own resource.
    pub fn non_competitive(names: &[&str]) -> Self {
        Self {
            tasks: names.iter().enumerate().map(|(i, n)| TaskSpec { id: n.to_string(), functions: vec![i] }).collect(),
            resources: names.iter().map(|n| Resource { id: format!("r_{n}"), capacity: 1 }).collect(),
            edges: (0..names.len()).map(|t| (t, t)).collect(),
        }
    }

    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn resource_index(&self, id: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.id == id)
    }

    pub fn tasks_on(&self, resource: usize) -> Vec<usize> {
        let mut t: Vec<usize> = self.edges.iter().filter(|e| e.1 == resource).map(|e| e.0).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// Check the partition, edges and capacities, and classify the graph.
pub fn validate_graph(graph: &TaskGraph, n_functions: usize) -> Result<GraphClass> {
    let mut problems = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; n_functions];
    for (ti, t) in graph.tasks.iter().enumerate() {
        if t.functions.is_empty() {
            problems.push(format!("task '{}' has no functions", t.id));
        }
        for &f in &t.functions {
            if f >= n_functions {
                problems.push(format!("task '{}' references unknown function {f}", t.id));
            } else if let Some(prev) = owner[f] {
                problems.push(format!(
                    "overlapping tasks: function {f} belongs to '{}' and '{}'",
                    graph.tasks[prev].id, t.id
                ));
            } else {
                owner[f] = Some(ti);
            }
        }
    }
    for (f, o) in owner.iter().enumerate() {
        if o.is_none() {
            problems.push(format!("orphan function {f} is not in any task"));
        }
    }
    for r in &graph.resources {
        if r.capacity == 0 {
            problems.push(format!("resource '{}' has zero capacity", r.id));
        }
    }
    for &(t, r) in &graph.edges {
        if t >= graph.tasks.len() || r >= graph.resources.len() {
            problems.push(format!("edge ({t}, {r}) references a missing task or resource"));
        }
    }
    for (ti, t) in graph.tasks.iter().enumerate() {
        if !graph.edges.iter().any(|e| e.0 == ti) {
            problems.push(format!("task '{}' has no resource", t.id));
        }
    }
    let mut ids: Vec<&str> = graph.tasks.iter().map(|t| t.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        problems.push("task ids are not unique".into());
    }
    if !problems.is_empty() {
        return Err(Error::Graph(problems.join("; ")));
    }
    if graph.tasks.len() == 1 {
        let slots: usize = graph.resources.iter().enumerate().filter(|(i, _)| graph.edges.iter().any(|e| e.1 == *i)).map(|(_, r)| r.capacity).sum();
        return Ok(if slots > 1 { GraphClass::Parallel } else { GraphClass::Coupled });
    }
    let shared = (0..graph.resources.len()).any(|r| graph.tasks_on(r).len() > 1);
    Ok(if shared { GraphClass::Competitive } else { GraphClass::NonCompetitive })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pesc,
    Eic,
    /// Rejection-sampling acquisition on a fixed quasi-random grid.
    Rs,
    /// Rejection sampling with the grid set to minimizer samples.
    Rsdg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Zero,
    /// Empirical mean of each function's observations.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: Method,
    pub dim: usize,
    pub n_functions: usize,
    /// Number of (Θ, x⋆) samples.
    pub samples: usize,
    pub hyper: HyperMode,
    pub kernel: KernelFamily,
    /// Fixed noise variance for every function instead of inferring it.
    #[serde(default)]
    pub noise_variance: Option<f64>,
    pub mean: MeanMode,
    pub delta: f64,
    pub seed: u64,
    pub basis_count: usize,
    pub sampler_grid: usize,
    pub slow: SearchSettings,
    pub fast: SearchSettings,
    pub cost: CostModel,
    pub rs_joint: usize,
    pub rs_grid: usize,
}

impl EngineConfig {
    pub fn new(method: Method, dim: usize, n_functions: usize, seed: u64) -> Self {
        Self {
            method,
            dim,
            n_functions,
            samples: 50,
            hyper: HyperMode::Sample { burn_in: 10 },
            kernel: KernelFamily::SquaredExponential,
            noise_variance: None,
            mean: MeanMode::Zero,
            delta: 0.05,
            seed,
            basis_count: crate::sampler::DEFAULT_BASIS,
            sampler_grid: crate::sampler::DEFAULT_GRID,
            slow: SearchSettings::SLOW,
            fast: SearchSettings::FAST,
            cost: CostModel::Unit,
            rs_joint: 10_000,
            rs_grid: 200,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.into()));
        if self.dim == 0 {
            return bad("dimension must be ≥ 1");
        }
        if self.n_functions == 0 {
            return bad("need at least the objective");
        }
        if self.noise_variance.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return bad("fixed noise variance must be positive");
        }
        if self.samples == 0 {
            return bad("sample count must be ≥ 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("δ must lie in (0, 1)");
        }
        if let HyperMode::Fixed(h) = &self.hyper {
            if h.len() != self.n_functions || h.iter().any(|h| h.kernel.dim() != self.dim) {
                return bad("fixed hyperparameters must match the function count and dimension");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// An issued evaluation that has not returned yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingEvaluation {
    pub id: u64,
    pub task: usize,
    pub resource: usize,
    pub x: Vec<f64>,
    /// Fantasy value per function of the task, in task order.
    pub fantasies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub task: usize,
    pub resource: usize,
    pub x: Vec<f64>,
    /// Cost-adjusted acquisition value at x.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub x: Vec<f64>,
    pub expected_objective: f64,
    /// Averaged P(c_k(x) ≥ 0) per constraint.
    pub constraint_probs: Vec<f64>,
    /// True when the 1 − δ feasibility rule was satisfiable.
    pub feasible_mode: bool,
    /// True when no data at all informed the recommendation.
    pub prior_only: bool,
}

impl Recommendation {
    pub fn feasibility(&self) -> f64 {
        self.constraint_probs.iter().product()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RefreshReport {
    pub mode: Option<UpdateMode>,
    pub dropped_samples: usize,
    pub unconverged: usize,
    pub ep_sweeps: usize,
    pub infeasible_samples: usize,
}

#[derive(Clone, Debug)]
struct Snapshot {
    mode: UpdateMode,
    hypers: Vec<Vec<GpHyper>>,
    training: Vec<Vec<(Vec<f64>, f64)>>,
    states: Vec<Vec<GpState>>,
    x_stars: Vec<(Vec<f64>, bool)>,
    acq: Option<AcquisitionState>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Engine {
    pub config: EngineConfig,
    pub graph: TaskGraph,
    pub class: GraphClass,
    /// Real observations per function.
    pub data: Vec<Vec<Observation>>,
    pub pending: Vec<PendingEvaluation>,
    pub chains: Vec<HyperChain>,
    pub refresh_count: u64,
    pub suggestion_count: u64,
    next_pending_id: u64,
    #[serde(skip)]
    snapshot: Option<Snapshot>,
}

const TAG_HYPER: u64 = 1;
const TAG_MINIMIZER: u64 = 2;
const TAG_SEARCH: u64 = 3;
const TAG_RECOMMEND: u64 = 4;
const TAG_RS: u64 = 5;

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

impl Engine {
    pub fn new(config: EngineConfig, graph: TaskGraph) -> Result<Self> {
        config.validate()?;
        let class = validate_graph(&graph, config.n_functions)?;
        let chains = (0..config.n_functions)
            .map(|_| match config.noise_variance {
                Some(v) => HyperChain::with_fixed_noise(config.kernel, config.dim, v),
                None => HyperChain::new(config.kernel, config.dim),
            })
            .collect();
        Ok(Self {
            data: vec![Vec::new(); config.n_functions],
            config,
            graph,
            class,
            pending: Vec::new(),
            chains,
            refresh_count: 0,
            suggestion_count: 0,
            next_pending_id: 0,
            snapshot: None,
        })
    }

    pub fn has_snapshot(&self) -> bool {
        self.snapshot.is_some()
    }

    pub fn last_mode(&self) -> Option<UpdateMode> {
        self.snapshot.as_ref().map(|s| s.mode)
    }

    pub fn occupancy(&self, resource: usize) -> usize {
        self.pending.iter().filter(|p| p.resource == resource).count()
    }

    pub fn observation_count(&self, function: usize) -> usize {
        self.data[function].len()
    }

    /// Every observed input across functions, without duplicates.
    pub fn observed_inputs(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for d in &self.data {
            for o in d {
                if !out.contains(&o.x) {
                    out.push(o.x.clone());
                }
            }
        }
        out
    }

    /// Real data followed by pending fantasies, per function.
    fn training_sets(&self) -> Vec<Vec<(Vec<f64>, f64)>> {
        let mut sets: Vec<Vec<(Vec<f64>, f64)>> =
            self.data.iter().map(|d| d.iter().map(|o| (o.x.clone(), o.y)).collect()).collect();
        for p in &self.pending {
            for (f, v) in self.graph.tasks[p.task].functions.iter().zip(&p.fantasies) {
                sets[*f].push((p.x.clone(), *v));
            }
        }
        sets
    }

    fn mean_for(&self, set: &[(Vec<f64>, f64)]) -> f64 {
        match self.config.mean {
            MeanMode::Zero => 0.0,
            MeanMode::Empirical if set.is_empty() => 0.0,
            MeanMode::Empirical => set.iter().map(|p| p.1).sum::<f64>() / set.len() as f64,
        }
    }

    fn fit_states(hypers: &[Vec<GpHyper>], training: &[Vec<(Vec<f64>, f64)>]) -> Result<Vec<Vec<GpState>>> {
        hypers
            .iter()
            .map(|hs| {
                hs.iter()
                    .zip(training)
                    .map(|(h, set)| {
                        GpState::fit(h.clone(), set.iter().map(|p| p.0.clone()).collect(), set.iter().map(|p| p.1).collect())
                    })
                    .collect()
            })
            .collect()
    }

    fn sample_hypers(&mut self, training: &[Vec<(Vec<f64>, f64)>]) -> Result<Vec<Vec<GpHyper>>> {
        let inputs: Vec<Vec<Vec<f64>>> = training.iter().map(|s| s.iter().map(|p| p.0.clone()).collect()).collect();
        let targets: Vec<Vec<f64>> = training.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
        let means: Vec<f64> = training.iter().map(|s| self.mean_for(s)).collect();
        let data: Vec<FunctionData<'_>> = (0..training.len())
            .map(|i| FunctionData { inputs: &inputs[i], targets: &targets[i], mean: means[i] })
            .collect();
        let mut rng = substream(self.config.seed, &[TAG_HYPER, self.refresh_count]);
        let mut hypers = sample_hyperparameters(&self.config.hyper, &mut self.chains, &data, self.config.samples, &mut rng)?;
        if let HyperMode::Fixed(_) = self.config.hyper {
            for hs in hypers.iter_mut() {
                for (h, m) in hs.iter_mut().zip(&means) {
                    h.mean = *m;
                }
            }
        }
        Ok(hypers)
    }

    /// Rebuild the snapshot. A fast refresh without a previous snapshot falls back to slow.
    pub fn refresh(&mut self, mode: UpdateMode) -> Result<RefreshReport> {
        let training = self.training_sets();
        let mode = if self.snapshot.is_none() { UpdateMode::Slow } else { mode };
        let mut report = RefreshReport { mode: Some(mode), ..Default::default() };
        if mode == UpdateMode::Fast {
            let snap = self.snapshot.as_mut().expect("checked above");
            if snap.training == training {
                snap.mode = mode;
                report.infeasible_samples = snap.x_stars.iter().filter(|x| !x.1).count();
                self.refresh_count += 1;
                return Ok(report);
            }
        }
        let previous = self.snapshot.take();
        let (hypers, states, x_stars, warm) = match (mode, previous) {
            (UpdateMode::Fast, Some(prev)) => {
                let states = self.extend_states(&prev, &training)?;
                (prev.hypers, states, prev.x_stars, prev.acq)
            }
            _ => {
                let hypers = self.sample_hypers(&training)?;
                let states = Self::fit_states(&hypers, &training)?;
                let needs_minimizers = matches!(self.config.method, Method::Pesc | Method::Rsdg);
                let x_stars = if needs_minimizers {
                    let seed = substream(self.config.seed, &[TAG_MINIMIZER, self.refresh_count]).next_u64();
                    let settings = SamplerSettings { basis_count: self.config.basis_count, grid_size: self.config.sampler_grid };
                    let observed: Vec<Vec<f64>> = {
                        let mut o = self.observed_inputs();
                        for p in &self.pending {
                            if !o.contains(&p.x) {
                                o.push(p.x.clone());
                            }
                        }
                        o
                    };
                    sample_minimizers(&states, settings, &observed, seed)?
                        .into_iter()
                        .map(|m| (m.x_star, m.feasible))
                        .collect()
                } else {
                    Vec::new()
                };
                (hypers, states, x_stars, None)
            }
        };
        report.infeasible_samples = x_stars.iter().filter(|x| !x.1).count();
        let acq = if self.config.method == Method::Pesc {
            let inputs = states
                .iter()
                .zip(&x_stars)
                .map(|(s, (x, f))| SampleInput { states: s.clone(), x_star: x.clone(), x_star_feasible: *f })
                .collect();
            let acq = AcquisitionState::build(inputs, warm.as_ref())?;
            report.dropped_samples = acq.dropped;
            report.unconverged = acq.unconverged;
            report.ep_sweeps = acq.total_sweeps;
            Some(acq)
        } else {
            None
        };
        self.snapshot = Some(Snapshot { mode, hypers, training, states, x_stars, acq });
        self.refresh_count += 1;
        Ok(report)
    }

    fn extend_states(&self, prev: &Snapshot, training: &[Vec<(Vec<f64>, f64)>]) -> Result<Vec<Vec<GpState>>> {
        let mut out = Vec::with_capacity(prev.states.len());
        for (j, per_fn) in prev.states.iter().enumerate() {
            let mut row = Vec::with_capacity(per_fn.len());
            for (i, s) in per_fn.iter().enumerate() {
                let old = &prev.training[i];
                let new = &training[i];
                let mean = self.mean_for(new);
                let same_mean = mean == s.hyper.mean;
                let st = if same_mean && new.len() >= old.len() && new[..old.len()] == old[..] {
                    s.extend_many(&new[old.len()..])?
                } else {
                    let mut h = prev.hypers[j][i].clone();
                    h.mean = mean;
                    GpState::fit(h, new.iter().map(|p| p.0.clone()).collect(), new.iter().map(|p| p.1).collect())?
                };
                row.push(st);
            }
            out.push(row);
        }
        Ok(out)
    }

    fn search_settings(&self) -> SearchSettings {
        match self.last_mode() {
            Some(UpdateMode::Fast) => self.config.fast,
            _ => self.config.slow,
        }
    }

    /// Best (task, x) for a free slot on `resource`. Refreshes (slow) first if needed.
    pub fn next_suggestion(&mut self, resource: usize) -> Result<Suggestion> {
        if resource >= self.graph.resources.len() {
            return Err(Error::Contract(format!("unknown resource index {resource}")));
        }
        if self.occupancy(resource) >= self.graph.resources[resource].capacity {
            return Err(Error::Contract(format!("resource '{}' is at capacity", self.graph.resources[resource].id)));
        }
        let tasks = self.graph.tasks_on(resource);
        if tasks.is_empty() {
            return Err(Error::NoEligibleTask(format!("no task can run on '{}'", self.graph.resources[resource].id)));
        }
        if self.snapshot.is_none() {
            self.refresh(UpdateMode::Slow)?;
        }
        let mut rng = substream(self.config.seed, &[TAG_SEARCH, self.suggestion_count]);
        self.suggestion_count += 1;
        let candidates: Vec<(usize, Vec<f64>, f64)> = match self.config.method {
            Method::Pesc => self.pesc_candidates(&tasks, &mut rng)?,
            Method::Eic => self.eic_candidates(&tasks, &mut rng)?,
            Method::Rs | Method::Rsdg => self.rs_candidates(&tasks, &mut rng)?,
        };
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for c in candidates {
            let better = match &best {
                None => true,
                Some(b) => c.2 > b.2 || (c.2 == b.2 && (c.0 < b.0 || (c.0 == b.0 && lexicographic_less(&c.1, &b.1)))),
            };
            if better {
                best = Some(c);
            }
        }
        let (task, x, value) = best.expect("at least one task");
        Ok(Suggestion { task, resource, x, value })
    }

    fn pesc_candidates<R: Rng>(&self, tasks: &[usize], rng: &mut R) -> Result<Vec<(usize, Vec<f64>, f64)>> {
        let snap = self.snapshot.as_ref().expect("refreshed");
        let acq = snap.acq.as_ref().ok_or_else(|| Error::Contract("no acquisition state".into()))?;
        let settings = self.search_settings();
        let grid = shifted_halton(settings.grid_size.max(1), self.config.dim, rng);
        let (per_fn, _) = acq.per_function_many(&grid);
        let step0 = 0.5 / (settings.grid_size.max(1) as f64).powf(1.0 / self.config.dim as f64);
        let mut out = Vec::with_capacity(tasks.len());
        for &t in tasks {
            let fns = &self.graph.tasks[t].functions;
            let value_at = |x: &[f64], alphas: &[f64]| -> Result<f64> {
                cost_adjusted(fns.iter().map(|&i| alphas[i]).sum(), self.config.cost.cost(t, x))
            };
            let mut bi = 0;
            let mut bv = f64::NEG_INFINITY;
            for (gi, a) in per_fn.iter().enumerate() {
                let v = value_at(&grid[gi], a)?;
                if v > bv {
                    bv = v;
                    bi = gi;
                }
            }
            let (x, neg) = pattern_search(
                |x| {
                    let a = acq.per_function_all(x);
                    value_at(x, &a).map(|v| -v).unwrap_or(f64::INFINITY)
                },
                &grid[bi],
                step0,
                settings.tol,
                100 + 60 * self.config.dim,
            );
            if -neg > bv {
                out.push((t, x, -neg));
            } else {
                out.push((t, grid[bi].clone(), bv));
            }
        }
        Ok(out)
    }

    fn eic_candidates<R: Rng>(&self, tasks: &[usize], rng: &mut R) -> Result<Vec<(usize, Vec<f64>, f64)>> {
        let snap = self.snapshot.as_ref().expect("refreshed");
        let rec = self.recommend_with(self.config.delta, Some(&snap.hypers))?;
        let eta = if rec.feasible_mode && !rec.prior_only { Some(rec.expected_objective) } else { None };
        let states = &snap.states;
        let (x, v) = maximize(|xs| eic_averaged(states, xs, eta), self.config.dim, self.search_settings(), &[], rng);
        Ok(tasks.iter().map(|&t| (t, x.clone(), v)).collect())
    }

    fn rs_candidates<R: Rng>(&self, tasks: &[usize], rng: &mut R) -> Result<Vec<(usize, Vec<f64>, f64)>> {
        let snap = self.snapshot.as_ref().expect("refreshed");
        let probes = shifted_halton(self.config.rs_grid, self.config.dim, rng);
        let grid = match self.config.method {
            Method::Rsdg => snap.x_stars.iter().map(|x| x.0.clone()).collect(),
            _ => probes.clone(),
        };
        let seed = substream(self.config.seed, &[TAG_RS, self.suggestion_count]).next_u64();
        let cfg = RsConfig::new(grid, self.config.rs_joint, seed);
        let acq = rs_acquisition(&snap.states[0], &probes, &cfg)?;
        let mut out = Vec::with_capacity(tasks.len());
        for &t in tasks {
            let fns = &self.graph.tasks[t].functions;
            let mut best = (0, f64::NEG_INFINITY);
            for p in 0..probes.len() {
                let v = cost_adjusted(acq.task(p, fns), self.config.cost.cost(t, &probes[p]))?;
                if v > best.1 {
                    best = (p, v);
                }
            }
            out.push((t, probes[best.0].clone(), best.1));
        }
        Ok(out)
    }

    /// Task acquisition (before cost adjustment) of the configured method at each x.
    /// Refreshes (slow) first if there is no snapshot.
    pub fn acquisition_values(&mut self, task: usize, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if task >= self.graph.tasks.len() {
            return Err(Error::Contract(format!("unknown task index {task}")));
        }
        if self.snapshot.is_none() {
            self.refresh(UpdateMode::Slow)?;
        }
        let snap = self.snapshot.as_ref().expect("refreshed");
        let fns = &self.graph.tasks[task].functions;
        match self.config.method {
            Method::Pesc => Ok(snap.acq.as_ref().expect("pesc snapshot").task_alpha_many(fns, xs)),
            Method::Eic => {
                let rec = self.recommend_with(self.config.delta, Some(&snap.hypers))?;
                let eta = if rec.feasible_mode && !rec.prior_only { Some(rec.expected_objective) } else { None };
                Ok(eic_averaged(&snap.states, xs, eta))
            }
            Method::Rs | Method::Rsdg => {
                let grid = match self.config.method {
                    Method::Rsdg => snap.x_stars.iter().map(|x| x.0.clone()).collect(),
                    _ => xs.to_vec(),
                };
                let seed = substream(self.config.seed, &[TAG_RS, self.suggestion_count]).next_u64();
                let acq = rs_acquisition(&snap.states[0], xs, &RsConfig::new(grid, self.config.rs_joint, seed))?;
                Ok((0..xs.len()).map(|p| acq.task(p, fns)).collect())
            }
        }
    }

    /// Hyperparameter-averaged predictive mean of each function of `task` at x.
    fn predictive_means(&self, task: usize, x: &[f64]) -> Result<Vec<f64>> {
        let snap = self.snapshot.as_ref().ok_or_else(|| Error::Contract("register_pending requires a refreshed engine".into()))?;
        let fns = &self.graph.tasks[task].functions;
        let m = snap.states.len() as f64;
        Ok(fns.iter().map(|&i| snap.states.iter().map(|s| s[i].predict(x).mean).sum::<f64>() / m).collect())
    }

    /// Record an issued evaluation with Kriging-believer fantasies and refresh the
    /// snapshot's states so later suggestions condition on it.
    pub fn register_pending(&mut self, s: &Suggestion) -> Result<u64> {
        if s.task >= self.graph.tasks.len() || !self.graph.edges.contains(&(s.task, s.resource)) {
            return Err(Error::Contract("task cannot run on that resource".into()));
        }
        if self.pending.iter().any(|p| p.task == s.task && p.x == s.x) {
            return Err(Error::Contract("this evaluation is already pending".into()));
        }
        if self.occupancy(s.resource) >= self.graph.resources[s.resource].capacity {
            return Err(Error::Contract("resource is at capacity".into()));
        }
        let fantasies = self.predictive_means(s.task, &s.x)?;
        let id = self.next_pending_id;
        self.next_pending_id += 1;
        self.pending.push(PendingEvaluation { id, task: s.task, resource: s.resource, x: s.x.clone(), fantasies });
        Ok(id)
    }

    /// Drop a pending evaluation without data (abandoned after failures).
    pub fn abandon_pending(&mut self, id: u64) -> Result<PendingEvaluation> {
        let pos = self.pending.iter().position(|p| p.id == id).ok_or_else(|| Error::Contract(format!("no pending evaluation {id}")))?;
        Ok(self.pending.remove(pos))
    }

    /// Add real values for every function of `task` at x; a matching pending entry is removed.
    pub fn observe(&mut self, task: usize, x: &[f64], values: &[f64]) -> Result<()> {
        let spec = self.graph.tasks.get(task).ok_or_else(|| Error::Contract(format!("unknown task index {task}")))?;
        if values.len() != spec.functions.len() {
            return Err(Error::Contract(format!(
                "task '{}' has {} functions but {} values were given",
                spec.id,
                spec.functions.len(),
                values.len()
            )));
        }
        if x.len() != self.config.dim || x.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidObservation(format!("input {x:?} is outside the unit box")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation(format!("non-finite value {v}")));
        }
        if let Some(pos) = self.pending.iter().position(|p| p.task == task && p.x == x) {
            self.pending.remove(pos);
        }
        for (&f, &y) in spec.functions.iter().zip(values) {
            self.data[f].push(Observation { x: x.to_vec(), y });
        }
        Ok(())
    }

    /// The δ-confident recommendation from real data only.
    pub fn recommend(&self) -> Result<Recommendation> {
        self.recommend_with(self.config.delta, self.snapshot.as_ref().map(|s| &s.hypers))
    }

    fn recommend_with(&self, delta: f64, hypers: Option<&Vec<Vec<GpHyper>>>) -> Result<Recommendation> {
        let training: Vec<Vec<(Vec<f64>, f64)>> =
            self.data.iter().map(|d| d.iter().map(|o| (o.x.clone(), o.y)).collect()).collect();
        let hypers: Vec<Vec<GpHyper>> = match hypers {
            Some(h) => h
                .iter()
                .map(|hs| hs.iter().zip(&training).map(|(h, set)| GpHyper { mean: self.mean_for(set), ..h.clone() }).collect())
                .collect(),
            None => match &self.config.hyper {
                HyperMode::Fixed(h) => vec![h.clone()],
                HyperMode::Sample { .. } | HyperMode::Map => vec![self.chains.iter().zip(&training).map(|(c, set)| c.current(self.mean_for(set))).collect()],
            },
        };
        let states = Self::fit_states(&hypers, &training)?;
        let prior_only = self.data.iter().all(|d| d.is_empty());
        let k = self.config.n_functions - 1;
        let m = states.len() as f64;
        let eval = |xs: &[Vec<f64>]| -> Vec<(f64, Vec<f64>)> {
            let preds: Vec<Vec<_>> = states.iter().map(|per| per.iter().map(|s| s.predict_raw_many(xs)).collect()).collect();
            (0..xs.len())
                .map(|j| {
                    let mean = preds.iter().map(|p| p[0].0[j]).sum::<f64>() / m;
                    let probs = (1..=k)
                        .map(|i| preds.iter().map(|p| crate::ep::prob_nonnegative(p[i].0[j], p[i].1[j].max(0.0))).sum::<f64>() / m)
                        .collect();
                    (mean, probs)
                })
                .collect()
        };
        let threshold = 1.0 - delta;
        let mut rng = substream(self.config.seed, &[TAG_RECOMMEND]);
        let grid_size = self.config.slow.grid_size.max(1);
        let mut grid = shifted_halton(grid_size, self.config.dim, &mut rng);
        grid.extend(self.observed_inputs());
        let vals = eval(&grid);
        let feas = |p: &[f64]| p.iter().product::<f64>();
        let step0 = 0.5 / (grid_size as f64).powf(1.0 / self.config.dim as f64);
        let feasible: Vec<usize> = (0..grid.len()).filter(|&i| feas(&vals[i].1) >= threshold).collect();
        let (x, feasible_mode) = if !feasible.is_empty() {
            let bi = *feasible.iter().min_by(|&&a, &&b| vals[a].0.total_cmp(&vals[b].0)).expect("non-empty");
            let (x, _) = pattern_search(
                |x| {
                    let (mean, p) = eval(&[x.to_vec()]).pop().expect("one point");
                    if feas(&p) >= threshold { mean } else { f64::INFINITY }
                },
                &grid[bi],
                step0,
                self.config.slow.tol,
                100 + 60 * self.config.dim,
            );
            (x, true)
        } else {
            let bi = (0..grid.len()).max_by(|&a, &b| feas(&vals[a].1).total_cmp(&feas(&vals[b].1)).then(b.cmp(&a))).expect("non-empty");
            let (x, _) = pattern_search(|x| -feas(&eval(&[x.to_vec()])[0].1), &grid[bi], step0, self.config.slow.tol, 100 + 60 * self.config.dim);
            (x, false)
        };
        let (expected_objective, constraint_probs) = eval(&[x.clone()]).pop().expect("one point");
        Ok(Recommendation { x, expected_objective, constraint_probs, feasible_mode, prior_only })
    }
}
