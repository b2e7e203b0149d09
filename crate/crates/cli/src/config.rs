//! TOML run configuration.

use std::path::{Path, PathBuf};

use pesc::acquisition::{CostModel, SearchSettings, TaskSpec};
use pesc::benchmarks::{ExperimentConfig, ProblemSpec, SYNTHETIC_LENGTHSCALE, SYNTHETIC_NOISE, TOY_NOISE};
use pesc::domain::Domain;
use pesc::gp::GpHyper;
use pesc::hyper::HyperMode;
use pesc::kernel::{KernelFamily, KernelSpec};
use pesc::scheduler::{validate_graph, EngineConfig, GraphClass, MeanMode, Method, Resource, TaskGraph};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub resources: Vec<ResourceConfig>,
    #[serde(default)]
    pub engine: EngineKnobs,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_method() -> Method {
    Method::Pesc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Toy,
    Synthetic {
        dim: usize,
        #[serde(default = "one")]
        constraints: usize,
    },
    /// Black boxes run as subprocesses; see the task `command` field.
    External {
        functions: Vec<String>,
        /// One [lower, upper] pair per input dimension.
        bounds: Vec<[f64; 2]>,
        #[serde(default = "default_timeout")]
        timeout_seconds: f64,
    },
}

fn one() -> usize {
    1
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    /// Function names evaluated together by this task.
    pub functions: Vec<String>,
    /// Resources able to run the task; empty means every resource.
    #[serde(default)]
    pub resources: Vec<String>,
    /// Shell command for external problems.
    #[serde(default)]
    pub command: Option<String>,
    /// Simulated evaluation delay in seconds for built-in problems.
    #[serde(default)]
    pub delay: Option<f64>,
    /// Cost used to divide the task acquisition.
    #[serde(default)]
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    pub id: String,
    #[serde(default = "one")]
    pub capacity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperKind {
    Sample,
    Map,
    Fixed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineKnobs {
    pub samples: Option<usize>,
    pub delta: Option<f64>,
    /// Rationality level; absent means every refresh is slow.
    pub gamma: Option<f64>,
    pub kernel: Option<KernelFamily>,
    pub hyper: Option<HyperKind>,
    pub burn_in: Option<usize>,
    /// Hyperparameters for `hyper = "fixed"`, shared by every function.
    pub fixed_amplitude: Option<f64>,
    pub fixed_lengthscale: Option<f64>,
    pub noise_variance: Option<f64>,
    pub mean: Option<MeanMode>,
    pub grid_size: Option<usize>,
    pub tolerance: Option<f64>,
    pub fast_grid_size: Option<usize>,
    pub fast_tolerance: Option<f64>,
    pub basis_count: Option<usize>,
    pub sampler_grid: Option<usize>,
    pub rs_samples: Option<usize>,
    pub rs_grid: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Task evaluations after the initial design.
    pub iterations: Option<usize>,
    /// Simulated seconds.
    pub time_seconds: Option<f64>,
    pub initial: Option<usize>,
    pub repetitions: Option<usize>,
}

impl ProblemConfig {
    pub fn function_names(&self) -> Vec<String> {
        match self {
            Self::Toy => vec!["f".into(), "c1".into(), "c2".into()],
            Self::Synthetic { constraints, .. } => {
                std::iter::once("f".to_string()).chain((1..=*constraints).map(|k| format!("c{k}"))).collect()
            }
            Self::External { functions, .. } => functions.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy => 2,
            Self::Synthetic { dim, .. } => *dim,
            Self::External { bounds, .. } => bounds.len(),
        }
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        match self {
            Self::External { bounds, .. } => Ok(Domain::new(bounds.iter().map(|b| b[0]).collect(), bounds.iter().map(|b| b[1]).collect())?),
            _ => Ok(Domain::unit(self.dim())),
        }
    }

    pub fn spec(&self) -> Option<ProblemSpec> {
        match self {
            Self::Toy => Some(ProblemSpec::Toy),
            Self::Synthetic { dim, constraints } => Some(ProblemSpec::Synthetic { dim: *dim, constraints: *constraints }),
            Self::External { .. } => None,
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        raw.with_defaults()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Fill every optional knob and validate; idempotent.
    pub fn with_defaults(mut self) -> Result<Self, CliError> {
        let names = self.problem.function_names();
        if names.is_empty() {
            return Err(field("problem.functions", "at least the objective is required"));
        }
        if self.problem.dim() == 0 {
            return Err(field("problem", "dimension must be ≥ 1"));
        }
        if let ProblemConfig::External { timeout_seconds, .. } = &self.problem {
            if !(*timeout_seconds > 0.0) {
                return Err(field("problem.timeout_seconds", "must be positive"));
            }
        }
        self.problem.domain()?;
        if self.resources.is_empty() {
            self.resources.push(ResourceConfig { id: "r".into(), capacity: 1 });
        }
        if self.tasks.is_empty() {
            self.tasks.push(TaskConfig {
                id: "all".into(),
                functions: names.clone(),
                resources: Vec::new(),
                command: None,
                delay: None,
                cost: None,
            });
        }
        let all: Vec<String> = self.resources.iter().map(|r| r.id.clone()).collect();
        for t in &mut self.tasks {
            if t.resources.is_empty() {
                t.resources = all.clone();
            }
            if t.delay.is_some_and(|d| !(d >= 0.0)) {
                return Err(field(&format!("tasks.{}.delay", t.id), "must be ≥ 0"));
            }
            if t.cost.is_some_and(|c| !(c > 0.0)) {
                return Err(field(&format!("tasks.{}.cost", t.id), "must be positive"));
            }
        }
        if matches!(self.problem, ProblemConfig::External { .. }) {
            if let Some(t) = self.tasks.iter().find(|t| t.command.is_none()) {
                return Err(field(&format!("tasks.{}.command", t.id), "external problems need a command per task"));
            }
        }

        let toy = matches!(self.problem, ProblemConfig::Toy);
        let synthetic = matches!(self.problem, ProblemConfig::Synthetic { .. });
        let e = &mut self.engine;
        e.samples.get_or_insert(if toy { 10 } else { 50 });
        e.delta.get_or_insert(0.05);
        e.kernel.get_or_insert(KernelFamily::SquaredExponential);
        e.hyper.get_or_insert(if toy {
            HyperKind::Map
        } else if synthetic {
            HyperKind::Fixed
        } else {
            HyperKind::Sample
        });
        e.burn_in.get_or_insert(10);
        if e.hyper == Some(HyperKind::Fixed) {
            e.fixed_amplitude.get_or_insert(1.0);
            e.fixed_lengthscale.get_or_insert(SYNTHETIC_LENGTHSCALE);
            e.noise_variance.get_or_insert(if synthetic { SYNTHETIC_NOISE } else { 1e-6 });
        }
        if toy {
            e.noise_variance.get_or_insert(TOY_NOISE);
        }
        e.mean.get_or_insert(if synthetic { MeanMode::Zero } else { MeanMode::Empirical });
        e.grid_size.get_or_insert(SearchSettings::SLOW.grid_size);
        e.tolerance.get_or_insert(SearchSettings::SLOW.tol);
        e.fast_grid_size.get_or_insert(SearchSettings::FAST.grid_size);
        e.fast_tolerance.get_or_insert(SearchSettings::FAST.tol);
        e.basis_count.get_or_insert(pesc::sampler::DEFAULT_BASIS);
        e.sampler_grid.get_or_insert(pesc::sampler::DEFAULT_GRID);
        e.rs_samples.get_or_insert(10_000);
        e.rs_grid.get_or_insert(200);
        if e.gamma.is_some_and(|g| g.is_nan() || g < 0.0) {
            return Err(field("engine.gamma", "must be ≥ 0"));
        }
        if e.delta.is_some_and(|d| !(d > 0.0 && d < 1.0)) {
            return Err(field("engine.delta", "must lie in (0, 1)"));
        }
        let b = &mut self.budget;
        if b.iterations.is_none() && b.time_seconds.is_none() {
            b.iterations = Some(30);
        }
        b.initial.get_or_insert(3);
        b.repetitions.get_or_insert(1);
        self.graph()?;
        self.engine_config()?;
        Ok(self)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.problem.function_names().iter().position(|n| n == name)
    }

    pub fn graph(&self) -> Result<TaskGraph, CliError> {
        let mut tasks = Vec::new();
        for t in &self.tasks {
            let fns = t
                .functions
                .iter()
                .map(|n| self.function_index(n).ok_or_else(|| field(&format!("tasks.{}.functions", t.id), format!("unknown function '{n}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            tasks.push(TaskSpec { id: t.id.clone(), functions: fns });
        }
        let resources: Vec<Resource> = self.resources.iter().map(|r| Resource { id: r.id.clone(), capacity: r.capacity }).collect();
        let mut edges = Vec::new();
        for (ti, t) in self.tasks.iter().enumerate() {
            for r in &t.resources {
                let ri = resources
                    .iter()
                    .position(|x| &x.id == r)
                    .ok_or_else(|| field(&format!("tasks.{}.resources", t.id), format!("unknown resource '{r}'")))?;
                edges.push((ti, ri));
            }
        }
        let graph = TaskGraph { tasks, resources, edges };
        validate_graph(&graph, self.problem.function_names().len())?;
        Ok(graph)
    }

    pub fn graph_class(&self) -> Result<GraphClass, CliError> {
        Ok(validate_graph(&self.graph()?, self.problem.function_names().len())?)
    }

    pub fn engine_config(&self) -> Result<EngineConfig, CliError> {
        let e = &self.engine;
        let dim = self.problem.dim();
        let n = self.problem.function_names().len();
        let mut c = EngineConfig::new(self.method, dim, n, self.seed);
        c.samples = e.samples.unwrap_or(c.samples);
        c.delta = e.delta.unwrap_or(c.delta);
        c.kernel = e.kernel.unwrap_or(c.kernel);
        c.mean = e.mean.unwrap_or(c.mean);
        c.hyper = match e.hyper.unwrap_or(HyperKind::Sample) {
            HyperKind::Sample => HyperMode::Sample { burn_in: e.burn_in.unwrap_or(10) },
            HyperKind::Map => HyperMode::Map,
            HyperKind::Fixed => {
                let kernel = KernelSpec::iso(c.kernel, e.fixed_amplitude.unwrap_or(1.0), e.fixed_lengthscale.unwrap_or(SYNTHETIC_LENGTHSCALE), dim)?;
                HyperMode::Fixed(vec![GpHyper::new(kernel, e.noise_variance.unwrap_or(1e-6), 0.0)?; n])
            }
        };
        if !matches!(c.hyper, HyperMode::Fixed(_)) {
            c.noise_variance = e.noise_variance;
        }
        c.slow = SearchSettings { grid_size: e.grid_size.unwrap_or(c.slow.grid_size), tol: e.tolerance.unwrap_or(c.slow.tol) };
        c.fast = SearchSettings { grid_size: e.fast_grid_size.unwrap_or(c.fast.grid_size), tol: e.fast_tolerance.unwrap_or(c.fast.tol) };
        c.basis_count = e.basis_count.unwrap_or(c.basis_count);
        c.sampler_grid = e.sampler_grid.unwrap_or(c.sampler_grid);
        c.rs_joint = e.rs_samples.unwrap_or(c.rs_joint);
        c.rs_grid = e.rs_grid.unwrap_or(c.rs_grid);
        if self.tasks.iter().any(|t| t.cost.is_some()) {
            c.cost = CostModel::PerTask(self.tasks.iter().map(|t| t.cost.unwrap_or(1.0)).collect());
        }
        // Engine::new validates the rest.
        pesc::scheduler::Engine::new(c.clone(), self.graph()?)?;
        Ok(c)
    }

    /// Per-function delays derived from task delays (a task's delay is charged to its functions).
    fn delays(&self) -> Option<Vec<f64>> {
        if self.tasks.iter().all(|t| t.delay.is_none()) {
            return None;
        }
        let mut d = vec![0.0; self.problem.function_names().len()];
        for t in &self.tasks {
            for f in &t.functions {
                if let Some(i) = self.function_index(f) {
                    d[i] = t.delay.unwrap_or(0.0);
                }
            }
        }
        Some(d)
    }

    /// Batch experiment for built-in problems.
    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig, CliError> {
        let spec = self
            .problem
            .spec()
            .ok_or_else(|| CliError::Config("batch experiments need a built-in problem".into()))?;
        let mut x = ExperimentConfig::new(spec, self.engine_config()?, self.graph()?);
        x.gamma = self.engine.gamma;
        x.max_iterations = self.budget.iterations;
        x.time_budget = self.budget.time_seconds;
        x.n_initial = self.budget.initial.unwrap_or(3);
        x.repetitions = self.budget.repetitions.unwrap_or(1);
        x.seed = seed;
        x.delays = self.delays();
        x.record_recommendations = true;
        Ok(x)
    }
}
