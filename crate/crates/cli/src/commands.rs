//! Implementations of the CLI verbs. Each returns the JSON printed on stdout.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use pesc::benchmarks::{median, pearson, run_experiment, utility_gap};
use pesc::controller::{Controller, UpdateMode};
use pesc::domain::{halton, latin_hypercube, substream, uniform_grid};
use pesc::scheduler::{Engine, Method, TaskGraph};
use serde_json::{json, Value};

use crate::config::{ProblemConfig, RunConfig};
use crate::error::CliError;
use crate::external::evaluate_with_retry;
use crate::record::{now_iso, read_trace, RecommendationRecord, RunRecord, Status, Timing, TraceWriter};
use crate::state::SavedState;

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Create a state file holding an empty engine for the configured problem.
pub fn init(config: &Path, state: &Path) -> Result<Value, CliError> {
    let cfg = RunConfig::load(config)?;
    let engine = Engine::new(cfg.engine_config()?, cfg.graph()?)?;
    let class = engine.class;
    SavedState::new(cfg.clone(), engine).save(state)?;
    Ok(json!({
        "state": state.display().to_string(),
        "class": class,
        "functions": cfg.problem.function_names(),
        "tasks": cfg.tasks.iter().map(|t| t.id.clone()).collect::<Vec<_>>(),
    }))
}

/// Slow refresh, suggest for a free resource, register the evaluation as pending, save.
pub fn suggest(state: &Path, resource: Option<&str>) -> Result<Value, CliError> {
    let mut saved = SavedState::load(state)?;
    let domain = saved.config.problem.domain()?;
    let engine = &mut saved.engine;
    let r = match resource {
        Some(id) => engine.graph.resource_index(id).ok_or_else(|| CliError::Usage(format!("unknown resource '{id}'")))?,
        None => (0..engine.graph.resources.len())
            .find(|&r| engine.occupancy(r) < engine.graph.resources[r].capacity)
            .ok_or_else(|| pesc::Error::Contract("every resource is at capacity".into()))?,
    };
    engine.refresh(UpdateMode::Slow)?;
    let s = engine.next_suggestion(r)?;
    let id = engine.register_pending(&s)?;
    let out = json!({
        "pending_id": id,
        "task": engine.graph.tasks[s.task].id,
        "resource": engine.graph.resources[r].id,
        "x": domain.from_unit(&s.x),
        "value": s.value,
    });
    saved.save(state)?;
    Ok(out)
}

fn parse_x(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("'{p}' in --x is not a number"))))
        .collect()
}

/// Values as a JSON array in task order or an object keyed by function name.
fn parse_values(text: &str, names: &[String]) -> Result<Vec<f64>, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("--values is not JSON: {e}")))?;
    let num = |v: &Value| v.as_f64().ok_or_else(|| CliError::Usage(format!("{v} is not a number")));
    match v {
        Value::Array(a) => a.iter().map(num).collect(),
        Value::Object(m) => {
            if m.len() != names.len() {
                return Err(pesc::Error::Contract(format!("task has {} functions but {} values were given", names.len(), m.len())).into());
            }
            names
                .iter()
                .map(|n| m.get(n).ok_or_else(|| pesc::Error::Contract(format!("no value for function '{n}'")).into()).and_then(num))
                .collect()
        }
        other => Err(CliError::Usage(format!("--values must be an array or object, got {other}"))),
    }
}

/// Record a real evaluation; a matching pending entry is cleared.
pub fn observe(state: &Path, task: &str, x: &str, values: &str) -> Result<Value, CliError> {
    let mut saved = SavedState::load(state)?;
    let domain = saved.config.problem.domain()?;
    let names = saved.config.problem.function_names();
    let engine = &mut saved.engine;
    let t = engine.graph.task_index(task).ok_or_else(|| CliError::Usage(format!("unknown task '{task}'")))?;
    let fn_names: Vec<String> = engine.graph.tasks[t].functions.iter().map(|&i| names[i].clone()).collect();
    let vals = parse_values(values, &fn_names)?;
    let x = parse_x(x)?;
    if x.len() != domain.dim() {
        return Err(pesc::Error::Contract(format!("x has {} coordinates, the problem has {}", x.len(), domain.dim())).into());
    }
    // Reuse the stored unit-box input of a matching pending evaluation so it is cleared exactly.
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + q.abs()));
    let unit = engine
        .pending
        .iter()
        .find(|p| p.task == t && close(&domain.from_unit(&p.x), &x))
        .map(|p| p.x.clone())
        .unwrap_or_else(|| domain.to_unit(&x));
    engine.observe(t, &unit, &vals)?;
    let counts: Vec<usize> = (0..names.len()).map(|i| engine.observation_count(i)).collect();
    let out = json!({ "task": task, "observations": counts, "pending": engine.pending.len() });
    saved.save(state)?;
    Ok(out)
}

/// Batch experiment; writes `trace.jsonl` and `summary.csv` into the output directory.
pub fn run(config: &Path, seed: Option<u64>, output: Option<PathBuf>) -> Result<Value, CliError> {
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let dir = output.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("pesc-output"));
    std::fs::create_dir_all(&dir).map_err(io)?;
    let trace_path = dir.join("trace.jsonl");
    let mut writer = TraceWriter::new(BufWriter::new(File::create(&trace_path).map_err(io)?));
    let summary = match &cfg.problem {
        ProblemConfig::External { .. } => run_external(&cfg, seed, &mut writer)?,
        _ => run_builtin(&cfg, seed, &mut writer, &dir)?,
    };
    use std::io::Write;
    writer.into_inner().flush().map_err(io)?;
    Ok(json!({ "trace": trace_path.display().to_string(), "summary": summary }))
}

fn run_builtin<W: std::io::Write>(cfg: &RunConfig, seed: u64, writer: &mut TraceWriter<W>, dir: &Path) -> Result<Value, CliError> {
    let experiment = cfg.experiment(seed)?;
    let names = cfg.problem.function_names();
    let domain = cfg.problem.domain()?;
    let graph = &experiment.graph;
    let traces = run_experiment(&experiment);
    let mut csv = String::from("repetition,final_gap,slow_bo_seconds,fast_bo_seconds,evaluation_seconds,slow_refreshes,fast_refreshes");
    for n in &names {
        csv.push_str(&format!(",evals_{n}"));
    }
    csv.push_str(",error\n");
    for t in &traces {
        for r in &t.records {
            let ti = graph.task_index(&r.task).expect("task from this graph");
            writer.write(&RunRecord::from_iteration(t.repetition, r, &names, &graph.tasks[ti].functions, &domain))?;
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}",
            t.repetition,
            t.final_gap.map_or(String::new(), |g| g.to_string()),
            t.timing.slow_bo,
            t.timing.fast_bo,
            t.timing.total_evaluation(),
            t.slow_refreshes,
            t.fast_refreshes
        ));
        for c in &t.function_counts {
            csv.push_str(&format!(",{c}"));
        }
        csv.push_str(&format!(",{}\n", t.error.clone().unwrap_or_default().replace(',', ";")));
    }
    std::fs::write(dir.join("summary.csv"), csv).map_err(io)?;
    let gaps: Vec<f64> = traces.iter().filter_map(|t| t.final_gap).collect();
    Ok(json!({
        "repetitions": traces.len(),
        "failed": traces.iter().filter(|t| t.error.is_some()).count(),
        "median_final_gap": if gaps.is_empty() { Value::Null } else { json!(median(&gaps)) },
    }))
}

struct Issued {
    task: usize,
    x: Vec<f64>,
    mode: UpdateMode,
    bo_seconds: f64,
}

/// Real-time loop over subprocess black boxes, running up to each resource's capacity at once.
fn run_external<W: std::io::Write>(cfg: &RunConfig, seed: u64, writer: &mut TraceWriter<W>) -> Result<Value, CliError> {
    let ProblemConfig::External { timeout_seconds, .. } = &cfg.problem else {
        unreachable!("caller checked the problem kind")
    };
    let timeout = Duration::from_secs_f64(*timeout_seconds);
    let names = cfg.problem.function_names();
    let domain = cfg.problem.domain()?;
    let mut ec = cfg.engine_config()?;
    ec.seed = seed;
    let graph = cfg.graph()?;
    let mut engine = Engine::new(ec, graph.clone())?;
    let task_names = |t: usize| -> Vec<String> { graph.tasks[t].functions.iter().map(|&i| names[i].clone()).collect() };
    let command = |t: usize| cfg.tasks[t].command.clone().expect("validated");

    let mut init_rng = substream(seed, &[10, 0]);
    for u in latin_hypercube(cfg.budget.initial.unwrap_or(3), domain.dim(), &mut init_rng) {
        let x = domain.from_unit(&u);
        for t in 0..graph.tasks.len() {
            match evaluate_with_retry(&graph.tasks[t].id, &x, &command(t), &task_names(t), timeout).0 {
                Ok(v) => {
                    if let Err(e) = engine.observe(t, &u, &v) {
                        eprintln!("initial design: task '{}' dropped: {e}", graph.tasks[t].id);
                    }
                }
                Err(e) => eprintln!("initial design: task '{}' failed: {e}", graph.tasks[t].id),
            }
        }
    }

    let mut controller = cfg.engine.gamma.map(Controller::new).transpose()?;
    let start = Instant::now();
    let now = || start.elapsed().as_secs_f64();
    let may_issue = |issued: usize| {
        cfg.budget.iterations.is_none_or(|m| issued < m) && cfg.budget.time_seconds.is_none_or(|b| now() < b)
    };
    let (tx, rx) = mpsc::channel();
    let mut inflight: HashMap<u64, Issued> = HashMap::new();
    let (mut issued, mut completed, mut abandoned) = (0usize, 0usize, 0usize);
    loop {
        for r in 0..graph.resources.len() {
            while engine.occupancy(r) < graph.resources[r].capacity && !graph.tasks_on(r).is_empty() && may_issue(issued) {
                let mode = controller.as_ref().map_or(UpdateMode::Slow, |c| c.decide(now()));
                let t0 = now();
                let mode = engine.refresh(mode)?.mode.unwrap_or(mode);
                let s = engine.next_suggestion(r)?;
                let bo = now() - t0;
                if mode == UpdateMode::Slow {
                    if let Some(c) = controller.as_mut() {
                        c.record_slow(t0, now());
                    }
                }
                let id = engine.register_pending(&s)?;
                issued += 1;
                let (task_id, x, cmd, fns, tx) = (graph.tasks[s.task].id.clone(), domain.from_unit(&s.x), command(s.task), task_names(s.task), tx.clone());
                std::thread::spawn(move || {
                    let _ = tx.send((id, evaluate_with_retry(&task_id, &x, &cmd, &fns, timeout).0));
                });
                inflight.insert(id, Issued { task: s.task, x: s.x, mode, bo_seconds: bo });
            }
        }
        if inflight.is_empty() {
            break;
        }
        let (id, result) = rx.recv().expect("a sender is alive while evaluations are in flight");
        let ev = inflight.remove(&id).expect("known pending id");
        completed += 1;
        let fns = task_names(ev.task);
        let (status, error, values) = match result {
            Ok(v) => match engine.observe(ev.task, &ev.x, &v) {
                Ok(()) => (Status::Observed, None, fns.iter().cloned().zip(v).collect()),
                Err(e) => {
                    engine.abandon_pending(id)?;
                    (Status::Abandoned, Some(e.to_string()), Default::default())
                }
            },
            Err(e) => {
                engine.abandon_pending(id)?;
                (Status::Abandoned, Some(e.to_string()), Default::default())
            }
        };
        if status == Status::Abandoned {
            abandoned += 1;
        }
        let rec = engine.recommend().ok();
        writer.write(&RunRecord {
            repetition: 0,
            iteration: completed,
            mode: ev.mode,
            task: graph.tasks[ev.task].id.clone(),
            x: domain.from_unit(&ev.x),
            status,
            error,
            values,
            recommendation: rec.as_ref().map(|r| RecommendationRecord::new(r, &domain)),
            utility_gap: None,
            timing: Timing { timestamp: now_iso(), elapsed_seconds: now(), bo_seconds: ev.bo_seconds },
        })?;
    }
    let rec = engine.recommend()?;
    Ok(json!({
        "evaluations": completed,
        "abandoned": abandoned,
        "recommendation": RecommendationRecord::new(&rec, &domain),
    }))
}

/// Compare PESC with the rejection-sampling acquisition on one built-in problem state.
pub fn oracle(config: &Path, seed: Option<u64>) -> Result<Value, CliError> {
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let spec = cfg.problem.spec().ok_or_else(|| CliError::Config("the oracle needs a built-in problem".into()))?;
    let problem = spec.build(seed)?;
    let dim = problem.dim;
    let n = problem.n_functions();
    let grid = if dim == 1 { uniform_grid(100, 1) } else { halton(100, dim, 0) };
    let mut rng = substream(seed, &[20]);
    let design = latin_hypercube(cfg.budget.initial.unwrap_or(3).max(1), dim, &mut rng);
    let data: Vec<Vec<f64>> = design.iter().map(|x| (0..n).map(|i| problem.evaluate(i, x, &mut rng)).collect()).collect();
    let mut values = Vec::new();
    for method in [Method::Pesc, Method::Rs] {
        let mut ec = cfg.engine_config()?;
        ec.method = method;
        ec.seed = seed;
        let mut engine = Engine::new(ec, TaskGraph::coupled(n, 1))?;
        for (x, y) in design.iter().zip(&data) {
            engine.observe(0, x, y)?;
        }
        values.push(engine.acquisition_values(0, &grid)?);
    }
    let argmax = (0..grid.len()).max_by(|&a, &b| values[0][a].total_cmp(&values[0][b])).expect("non-empty grid");
    let rank = values[1].iter().filter(|v| **v > values[1][argmax]).count();
    let gap_at_argmax = utility_gap(&grid[argmax], &problem).ok();
    Ok(json!({
        "grid_points": grid.len(),
        "observations": design.len(),
        "pearson": pearson(&values[0], &values[1]),
        "pesc_argmax": grid[argmax],
        "rs_rank_of_pesc_argmax": rank,
        "in_rs_top_decile": rank < grid.len() / 10,
        "utility_gap_at_pesc_argmax": gap_at_argmax,
        "pesc": values[0],
        "rs": values[1],
    }))
}

/// CSV rows for plotting utility gap and cumulative task counts against iteration and time.
pub fn plotdata(trace: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(trace).map_err(|e| CliError::Io(format!("{}: {e}", trace.display())))?;
    let records = read_trace(&text)?;
    let mut tasks: Vec<String> = records.iter().map(|r| r.task.clone()).collect();
    tasks.sort();
    tasks.dedup();
    let mut out = String::from("repetition,iteration,elapsed_seconds,mode,task,status,utility_gap");
    for t in &tasks {
        out.push_str(&format!(",cumulative_{t}"));
    }
    out.push('\n');
    let mut counts: HashMap<(usize, String), usize> = HashMap::new();
    for r in &records {
        if r.status == Status::Observed {
            *counts.entry((r.repetition, r.task.clone())).or_default() += 1;
        }
        let mode = match r.mode {
            UpdateMode::Slow => "slow",
            UpdateMode::Fast => "fast",
        };
        let status = match r.status {
            Status::Observed => "observed",
            Status::Abandoned => "abandoned",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.repetition,
            r.iteration,
            r.timing.elapsed_seconds,
            mode,
            r.task,
            status,
            r.utility_gap.map_or(String::new(), |g| g.to_string())
        ));
        for t in &tasks {
            out.push_str(&format!(",{}", counts.get(&(r.repetition, t.clone())).copied().unwrap_or(0)));
        }
        out.push('\n');
    }
    Ok(out)
}
