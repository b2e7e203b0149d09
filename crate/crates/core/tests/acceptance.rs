//! End-to-end acceptance criteria. Each prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails. Criteria run sequentially so measured BO
//! time is not inflated by sibling tests.

mod common;

use std::time::{Duration, Instant};

use pesc::acquisition::{AcquisitionState, SampleInput};
use pesc::benchmarks::{
    bootstrap_median_interval, make_synthetic_problem, median, pearson, run_experiment, run_repetition, ExperimentConfig,
    ProblemSpec, RepetitionTrace, TOY_NOISE,
};
use pesc::domain::{latin_hypercube, substream, uniform_grid};
use pesc::ep::{fixed_point_residual, run_ep, EpProblem, CONVERGENCE_TOL};
use pesc::gp::{GpHyper, GpState};
use pesc::hyper::HyperMode;
use pesc::kernel::{KernelFamily, KernelSpec};
use pesc::sampler::{draw_sampled_function, sample_minimizers, SamplerSettings, DEFAULT_BASIS};
use pesc::scheduler::{Engine, EngineConfig, MeanMode, Method, TaskGraph};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

/// `PESC_ACCEPTANCE=3,5` restricts the run to the listed criteria.
fn selected(name: &str) -> bool {
    match std::env::var("PESC_ACCEPTANCE") {
        Ok(list) => list.split(',').any(|n| name.split(' ').next() == Some(n.trim())),
        Err(_) => true,
    }
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    if !selected(name) {
        println!("SKIP {name}");
        return true;
    }
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    let time_note = if in_time { String::new() } else { format!("; exceeded {:.0} s limit", limit.as_secs_f64()) };
    println!(
        "{} {name}: {}{time_note} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    pass
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn se(ls: f64, noise: f64, dim: usize) -> GpHyper {
    GpHyper::new(KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, ls, dim).unwrap(), noise, 0.0).unwrap()
}

fn rs_oracle_agreement() -> Outcome {
    let grid = uniform_grid(100, 1);
    let truth = se(0.1, 0.01, 1);
    let mut cors = Vec::new();
    let mut hits = 0;
    let states = 20u64;
    for s in 0..states {
        let problem = make_synthetic_problem(1, s, 1).unwrap();
        let xs = latin_hypercube(5, 1, &mut substream(s, &[99]));
        let mut noise = substream(s, &[98]);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![problem.evaluate(0, x, &mut noise), problem.evaluate(1, x, &mut noise)]).collect();
        let mut vals = Vec::new();
        for method in [Method::Pesc, Method::Rs] {
            let mut c = EngineConfig::new(method, 1, 2, s);
            c.hyper = HyperMode::Fixed(vec![truth.clone(); 2]);
            c.rs_joint = 100_000;
            let mut e = Engine::new(c, TaskGraph::coupled(2, 1)).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                e.observe(0, x, y).unwrap();
            }
            vals.push(e.acquisition_values(0, &grid).unwrap());
        }
        cors.push(pearson(&vals[0], &vals[1]));
        let best = (0..grid.len()).max_by(|&a, &b| vals[0][a].total_cmp(&vals[0][b])).unwrap();
        let rank = vals[1].iter().filter(|v| **v > vals[1][best]).count();
        if rank < grid.len() / 10 {
            hits += 1;
        }
    }
    let r = median(&cors);
    let frac = hits as f64 / states as f64;
    Outcome { pass: r >= 0.8 && frac >= 0.7, detail: format!("median r = {r:.3}, argmax in RS top 10% on {hits}/{states}") }
}

fn ep_moment_accuracy() -> Outcome {
    let errors: Vec<f64> = (0..50).map(|s| common::instance_error(1000 + s)).collect();
    let outside: Vec<String> =
        errors.iter().enumerate().filter(|(_, e)| **e > 0.05).map(|(s, e)| format!("{} ({e:.3})", 1000 + s)).collect();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: outside.is_empty(),
        detail: format!(
            "{}/{} instances within 0.05, worst {worst:.3}; outside: [{}]",
            errors.len() - outside.len(),
            errors.len(),
            outside.join(", ")
        ),
    }
}

fn toy_engine(method: Method) -> EngineConfig {
    let mut e = EngineConfig::new(method, 2, 3, 0);
    e.samples = 10;
    e.hyper = HyperMode::Map;
    e.mean = MeanMode::Empirical;
    e.noise_variance = Some(TOY_NOISE);
    e
}

fn toy_optimization() -> Outcome {
    let mut summary = Vec::new();
    for method in [Method::Pesc, Method::Eic] {
        let mut c = ExperimentConfig::new(ProblemSpec::Toy, toy_engine(method), TaskGraph::coupled(3, 1));
        c.max_iterations = Some(30);
        c.repetitions = 50;
        let gaps: Vec<f64> = run_experiment(&c).iter().map(|t| t.final_gap.unwrap_or(f64::INFINITY)).collect();
        summary.push((median(&gaps), bootstrap_median_interval(&gaps, 0.8, 5000, 0)));
    }
    let (p, (plo, phi)) = summary[0];
    let (e, (elo, ehi)) = summary[1];
    Outcome {
        pass: p < e && phi < elo,
        detail: format!("PESC median {p:.2e} [{plo:.2e}, {phi:.2e}], EIC median {e:.2e} [{elo:.2e}, {ehi:.2e}]"),
    }
}

fn synthetic_ranking() -> Outcome {
    let truth = se(0.1, 0.01, 1);
    let mut medians = Vec::new();
    for method in [Method::Pesc, Method::Rs] {
        let mut e = EngineConfig::new(method, 1, 2, 0);
        e.hyper = HyperMode::Fixed(vec![truth.clone(); 2]);
        e.mean = MeanMode::Zero;
        let mut c = ExperimentConfig::new(ProblemSpec::Synthetic { dim: 1, constraints: 1 }, e, TaskGraph::coupled(2, 1));
        c.n_initial = 3;
        c.max_iterations = Some(17);
        c.repetitions = 50;
        c.seed = 4;
        let gaps: Vec<f64> = run_experiment(&c).iter().map(|t| t.final_gap.unwrap_or(f64::INFINITY)).collect();
        medians.push(median(&gaps));
    }
    Outcome {
        pass: medians[0] <= 1.5 * medians[1],
        detail: format!("PESC median gap {:.3e}, RS median gap {:.3e}", medians[0], medians[1]),
    }
}

fn decoupled_allocation() -> Outcome {
    let graph = TaskGraph::competitive(&["f", "c1", "c2"], 3);
    let mut c = ExperimentConfig::new(ProblemSpec::Toy, toy_engine(Method::Pesc), graph.clone());
    c.max_iterations = Some(60);
    c.repetitions = 20;
    c.seed = 5;
    let traces = run_experiment(&c);
    let failed = traces.iter().filter(|t| t.error.is_some()).count();
    let mut mean = [0.0; 3];
    for t in &traces {
        for (m, n) in mean.iter_mut().zip(t.counts_after(60, &graph, 3)) {
            *m += n as f64 / traces.len() as f64;
        }
    }
    Outcome {
        pass: failed == 0 && mean[1] > mean[0] && mean[1] > mean[2],
        detail: format!("mean evaluations f {:.1}, c1 {:.1}, c2 {:.1}; {failed} failed repetitions", mean[0], mean[1], mean[2]),
    }
}

fn time_budget() -> Outcome {
    let graph = TaskGraph::competitive(&["f", "c1", "c2"], 1);
    let reps = 3;
    let mut fractions = Vec::new();
    let mut ratios = Vec::new();
    for gamma in [0.1, 1.0, f64::INFINITY] {
        let mut c = ExperimentConfig::new(ProblemSpec::Toy, toy_engine(Method::Pesc), graph.clone());
        c.gamma = Some(gamma);
        c.delays = Some(vec![0.0, 0.2, 6.0]);
        c.max_iterations = None;
        c.time_budget = Some(90.0);
        c.seed = 6;
        let traces: Vec<RepetitionTrace> = (0..reps).map(|r| run_repetition(&c, r).unwrap()).collect();
        let slow: f64 = traces.iter().map(|t| t.timing.slow_bo).sum();
        let elapsed: f64 = traces.iter().map(|t| t.elapsed).sum();
        let evaluation: f64 = traces.iter().map(|t| t.timing.total_evaluation()).sum();
        fractions.push(slow / elapsed);
        ratios.push(slow / evaluation);
    }
    let ordered = fractions[0] < fractions[1] && fractions[1] < fractions[2];
    let bounded = ratios[0] <= 1.5 * 0.1 && ratios[1] <= 1.5;
    Outcome {
        pass: ordered && bounded,
        detail: format!(
            "slow-BO fraction {:.3} / {:.3} / {:.3} for γ = 0.1 / 1 / ∞; slow-BO/evaluation ratio {:.3} (γ = 0.1), {:.3} (γ = 1)",
            fractions[0], fractions[1], fractions[2], ratios[0], ratios[1]
        ),
    }
}

fn rank_one_matches_refit(seed: u64) -> f64 {
    let h = GpHyper::new(KernelSpec::new(KernelFamily::SquaredExponential, 1.0, vec![0.3, 0.5]).unwrap(), 0.01, 0.1).unwrap();
    let mut rng = substream(seed, &[]);
    let n = rng.random_range(1..50usize);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut inc = GpState::prior(h.clone());
    for (x, y) in xs.iter().zip(&ys) {
        inc = inc.extend(x.clone(), *y).unwrap();
    }
    let full = GpState::fit(h, xs, ys).unwrap();
    (0..20)
        .map(|_| {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let (a, b) = (inc.predict(&x), full.predict(&x));
            (a.mean - b.mean).abs().max((a.var_latent - b.var_latent).abs())
        })
        .fold(0.0, f64::max)
}

/// Fraction of grid points where 2000 finite-basis draws match the GP mean and variance within 4 standard errors.
fn basis_moments_ok() -> bool {
    let xs = vec![vec![0.1], vec![0.3], vec![0.45], vec![0.7], vec![0.9]];
    let state = GpState::fit(se(0.1, 0.01, 1), xs, vec![0.5, -0.3, 0.2, 1.0, -0.8]).unwrap();
    let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let mut rng = substream(2, &[]);
    let n = 2000;
    let (mut s1, mut s2) = (vec![0.0; grid.len()], vec![0.0; grid.len()]);
    for _ in 0..n {
        let f = draw_sampled_function(&state, DEFAULT_BASIS, &mut rng).unwrap();
        for (k, x) in grid.iter().enumerate() {
            let v = f.eval(&[*x]);
            s1[k] += v;
            s2[k] += v * v;
        }
    }
    grid.iter().enumerate().all(|(k, x)| {
        let p = state.predict(&[*x]);
        let m = s1[k] / n as f64;
        let v = s2[k] / n as f64 - m * m;
        let se_mean = (p.var_latent / n as f64).sqrt();
        let se_var = p.var_latent * (2.0 / (n - 1) as f64).sqrt();
        (m - p.mean).abs() <= 4.0 * se_mean + 1e-3 && (v - p.var_latent).abs() <= 4.0 * se_var + 1e-3
    })
}

fn random_states(seed: u64, k: usize) -> Vec<GpState> {
    let mut rng = substream(seed, &[]);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random(), rng.random()]).collect();
    (0..=k)
        .map(|_| {
            let ys = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
            GpState::fit(se(0.3, 0.01, 2), xs.clone(), ys).unwrap()
        })
        .collect()
}

fn additivity_exact() -> bool {
    let states = random_states(5, 2);
    let mut rng = substream(6, &[]);
    let inputs = (0..3)
        .map(|_| SampleInput { states: states.clone(), x_star: vec![rng.random(), rng.random()], x_star_feasible: true })
        .collect();
    let st = AcquisitionState::build(inputs, None).unwrap();
    (0..50).all(|_| {
        let x = vec![rng.random(), rng.random()];
        let per = st.per_function_all(&x);
        let all = st.task_alpha(&[0, 1, 2], &x);
        all == st.task_alpha(&[0, 2], &x) + st.task_alpha(&[1], &x)
            && all == st.task_alpha(&[0], &x) + st.task_alpha(&[1, 2], &x)
            && all == per[0] + per[1] + per[2]
    })
}

fn worst_ep_residual() -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for seed in 0..20 {
        let states = random_states(100 + seed, 1 + seed as usize % 2);
        let mut rng = substream(200 + seed, &[]);
        let x_star = vec![rng.random(), rng.random()];
        let prob = EpProblem::new(&states, &x_star, &states[0].inputs);
        let sol = run_ep(&prob, None).unwrap();
        if !sol.converged {
            unconverged += 1;
        }
        worst = worst.max(fixed_point_residual(&prob, &sol.sites).unwrap_or(f64::INFINITY));
    }
    (worst, unconverged)
}

fn deterministic() -> bool {
    let states = vec![random_states(9, 1)];
    let a = sample_minimizers(&states, SamplerSettings::default(), &[], 11).unwrap();
    let b = sample_minimizers(&states, SamplerSettings::default(), &[], 11).unwrap();
    let minimizers_same = a.iter().zip(&b).all(|(p, q)| p.x_star == q.x_star && p.feasible == q.feasible);

    let strip = |t: RepetitionTrace| -> Vec<(String, Vec<f64>, Vec<f64>)> {
        t.records.into_iter().map(|r| (r.task, r.x, r.values)).collect()
    };
    let mut c = ExperimentConfig::new(ProblemSpec::Toy, toy_engine(Method::Pesc), TaskGraph::coupled(3, 1));
    c.max_iterations = Some(4);
    let runs_same = strip(run_repetition(&c, 0).unwrap()) == strip(run_repetition(&c, 0).unwrap());
    let ep_same = common::instance_error(1003) == common::instance_error(1003);
    minimizers_same && runs_same && ep_same
}

fn numerical_invariants() -> Outcome {
    let rank_one = (0..20).map(rank_one_matches_refit).fold(0.0, f64::max);
    let moments = basis_moments_ok();
    let additive = additivity_exact();
    let (residual, unconverged) = worst_ep_residual();
    let det = deterministic();
    Outcome {
        pass: rank_one < 1e-8 && moments && additive && residual < CONVERGENCE_TOL && det,
        detail: format!(
            "rank-one vs refit {rank_one:.1e}, basis moments {}, additivity {}, EP residual {residual:.1e} ({unconverged} unconverged), deterministic {}",
            if moments { "ok" } else { "off" },
            if additive { "exact" } else { "inexact" },
            det
        ),
    }
}

fn main() {
    let results = [
        run("1 RS-oracle agreement", minutes(20), rs_oracle_agreement),
        run("2 EP moment accuracy", minutes(10), ep_moment_accuracy),
        run("3 toy-problem optimization", minutes(30), toy_optimization),
        run("4 1-D synthetic ranking", minutes(45), synthetic_ranking),
        run("5 decoupled task allocation", Duration::MAX, decoupled_allocation),
        run("6 time-budget rationality", Duration::MAX, time_budget),
        run("7 numerical invariants", minutes(10), numerical_invariants),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
