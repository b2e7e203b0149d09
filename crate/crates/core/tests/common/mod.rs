use pesc::domain::substream;
use pesc::ep::{run_ep, EpProblem};
use pesc::gp::{GpHyper, GpState};
use pesc::kernel::{KernelFamily, KernelSpec};
use pesc::oracle::{rs_conditional_moments, rs_summary, RsConfig};
use rand::Rng;

fn se(ls: f64, noise: f64) -> GpHyper {
    GpHyper::new(KernelSpec::iso(KernelFamily::SquaredExponential, 1.0, ls, 1).unwrap(), noise, 0.0).unwrap()
}

/// Largest absolute EP-vs-RS moment error on one random discrete instance.
pub fn instance_error(seed: u64) -> f64 {
    let mut rng = substream(seed, &[]);
    let nz = rng.random_range(2..=3usize);
    let k = rng.random_range(0..=2usize);
    let ls = 0.2 + 0.4 * rng.random::<f64>();
    let z: Vec<Vec<f64>> = (0..nz).map(|_| vec![rng.random::<f64>()]).collect();
    let states: Vec<GpState> = (0..=k)
        .map(|_| {
            let n = rng.random_range(0..3usize);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let ys = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            GpState::fit(se(ls, 0.05), xs, ys).unwrap()
        })
        .collect();
    let pilot = rs_summary(&states, &z, &z, 20_000, seed).unwrap();
    let star = (0..nz).max_by_key(|&g| pilot.counts[g]).unwrap();
    let rate = pilot.counts[star] as f64 / 20_000.0;
    let mut n_joint = ((1e6 / rate) * 1.02) as usize;
    let rs = loop {
        let cfg = RsConfig::new(z.clone(), n_joint, seed + 1);
        let (rs, accepted) = rs_conditional_moments(&states, star, &z, &cfg).unwrap();
        if accepted >= 1_000_000 {
            break rs;
        }
        n_joint = n_joint * 1_000_000 / accepted + 1000;
    };

    let others: Vec<Vec<f64>> = (0..nz).filter(|&g| g != star).map(|g| z[g].clone()).collect();
    let sol = run_ep(&EpProblem::new(&states, &z[star], &others), None).unwrap();
    let order: Vec<usize> = (0..nz).filter(|&g| g != star).chain([star]).collect();
    let mut worst: f64 = 0.0;
    for (pos, &g) in order.iter().enumerate() {
        for i in 0..=k {
            let (m, v) = rs[g][i];
            worst = worst.max((sol.means[i][pos] - m).abs()).max((sol.covs[i][(pos, pos)] - v).abs());
        }
    }
    worst
}
