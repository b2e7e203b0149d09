//! Search-space boxes, low-discrepancy grids and seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Contract("domain bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Contract("domain requires finite lower < upper on every axis".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }

    pub fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l + v * (u - l)).clamp(*l, *u))
            .collect()
    }
}

const PRIMES: [u64; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Points `start..start+n` of the Halton sequence in the unit cube.
pub fn halton(n: usize, dim: usize, start: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sequence supports up to {} dimensions", PRIMES.len());
    (0..n as u64)
        .map(|i| (0..dim).map(|d| radical_inverse(start + i + 1, PRIMES[d])).collect())
        .collect()
}

/// Halton points with a random toroidal shift.
pub fn shifted_halton<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    halton(n, dim, 0)
        .into_iter()
        .map(|p| p.iter().zip(&shift).map(|(a, s)| (a + s).fract()).collect())
        .collect()
}

/// Latin hypercube sample of `n` points in the unit cube.
pub fn latin_hypercube<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Uniform tensor grid with `per_axis` points per axis, endpoints included.
pub fn uniform_grid(per_axis: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if per_axis == 1 {
        vec![0.5]
    } else {
        (0..per_axis).map(|i| i as f64 / (per_axis - 1) as f64).collect()
    };
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    out
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator derived from a seed and a path of tags.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for t in tags {
        h = splitmix(h ^ splitmix(*t));
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        let h = halton(3, 2, 0);
        assert_eq!(h[0], vec![0.5, 1.0 / 3.0]);
        assert_eq!(h[1], vec![0.25, 2.0 / 3.0]);
        assert!((h[2][0] - 0.75).abs() < 1e-15 && (h[2][1] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn latin_hypercube_strata() {
        let mut rng = substream(3, &[1]);
        let pts = latin_hypercube(5, 2, &mut rng);
        for d in 0..2 {
            let mut cells: Vec<usize> = pts.iter().map(|p| (p[d] * 5.0) as usize).collect();
            cells.sort();
            assert_eq!(cells, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn unit_round_trip() {
        let d = Domain::new(vec![-2.0, 10.0], vec![3.0, 12.0]).unwrap();
        let x = vec![0.5, 11.0];
        let z = d.to_unit(&x);
        assert_eq!(z, vec![0.5, 0.5]);
        assert_eq!(d.from_unit(&z), x);
        assert!(Domain::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let a: u64 = substream(1, &[2, 3]).random();
        let b: u64 = substream(1, &[2, 3]).random();
        let c: u64 = substream(1, &[3, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_grid_shape() {
        let g = uniform_grid(3, 2);
        assert_eq!(g.len(), 9);
        assert_eq!(g[4], vec![0.5, 0.5]);
    }
}
