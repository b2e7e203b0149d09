//! Bounded local optimizers on the unit box.

/// A differentiable scalar function on the unit box.
pub trait Surface {
    fn value(&self, x: &[f64]) -> f64;

    /// Value and gradient; the default uses central differences.
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let h = 1e-6;
        let mut g = vec![0.0; x.len()];
        let mut p = x.to_vec();
        for d in 0..x.len() {
            let orig = p[d];
            let hi = (orig + h).min(1.0);
            let lo = (orig - h).max(0.0);
            p[d] = hi;
            let fh = self.value(&p);
            p[d] = lo;
            let fl = self.value(&p);
            p[d] = orig;
            g[d] = (fh - fl) / (hi - lo);
        }
        (self.value(x), g)
    }
}

/// Adapter turning a closure into a [`Surface`] with finite-difference gradients.
pub struct FnSurface<F: Fn(&[f64]) -> f64>(pub F);

impl<F: Fn(&[f64]) -> f64> Surface for FnSurface<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

fn project(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Compass search minimizing `f` over the unit box, stopping when the step
/// size drops below `tol` or after `max_evals` evaluations.
pub fn pattern_search<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step0: f64,
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut step = step0;
    let mut evals = 1;
    let mut trial = x.clone();
    while step >= tol && evals < max_evals {
        let mut improved = false;
        'dirs: for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                trial.copy_from_slice(&x);
                trial[d] = (x[d] + sign * step).clamp(0.0, 1.0);
                if trial[d] == x[d] {
                    continue;
                }
                let ft = f(&trial);
                evals += 1;
                if ft < fx {
                    fx = ft;
                    x.copy_from_slice(&trial);
                    improved = true;
                    break 'dirs;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Projected gradient descent with Armijo backtracking on the unit box.
pub fn minimize_box<S: Surface + ?Sized>(s: &S, x0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = s.value_grad(&x);
    let mut t = 1.0 / (1e-12 + g.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1.0);
    for _ in 0..max_iter {
        let mut accepted = false;
        let mut xn = x.clone();
        for _ in 0..40 {
            for d in 0..x.len() {
                xn[d] = (x[d] - t * g[d]).clamp(0.0, 1.0);
            }
            let decrease: f64 = g.iter().zip(x.iter().zip(&xn)).map(|(gd, (a, b))| gd * (a - b)).sum();
            let fxn = s.value(&xn);
            if fxn <= fx - 1e-4 * decrease {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let moved = x.iter().zip(&xn).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = xn;
        let (fnew, gnew) = s.value_grad(&x);
        fx = fnew;
        g = gnew;
        t *= 2.0;
        if moved < tol {
            break;
        }
    }
    x
}

struct Lagrangian<'a, S: ?Sized> {
    obj: &'a S,
    cons: &'a [&'a S],
    lambda: &'a [f64],
    rho: f64,
}

impl<S: Surface + ?Sized> Surface for Lagrangian<'_, S> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.obj.value(x);
        for (c, l) in self.cons.iter().zip(self.lambda) {
            let s = (l - self.rho * c.value(x)).max(0.0);
            v += (s * s - l * l) / (2.0 * self.rho);
        }
        v
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (mut v, mut g) = self.obj.value_grad(x);
        for (c, l) in self.cons.iter().zip(self.lambda) {
            let (cv, cg) = c.value_grad(x);
            let s = (l - self.rho * cv).max(0.0);
            v += (s * s - l * l) / (2.0 * self.rho);
            for (gd, cd) in g.iter_mut().zip(cg) {
                *gd -= s * cd;
            }
        }
        (v, g)
    }
}

/// Minimize `obj` subject to `c_k(x) ≥ 0` on the unit box with an augmented
/// Lagrangian outer loop and projected-gradient inner solves.
pub fn minimize_constrained<S: Surface + ?Sized>(obj: &S, cons: &[&S], x0: &[f64], tol: f64) -> Vec<f64> {
    if cons.is_empty() {
        return minimize_box(obj, x0, tol, 200);
    }
    let mut lambda = vec![0.0; cons.len()];
    let mut rho = 10.0;
    let mut x = x0.to_vec();
    let mut prev_viol = f64::INFINITY;
    for _ in 0..20 {
        let lag = Lagrangian { obj, cons, lambda: &lambda, rho };
        let xn = minimize_box(&lag, &x, tol, 100);
        let moved = x.iter().zip(&xn).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = xn;
        let cv: Vec<f64> = cons.iter().map(|c| c.value(&x)).collect();
        let viol = cv.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        for (l, c) in lambda.iter_mut().zip(&cv) {
            *l = (*l - rho * c).max(0.0);
        }
        if viol <= tol && moved <= tol {
            break;
        }
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(1e8);
        }
        prev_viol = viol;
    }
    x
}
