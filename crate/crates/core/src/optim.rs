//! Box-constrained BFGS with central-difference gradients.
//!
//! Bounds are handled by projection: the search path is `P(x + t·d)` and
//! gradient components pinned against an active bound are dropped. Callers
//! are expected to pass reasonably scaled variables (order one).

#[derive(Debug, Clone)]
pub struct QuasiNewtonOptions {
    /// Stop once the projected gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Finite-difference step relative to `max(|x_i|, 1)`.
    pub rel_step: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        QuasiNewtonOptions { grad_tol: 1e-10, max_iter: 200, rel_step: 1e-7, lower: None, upper: None }
    }
}

impl QuasiNewtonOptions {
    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Projected gradient below tolerance.
    Gradient,
    /// No further decrease representable; stationary to working precision.
    NoProgress,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

struct Problem<'a, F> {
    f: F,
    opts: &'a QuasiNewtonOptions,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Problem<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    fn project(&self, x: &mut [f64]) {
        if let Some(lo) = &self.opts.lower {
            for (v, l) in x.iter_mut().zip(lo) {
                *v = v.max(*l);
            }
        }
        if let Some(hi) = &self.opts.upper {
            for (v, h) in x.iter_mut().zip(hi) {
                *v = v.min(*h);
            }
        }
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            let h = self.opts.rel_step * x[i].abs().max(1.0);
            // One-sided at a bound so the probe stays feasible.
            let lo = self.opts.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l[i]);
            let hi = self.opts.upper.as_ref().map_or(f64::INFINITY, |u| u[i]);
            let (a, b) = ((x[i] - h).max(lo), (x[i] + h).min(hi));
            probe[i] = b;
            let fb = self.eval(&probe);
            probe[i] = a;
            let fa = self.eval(&probe);
            probe[i] = x[i];
            g[i] = if b > a { (fb - fa) / (b - a) } else { 0.0 };
        }
        g
    }

    /// Zeroes gradient components that point out of the box at an active bound.
    fn free_mask(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        (0..x.len())
            .map(|i| {
                let at_lo = self.opts.lower.as_ref().is_some_and(|l| x[i] <= l[i] && g[i] > 0.0);
                let at_hi = self.opts.upper.as_ref().is_some_and(|u| x[i] >= u[i] && g[i] < 0.0);
                !(at_lo || at_hi)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` starting from `x0` (projected into the box first).
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &QuasiNewtonOptions) -> Minimum {
    let n = x0.len();
    let mut p = Problem { f, opts, evals: 0 };
    let mut x = x0.to_vec();
    p.project(&mut x);
    let mut fx = p.eval(&x);
    let mut g = p.gradient(&x);
    // Inverse Hessian approximation, row-major n×n.
    let mut h = identity(n);
    let mut fresh = true;

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let free = p.free_mask(&x, &g);
        let pg: Vec<f64> = g.iter().zip(&free).map(|(v, f)| if *f { *v } else { 0.0 }).collect();
        if dot(&pg, &pg).sqrt() < opts.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        iterations += 1;

        let mut d = direction(&h, &pg, &free);
        if dot(&d, &pg) >= 0.0 {
            h = identity(n);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }

        // Backtracking Armijo search along the projected path.
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-20 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            p.project(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let fn_ = p.eval(&xn);
            if fn_ <= fx + 1e-4 * dot(&pg, &step) && fn_ <= fx {
                accepted = Some((xn, fn_, step));
                break;
            }
            t *= 0.5;
        }

        let Some((xn, fn_, s)) = accepted else {
            if fresh {
                termination = Termination::NoProgress;
                break;
            }
            // Stale curvature model; retry as steepest descent.
            h = identity(n);
            fresh = true;
            continue;
        };

        let gn = p.gradient(&xn);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n).into_iter().map(|v| v * scale).collect();
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if decrease == 0.0 {
            termination = Termination::NoProgress;
            break;
        }
    }
    Minimum { x, f: fx, iterations, evaluations: p.evals, termination }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn direction(h: &[f64], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|j| free[*j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
