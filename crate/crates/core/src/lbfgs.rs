//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

/// Tuning knobs for [`lbfgs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    /// Stop once `max |gᵢ|` falls to this value.
    pub grad_tol: f64,
    /// Stop once the cost changed by at most this fraction over `stall_window` iterations.
    pub rel_tol: f64,
    pub stall_window: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            grad_tol: 1e-8,
            rel_tol: 1e-12,
            stall_window: 5,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Stalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost at the start point followed by the cost after every accepted step.
    pub history: Vec<f64>,
}

impl LbfgsOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Stalled)
    }
}

const MAX_BRACKET: usize = 40;
const MAX_ZOOM: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> LineSearch<'_, F> {
    fn eval(&mut self, alpha: f64) -> Point {
        let x: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + alpha * d).collect();
        let mut grad = vec![0.0; x.len()];
        let value = (self.f)(&x, &mut grad);
        let slope = dot(&grad, self.dir);
        Point { alpha, value, slope, x, grad }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.value.is_finite() && p.value <= self.f0 + self.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.c2 * self.slope0
    }

    /// Returns a point satisfying the strong Wolfe conditions, or failing
    /// that the best point with sufficient decrease.
    fn run(mut self, alpha0: f64) -> Option<Point> {
        let mut prev = Point { alpha: 0.0, value: self.f0, slope: self.slope0, x: self.x.to_vec(), grad: Vec::new() };
        let mut alpha = alpha0;
        for k in 0..MAX_BRACKET {
            let p = self.eval(alpha);
            if !self.armijo(&p) || (k > 0 && p.value >= prev.value) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            alpha *= 2.0;
            prev = p;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        for _ in 0..MAX_ZOOM {
            let alpha = interpolate(&lo, &hi);
            if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
                break;
            }
            let p = self.eval(alpha);
            if !self.armijo(&p) || p.value >= lo.value {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        (lo.alpha > 0.0).then_some(lo)
    }
}

/// Safeguarded cubic interpolation between two bracket ends; falls back to
/// bisection when the cubic is unusable or lands too close to an end.
fn interpolate(a: &Point, b: &Point) -> f64 {
    let mid = 0.5 * (a.alpha + b.alpha);
    if !(a.value.is_finite() && b.value.is_finite() && a.slope.is_finite() && b.slope.is_finite()) {
        return mid;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let rad = d1 * d1 - a.slope * b.slope;
    if rad < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * rad.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Two-loop recursion: returns `−H g`.
fn direction(grad: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `f`, which returns the value at `x` and writes the gradient into
/// its second argument.
pub fn lbfgs<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut value = f(&x, &mut grad);
    let mut history = vec![value];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let finish = |x, value, gradient, iterations, termination, history| LbfgsOutcome {
        x,
        value,
        gradient,
        iterations,
        termination,
        history,
    };

    if max_abs(&grad) <= opts.grad_tol {
        return finish(x, value, grad, 0, Termination::Gradient, history);
    }
    if !value.is_finite() {
        return finish(x, value, grad, 0, Termination::LineSearchFailed, history);
    }

    while iterations < opts.max_iterations {
        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if mem.is_empty() {
                    break;
                }
                mem.clear();
            }
            let mut dir = direction(&grad, &mem);
            let mut slope = dot(&grad, &dir);
            if !(slope < 0.0) {
                mem.clear();
                dir = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &dir);
            }
            let alpha0 = if mem.is_empty() { (1.0 / max_abs(&grad)).min(1.0) } else { 1.0 };
            let ls = LineSearch { f: &mut f, x: &x, dir: &dir, f0: value, slope0: slope, c1: opts.c1, c2: opts.c2 };
            if let Some(p) = ls.run(alpha0) {
                step = Some(p);
                break;
            }
        }
        let Some(p) = step else {
            return finish(x, value, grad, iterations, Termination::LineSearchFailed, history);
        };

        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            if opts.memory > 0 {
                mem.push_back((s, y, 1.0 / sy));
            }
        }
        x = p.x;
        grad = p.grad;
        value = p.value;
        history.push(value);
        iterations += 1;

        if max_abs(&grad) <= opts.grad_tol {
            return finish(x, value, grad, iterations, Termination::Gradient, history);
        }
        if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if (old - value).abs() <= opts.rel_tol * old.abs().max(f64::MIN_POSITIVE) {
                return finish(x, value, grad, iterations, Termination::Stalled, history);
            }
        }
    }
    finish(x, value, grad, iterations, Termination::MaxIterations, history)
}

/// Projected L-BFGS for `x ≥ lower` (use `f64::NEG_INFINITY` for free
/// entries). Variables held at their bound with an outward-pointing
/// gradient are frozen for the step; the quasi-Newton direction is built
/// on the remaining ones and the step is projected back onto the box with
/// an Armijo backtracking search.
pub fn lbfgs_bounded<F>(mut f: F, x0: &[f64], lower: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    assert_eq!(x0.len(), lower.len());
    let project = |x: &mut [f64]| x.iter_mut().zip(lower).for_each(|(v, l)| *v = v.max(*l));
    let mut x = x0.to_vec();
    project(&mut x);
    let mut grad = vec![0.0; x.len()];
    let mut value = f(&x, &mut grad);
    let mut history = vec![value];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let done = |x, value, gradient, iterations, termination, history| LbfgsOutcome {
        x,
        value,
        gradient,
        iterations,
        termination,
        history,
    };
    if !value.is_finite() {
        return done(x, value, grad, 0, Termination::LineSearchFailed, history);
    }

    loop {
        let bound: Vec<bool> = x.iter().zip(lower).zip(&grad).map(|((v, l), g)| *v <= *l && *g > 0.0).collect();
        let pg: Vec<f64> = grad.iter().zip(&bound).map(|(g, b)| if *b { 0.0 } else { *g }).collect();
        if max_abs(&pg) <= opts.grad_tol {
            return done(x, value, grad, iterations, Termination::Gradient, history);
        }
        if iterations >= opts.max_iterations {
            return done(x, value, grad, iterations, Termination::MaxIterations, history);
        }

        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if mem.is_empty() {
                    break;
                }
                mem.clear();
            }
            let masked: VecDeque<_> = mem
                .iter()
                .filter_map(|(s, y, _)| {
                    let s: Vec<f64> = s.iter().zip(&bound).map(|(v, b)| if *b { 0.0 } else { *v }).collect();
                    let y: Vec<f64> = y.iter().zip(&bound).map(|(v, b)| if *b { 0.0 } else { *v }).collect();
                    let sy = dot(&s, &y);
                    (sy > 0.0).then(|| (s, y, 1.0 / sy))
                })
                .collect();
            let mut dir = direction(&pg, &masked);
            dir.iter_mut().zip(&bound).for_each(|(d, b)| if *b { *d = 0.0 });
            if !(dot(&pg, &dir) < 0.0) {
                mem.clear();
                dir = pg.iter().map(|g| -g).collect();
            }
            let mut alpha = if mem.is_empty() { (1.0 / max_abs(&pg)).min(1.0) } else { 1.0 };
            for _ in 0..60 {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + alpha * d).collect();
                project(&mut trial);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&grad, &moved);
                if decrease >= 0.0 {
                    alpha *= 0.5;
                    continue;
                }
                let mut g = vec![0.0; x.len()];
                let v = f(&trial, &mut g);
                if v.is_finite() && v <= value + opts.c1 * decrease {
                    step = Some((trial, v, g));
                    break;
                }
                // quadratic model along the path, kept within [0.1α, 0.5α]
                let q = if v.is_finite() { -decrease * alpha / (2.0 * (v - value - decrease)) } else { 0.0 };
                alpha = q.clamp(0.1 * alpha, 0.5 * alpha);
            }
            if step.is_some() {
                break;
            }
        }
        let Some((next, next_value, next_grad)) = step else {
            return done(x, value, grad, iterations, Termination::LineSearchFailed, history);
        };

        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 && opts.memory > 0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = next;
        grad = next_grad;
        value = next_value;
        history.push(value);
        iterations += 1;

        if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if (old - value).abs() <= opts.rel_tol * old.abs().max(f64::MIN_POSITIVE) {
                return done(x, value, grad, iterations, Termination::Stalled, history);
            }
        }
    }
}
