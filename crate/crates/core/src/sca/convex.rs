//! Smooth convex programs built from a few term shapes, and a log-barrier
//! interior-point solver for them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// `offset + sum(coeff * x[index])`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearForm {
    pub coeffs: Vec<(usize, f64)>,
    pub offset: f64,
}

impl LinearForm {
    pub fn new(coeffs: Vec<(usize, f64)>, offset: f64) -> Self {
        Self { coeffs, offset }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().fold(self.offset, |acc, &(i, a)| acc + a * x[i])
    }
}

/// Sum of a constant, linear terms, weighted squares of affine forms and
/// reciprocals `c / x[i]` (with `c >= 0`, restricted to `x[i] > 0`).
/// Every such function is convex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexFn {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub squares: Vec<(f64, LinearForm)>,
    pub reciprocals: Vec<(usize, f64)>,
}

impl ConvexFn {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn linear(mut self, i: usize, a: f64) -> Self {
        self.linear.push((i, a));
        self
    }

    pub fn square(mut self, weight: f64, form: LinearForm) -> Self {
        debug_assert!(weight >= 0.0);
        self.squares.push((weight, form));
        self
    }

    pub fn reciprocal(mut self, i: usize, c: f64) -> Self {
        debug_assert!(c >= 0.0);
        self.reciprocals.push((i, c));
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, a) in &self.linear {
            v += a * x[i];
        }
        for (w, f) in &self.squares {
            let r = f.eval(x);
            v += w * r * r;
        }
        for &(i, c) in &self.reciprocals {
            if x[i] <= 0.0 {
                return f64::INFINITY;
            }
            v += c / x[i];
        }
        v
    }

    /// Gradient as (index, partial) pairs; indices may repeat.
    pub fn sparse_grad(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.extend_from_slice(&self.linear);
        for (w, f) in &self.squares {
            let r = 2.0 * w * f.eval(x);
            out.extend(f.coeffs.iter().map(|&(i, a)| (i, r * a)));
        }
        for &(i, c) in &self.reciprocals {
            out.push((i, -c / (x[i] * x[i])));
        }
    }

    /// Adds `weight * hessian` into `h`.
    pub fn add_hessian(&self, x: &[f64], weight: f64, h: &mut DMatrix<f64>) {
        for (w, f) in &self.squares {
            let s = 2.0 * w * weight;
            for &(i, a) in &f.coeffs {
                for &(j, b) in &f.coeffs {
                    h[(i, j)] += s * a * b;
                }
            }
        }
        for &(i, c) in &self.reciprocals {
            h[(i, i)] += weight * 2.0 * c / (x[i] * x[i] * x[i]);
        }
    }

    /// The same function in variables `u = x / scale`, divided by `factor`.
    fn rescaled(&self, scale: &[f64], factor: f64) -> ConvexFn {
        let inv = 1.0 / factor;
        ConvexFn {
            constant: self.constant * inv,
            linear: self.linear.iter().map(|&(i, a)| (i, a * scale[i] * inv)).collect(),
            squares: self
                .squares
                .iter()
                .map(|(w, f)| {
                    (
                        w * inv,
                        LinearForm::new(f.coeffs.iter().map(|&(i, a)| (i, a * scale[i])).collect(), f.offset),
                    )
                })
                .collect(),
            reciprocals: self.reciprocals.iter().map(|&(i, c)| (i, c / scale[i] * inv)).collect(),
        }
    }

    /// Largest magnitude among the individual terms at `x`.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        let mut m = self.constant.abs();
        for &(i, a) in &self.linear {
            m = m.max((a * x[i]).abs());
        }
        for (w, f) in &self.squares {
            m = m.max(w * f.eval(x).powi(2));
            for &(i, a) in &f.coeffs {
                m = m.max(w * (a * x[i]).powi(2));
            }
            m = m.max(w * f.offset * f.offset);
        }
        for &(i, c) in &self.reciprocals {
            if x[i] > 0.0 {
                m = m.max(c / x[i]);
            }
        }
        m
    }
}

/// A convex program: minimize `objective` subject to `constraints[i] <= 0`
/// and `lower <= x <= upper` (infinite bounds allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    pub n_vars: usize,
    pub objective: ConvexFn,
    /// Constant part of the objective kept out of the solve.
    pub objective_offset: f64,
    pub constraints: Vec<ConvexFn>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Typical magnitude of each variable.
    pub scale: Vec<f64>,
}

impl SubproblemSpec {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: ConvexFn::new(),
            objective_offset: 0.0,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            scale: vec![1.0; n_vars],
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x) + self.objective_offset
    }

    /// Largest constraint or bound violation at `x`, in original units.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v = self
            .constraints
            .iter()
            .map(|g| g.eval(x))
            .fold(f64::NEG_INFINITY, f64::max);
        for j in 0..self.n_vars {
            v = v.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Barrier parameter growth per stage.
    pub mu: f64,
    /// Stop once the duality-gap bound drops below this fraction of the objective.
    pub gap_rel: f64,
    pub gap_abs: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mu: 20.0,
            gap_rel: 1e-9,
            gap_abs: 1e-12,
            newton_tol: 1e-10,
            max_newton: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerTrace {
    pub newton_iters: usize,
    pub phase1_iters: usize,
    pub stages: usize,
    /// Largest normalized constraint value at the solution (negative when strictly feasible).
    pub max_violation: f64,
    /// Infinity norm of the Lagrangian gradient, normalized.
    pub stationarity: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid initial point: {0}")]
    InvalidInit(String),
    #[error("no strictly feasible point (phase-I optimum {phase1_value:.3e})")]
    Infeasible { phase1_value: f64 },
    #[error("iteration limit of {iterations} Newton steps reached")]
    MaxIterations { iterations: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Normalized problem in scaled variables.
struct Scaled {
    n: usize,
    objective: ConvexFn,
    constraints: Vec<ConvexFn>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Scaled {
    fn bound_count(&self) -> usize {
        self.lower.iter().filter(|l| l.is_finite()).count() + self.upper.iter().filter(|u| u.is_finite()).count()
    }

    fn strictly_inside(&self, u: &[f64]) -> bool {
        (0..self.n).all(|j| u[j] > self.lower[j] && u[j] < self.upper[j])
            && self.constraints.iter().all(|g| g.eval(u) < 0.0)
    }

    fn barrier_value(&self, u: &[f64], t: f64) -> f64 {
        let mut v = t * self.objective.eval(u);
        for g in &self.constraints {
            let gv = g.eval(u);
            if !(gv < 0.0) {
                return f64::INFINITY;
            }
            v -= (-gv).ln();
        }
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                let s = u[j] - self.lower[j];
                if !(s > 0.0) {
                    return f64::INFINITY;
                }
                v -= s.ln();
            }
            if self.upper[j].is_finite() {
                let s = self.upper[j] - u[j];
                if !(s > 0.0) {
                    return f64::INFINITY;
                }
                v -= s.ln();
            }
        }
        v
    }

    /// Gradient and Hessian of the barrier function.
    fn barrier_derivatives(&self, u: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut sg = Vec::new();
        self.objective.sparse_grad(u, &mut sg);
        for &(i, v) in &sg {
            grad[i] += t * v;
        }
        self.objective.add_hessian(u, t, &mut hess);
        for g in &self.constraints {
            let gv = g.eval(u);
            let inv = -1.0 / gv;
            g.sparse_grad(u, &mut sg);
            for &(i, v) in &sg {
                grad[i] += inv * v;
            }
            let inv2 = inv * inv;
            for &(i, a) in &sg {
                for &(j, b) in &sg {
                    hess[(i, j)] += inv2 * a * b;
                }
            }
            g.add_hessian(u, inv, &mut hess);
        }
        for j in 0..n {
            if self.lower[j].is_finite() {
                let s = u[j] - self.lower[j];
                grad[j] -= 1.0 / s;
                hess[(j, j)] += 1.0 / (s * s);
            }
            if self.upper[j].is_finite() {
                let s = self.upper[j] - u[j];
                grad[j] += 1.0 / s;
                hess[(j, j)] += 1.0 / (s * s);
            }
        }
        (grad, hess)
    }
}

fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Result<DVector<f64>, SolveError> {
    let n = grad.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let h = hess[(i, i)];
            if h > 0.0 && h.is_finite() {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut m = hess.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= d[i] * d[j];
        }
    }
    let rhs = DVector::from_iterator(n, (0..n).map(|i| -grad[i] * d[i]));
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut a = m.clone();
        if shift > 0.0 {
            for i in 0..n {
                a[(i, i)] += shift;
            }
        }
        if let Some(ch) = a.cholesky() {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Ok(DVector::from_iterator(n, (0..n).map(|i| y[i] * d[i])));
            }
        }
        shift = if shift == 0.0 { 1e-12 } else { shift * 100.0 };
    }
    Err(SolveError::Numerical("Newton system not positive definite".into()))
}

enum CenterExit {
    Centered,
    Stop,
}

/// Damped Newton minimization of the barrier function at parameter `t`.
/// `stop` is checked after every step.
fn center(
    p: &Scaled,
    u: &mut Vec<f64>,
    t: f64,
    opts: &SolveOptions,
    iters: &mut usize,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Result<CenterExit, SolveError> {
    let mut value = p.barrier_value(u, t);
    let mut trial = vec![0.0; u.len()];
    loop {
        if *iters >= opts.max_newton {
            return Err(SolveError::MaxIterations { iterations: *iters });
        }
        let (grad, hess) = p.barrier_derivatives(u, t);
        let dir = newton_direction(&grad, &hess)?;
        let slope = grad.dot(&dir);
        if -slope / 2.0 <= opts.newton_tol {
            return Ok(CenterExit::Centered);
        }
        *iters += 1;
        let prev_value = value;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            for j in 0..u.len() {
                trial[j] = u[j] + step * dir[j];
            }
            let v = p.barrier_value(&trial, t);
            if v.is_finite() && v <= value + 0.25 * step * slope {
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No progress possible at working precision.
            return Ok(CenterExit::Centered);
        }
        let stalled = prev_value - value <= 1e-14 * prev_value.abs().max(1.0);
        std::mem::swap(u, &mut trial);
        if stop(u) {
            return Ok(CenterExit::Stop);
        }
        if stalled {
            return Ok(CenterExit::Centered);
        }
    }
}

/// Sequence of centering steps with growing `t`.
fn barrier_loop(
    p: &Scaled,
    u: &mut Vec<f64>,
    opts: &SolveOptions,
    iters: &mut usize,
    stages: &mut usize,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Result<f64, SolveError> {
    let m = (p.constraints.len() + p.bound_count()).max(1) as f64;
    let mut t = m / p.objective.eval(u).abs().max(1.0);
    loop {
        *stages += 1;
        if let CenterExit::Stop = center(p, u, t, opts, iters, stop)? {
            return Ok(t);
        }
        let gap = m / t;
        if gap <= opts.gap_abs.max(opts.gap_rel * p.objective.eval(u).abs()) {
            return Ok(t);
        }
        t *= opts.mu;
    }
}

fn phase_one(p: &Scaled, u: &mut Vec<f64>, opts: &SolveOptions, trace: &mut InnerTrace) -> Result<(), SolveError> {
    let n = p.n;
    let worst = p
        .constraints
        .iter()
        .map(|g| g.eval(u))
        .fold(f64::NEG_INFINITY, f64::max);
    if !worst.is_finite() {
        return Err(SolveError::InvalidInit("constraint not finite at initial point".into()));
    }
    let mut lower = p.lower.clone();
    let mut upper = p.upper.clone();
    lower.push(worst.min(0.0) - 1.0);
    upper.push(f64::INFINITY);
    let aux = Scaled {
        n: n + 1,
        objective: ConvexFn::new().linear(n, 1.0),
        constraints: p.constraints.iter().map(|g| g.clone().linear(n, -1.0)).collect(),
        lower,
        upper,
    };
    let mut v = u.clone();
    v.push(worst + 1.0);
    let target = -1e-4;
    let mut iters = 0;
    let mut stages = 0;
    let done = |v: &[f64]| v[n] < target;
    let res = barrier_loop(&aux, &mut v, opts, &mut iters, &mut stages, &done);
    trace.phase1_iters = iters;
    match res {
        Ok(_) | Err(SolveError::MaxIterations { .. }) => {}
        Err(e) => return Err(e),
    }
    v.truncate(n);
    if p.strictly_inside(&v) {
        *u = v;
        Ok(())
    } else {
        let best = p
            .constraints
            .iter()
            .map(|g| g.eval(&v))
            .fold(f64::NEG_INFINITY, f64::max);
        Err(SolveError::Infeasible { phase1_value: best })
    }
}

/// Minimizes a convex program from `init`, returning a strictly feasible point.
pub fn solve_convex(
    spec: &SubproblemSpec,
    init: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, InnerTrace), SolveError> {
    let n = spec.n_vars;
    if init.len() != n || spec.lower.len() != n || spec.upper.len() != n || spec.scale.len() != n {
        return Err(SolveError::InvalidInit("dimension mismatch".into()));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::InvalidInit("non-finite initial value".into()));
    }
    for j in 0..n {
        if !(spec.lower[j] < spec.upper[j]) {
            return Err(SolveError::InvalidInit(format!("empty box for variable {j}")));
        }
        if !(spec.scale[j] > 0.0 && spec.scale[j].is_finite()) {
            return Err(SolveError::InvalidInit(format!("bad scale for variable {j}")));
        }
    }
    let scale = &spec.scale;
    let mut u: Vec<f64> = (0..n).map(|j| init[j] / scale[j]).collect();
    let lower: Vec<f64> = (0..n).map(|j| spec.lower[j] / scale[j]).collect();
    let upper: Vec<f64> = (0..n).map(|j| spec.upper[j] / scale[j]).collect();
    for j in 0..n {
        let width = upper[j] - lower[j];
        let margin = (1e-6 * u[j].abs().max(1.0)).min(0.25 * width);
        u[j] = u[j].clamp(lower[j] + margin, upper[j] - margin);
    }
    let x0: Vec<f64> = (0..n).map(|j| u[j] * scale[j]).collect();
    let constraints = spec
        .constraints
        .iter()
        .map(|g| {
            let m = g.magnitude(&x0);
            g.rescaled(scale, if m > 0.0 && m.is_finite() { m } else { 1.0 })
        })
        .collect();
    let om = spec.objective.magnitude(&x0);
    let p = Scaled {
        n,
        objective: spec
            .objective
            .rescaled(scale, if om > 0.0 && om.is_finite() { om } else { 1.0 }),
        constraints,
        lower,
        upper,
    };

    let mut trace = InnerTrace::default();
    if !p.strictly_inside(&u) {
        phase_one(&p, &mut u, opts, &mut trace)?;
    }
    let mut iters = 0;
    let mut stages = 0;
    let t = barrier_loop(&p, &mut u, opts, &mut iters, &mut stages, &|_| false)?;
    trace.newton_iters = iters;
    trace.stages = stages;
    trace.max_violation = p
        .constraints
        .iter()
        .map(|g| g.eval(&u))
        .fold(f64::NEG_INFINITY, f64::max);
    let (grad, _) = p.barrier_derivatives(&u, t);
    let mut og = Vec::new();
    p.objective.sparse_grad(&u, &mut og);
    let mut obj_grad = vec![0.0; n];
    for (i, v) in og {
        obj_grad[i] += v;
    }
    let norm = obj_grad.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    trace.stationarity = grad.amax() / t / norm;
    Ok(((0..n).map(|j| u[j] * scale[j]).collect(), trace))
}
