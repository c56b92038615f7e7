//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    /// Stop when an accepted step lowers f by less than `f_rel_tol · max(1, |f|)`.
    pub f_rel_tol: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 100,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-6,
            f_rel_tol: 0.0,
            max_line_evals: 30,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidParameter("memory must be >= 1".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidParameter("need 0 < c1 < c2 < 1".into()));
        }
        if self.max_line_evals == 0 {
            return Err(Error::InvalidParameter("max_line_evals must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    IterationCap,
    FunctionTolerance,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at x₀ followed by the objective after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

/// Minimizes `f`, which returns the value and gradient at a point. Numerical errors raised
/// by `f` during a line search count as an infinite value; any error at `x0` is returned.
pub fn lbfgs_minimize<F>(mut f: F, x0: DVector<f64>, cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial point is not finite".into()));
    }
    let (f0, g0) = f(&x0)?;
    let mut evaluations = 1;
    let mut cur = Point { x: x0, f: f0, g: g0 };
    let mut trace = vec![cur.f];
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    let termination = loop {
        if cur.g.norm() < cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break Termination::IterationCap;
        }
        let mut dir = two_loop(&cur.g, &history);
        let mut slope = cur.g.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -&cur.g;
            slope = cur.g.dot(&dir);
        }
        let step0 = if history.is_empty() { (1.0 / cur.g.norm()).min(1.0) } else { 1.0 };
        let (found, evals, strong) = line_search(&mut f, &cur, &dir, slope, step0, cfg)?;
        evaluations += evals;
        let Some(next) = found else {
            break Termination::LineSearchFailed;
        };
        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = cur.f - next.f;
        cur = next;
        iterations += 1;
        trace.push(cur.f);
        if !strong {
            break Termination::LineSearchFailed;
        }
        if decrease <= cfg.f_rel_tol * cur.f.abs().max(1.0) {
            break Termination::FunctionTolerance;
        }
    };
    Ok(LbfgsResult {
        x: cur.x,
        value: cur.f,
        grad: cur.g,
        iterations,
        evaluations,
        trace,
        termination,
    })
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = -g;
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

struct Trial {
    t: f64,
    f: f64,
    slope: f64,
    g: Option<DVector<f64>>,
}

/// Strong-Wolfe bracketing and zoom. Returns the accepted point (if any), the number of
/// evaluations, and whether the strong-Wolfe conditions hold at it. When the evaluation
/// budget runs out, the best point satisfying sufficient decrease is returned instead.
fn line_search<F>(
    f: &mut F,
    cur: &Point,
    dir: &DVector<f64>,
    slope0: f64,
    step0: f64,
    cfg: &LbfgsConfig,
) -> Result<(Option<Point>, usize, bool)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut evals = 0;
    let mut best: Option<Trial> = None;
    let armijo = |t: f64, v: f64| v <= cur.f + cfg.c1 * t * slope0;
    let curvature = |s: f64| s.abs() <= -cfg.c2 * slope0;

    let mut eval = |t: f64, evals: &mut usize| -> Result<Trial> {
        *evals += 1;
        let x = &cur.x + dir * t;
        match f(&x) {
            Ok((v, g)) if v.is_finite() => Ok(Trial { t, f: v, slope: g.dot(dir), g: Some(g) }),
            Ok(_) => Ok(Trial { t, f: f64::INFINITY, slope: f64::NAN, g: None }),
            Err(e) if e.is_numerical() => Ok(Trial { t, f: f64::INFINITY, slope: f64::NAN, g: None }),
            Err(e) => Err(e),
        }
    };
    let finish = |tr: Trial| Point { x: &cur.x + dir * tr.t, f: tr.f, g: tr.g.unwrap() };
    let keep = |best: &mut Option<Trial>, tr: &Trial| {
        if tr.g.is_some() && armijo(tr.t, tr.f) && best.as_ref().is_none_or(|b| tr.f < b.f) {
            *best = Some(Trial { t: tr.t, f: tr.f, slope: tr.slope, g: tr.g.clone() });
        }
    };

    let mut prev = Trial { t: 0.0, f: cur.f, slope: slope0, g: Some(cur.g.clone()) };
    let mut t = step0;
    let (mut lo, mut hi);
    loop {
        if evals >= cfg.max_line_evals {
            return Ok((best.map(|b| finish(b)), evals, false));
        }
        let tr = eval(t, &mut evals)?;
        keep(&mut best, &tr);
        if !armijo(tr.t, tr.f) || (prev.t > 0.0 && tr.f >= prev.f) {
            lo = prev;
            hi = tr;
            break;
        }
        if curvature(tr.slope) {
            return Ok((Some(finish(tr)), evals, true));
        }
        if tr.slope >= 0.0 {
            lo = tr;
            hi = prev;
            break;
        }
        prev = tr;
        t *= 2.0;
    }

    // zoom: `lo` satisfies sufficient decrease with the lowest value seen in the bracket.
    loop {
        if evals >= cfg.max_line_evals {
            return Ok((best.map(|b| finish(b)), evals, false));
        }
        let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
        let width = b - a;
        if width <= 1e-16 * lo.t.abs().max(1.0) {
            return Ok((best.map(|b| finish(b)), evals, false));
        }
        let mut t = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        let margin = 0.1 * width;
        if !(t > a + margin && t < b - margin) {
            t = 0.5 * (a + b);
        }
        let tr = eval(t, &mut evals)?;
        keep(&mut best, &tr);
        if !armijo(tr.t, tr.f) || tr.f >= lo.f {
            hi = tr;
        } else {
            if curvature(tr.slope) {
                return Ok((Some(finish(tr)), evals, true));
            }
            if tr.slope * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = tr;
        }
    }
}

/// Minimizer of the cubic interpolating values and slopes at two trial steps.
fn cubic_min(p: &Trial, q: &Trial) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.slope.is_finite() && q.slope.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.f - q.f) / (p.t - q.t);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.t - p.t).signum() * disc.sqrt();
    let t = q.t - (q.t - p.t) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}
