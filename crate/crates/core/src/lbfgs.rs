//! Limited-memory BFGS with a weak-Wolfe bracketing line search.
//!
//! The line search only asks for sufficient decrease and a weak curvature
//! condition, so it copes with objectives that are merely piecewise smooth.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsParams {
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Weak curvature constant.
    pub c2: f64,
    /// Stop when `|g| / max(1, |x|)` falls below this.
    pub g_tol: f64,
    /// Stop when the relative cost decrease falls below this.
    pub f_tol: f64,
    pub max_iterations: usize,
    pub max_linesearch: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self { memory: 8, c1: 1e-4, c2: 0.9, g_tol: 1e-5, f_tol: 1e-8, max_iterations: 300, max_linesearch: 60 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// No step satisfying both Wolfe conditions was found; the best point so far is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

enum Search {
    Accepted {
        alpha: f64,
        f: f64,
        g: DVector<f64>,
    },
    /// Best sufficient-decrease point seen, if any.
    Failed(Option<(f64, f64, DVector<f64>)>),
}

fn weak_wolfe<F>(
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
    p: &LbfgsParams,
    evals: &mut usize,
    fun: &mut F,
) -> Search
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let slope = g0.dot(d);
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut alpha = 1.0;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for _ in 0..p.max_linesearch {
        let trial = x + d * alpha;
        let (f, g) = fun(&trial);
        *evals += 1;
        if !f.is_finite() || f > f0 + p.c1 * alpha * slope {
            hi = alpha;
        } else {
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((alpha, f, g.clone()));
            }
            if g.dot(d) < p.c2 * slope {
                lo = alpha;
            } else {
                return Search::Accepted { alpha, f, g };
            }
        }
        alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
    }
    Search::Failed(best)
}

/// Minimizes `fun`, which returns the value and gradient at a point.
///
/// `on_accept(iteration, x, f)` is called for the initial point and after
/// every accepted step. Accepted values never increase.
pub fn minimize<F, C>(x0: DVector<f64>, params: &LbfgsParams, mut fun: F, mut on_accept: C) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    C: FnMut(usize, &DVector<f64>, f64),
{
    let mut x = x0;
    let (mut f, mut g) = fun(&x);
    let mut evals = 1;
    on_accept(0, &x, f);
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(params.memory);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        if g.norm() / x.norm().max(1.0) < params.g_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q /= g.norm().max(1.0);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut d = -q;
        if g.dot(&d) >= 0.0 {
            pairs.clear();
            d = -&g / g.norm().max(1.0);
        }
        match weak_wolfe(&x, f, &g, &d, params, &mut evals, &mut fun) {
            Search::Accepted { alpha, f: nf, g: ng } => {
                iterations += 1;
                let s = &d * alpha;
                let y = &ng - &g;
                let sy = s.dot(&y);
                let prev = f;
                x += &s;
                f = nf;
                g = ng;
                if sy > 1e-12 * y.norm() * s.norm() {
                    if pairs.len() == params.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, 1.0 / sy));
                }
                on_accept(iterations, &x, f);
                if (prev - f) / prev.abs().max(1.0) < params.f_tol {
                    termination = Termination::CostTolerance;
                    break;
                }
            }
            Search::Failed(best) => {
                if let Some((alpha, nf, ng)) = best {
                    iterations += 1;
                    x += &d * alpha;
                    f = nf;
                    g = ng;
                    on_accept(iterations, &x, f);
                }
                termination = Termination::LineSearchFailed;
                break;
            }
        }
    }
    LbfgsResult { x, f, gradient: g, iterations, evaluations: evals, termination }
}
