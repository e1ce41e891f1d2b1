//! Projected limited-memory BFGS for box-constrained minimization.

use crate::error::Result;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop once the relative change in `f` and the projected gradient
    /// (relative to `1 + |f|`) both fall below this.
    pub tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Relative change of the step that produced `x0`, if known.
    pub prior_rel_change: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 15,
            memory: 10,
            tol: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 20,
            prior_rel_change: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    pub iters: usize,
    /// Objective after every accepted iteration.
    pub trace: Vec<f64>,
    /// ∞-norm of `x − P(x − g)` over the free coordinates.
    pub projected_gradient: f64,
    pub last_rel_change: f64,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

fn projected_gradient(x: &[f64], g: &DVector<f64>, bounds: &[(f64, f64)], free: &[bool]) -> f64 {
    (0..x.len())
        .filter(|&i| free[i])
        .map(|i| (x[i] - (x[i] - g[i]).clamp(bounds[i].0, bounds[i].1)).abs())
        .fold(0.0, f64::max)
}

fn diag(h: &DMatrix<f64>, i: usize) -> f64 {
    let v = h[(i, i)];
    if v > 1e-12 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Initial inverse Hessian restricted to the moving coordinates.
struct Seed {
    idx: Vec<usize>,
    chol: Option<Cholesky<f64, Dyn>>,
    diag: Vec<f64>,
}

impl Seed {
    fn new(h: &DMatrix<f64>, active: &[bool]) -> Self {
        let idx: Vec<usize> = (0..active.len()).filter(|&i| !active[i]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
        let ok = sub.iter().all(|v| v.is_finite());
        Seed {
            diag: idx.iter().map(|&i| diag(h, i)).collect(),
            chol: if ok { sub.cholesky() } else { None },
            idx,
        }
    }

    fn apply(&self, q: &DVector<f64>) -> DVector<f64> {
        let v = DVector::from_fn(self.idx.len(), |a, _| q[self.idx[a]]);
        let w = match &self.chol {
            Some(c) => c.solve(&v),
            None => v.component_div(&DVector::from_column_slice(&self.diag)),
        };
        let mut out = DVector::zeros(q.len());
        for (a, &i) in self.idx.iter().enumerate() {
            out[i] = w[a];
        }
        out
    }
}

/// Minimize `f` over the box `bounds`, moving only coordinates with
/// `free[i]`. `curvature` approximates the Hessian of `f`; its inverse on
/// the moving coordinates seeds the two-loop recursion, falling back to
/// the diagonal when it is not positive definite there.
pub fn minimize_box<F>(
    f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    free: &[bool],
    curvature: &DMatrix<f64>,
    opts: &LbfgsOptions,
) -> Result<BoxResult>
where
    F: Fn(&[f64]) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut g) = f(&x)?;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut trace = Vec::new();
    let mut iters = 0;
    let mut last_rel = opts.prior_rel_change;
    let mut pg = projected_gradient(&x, &g, bounds, free);
    let mut prev_active: Option<Vec<bool>> = None;
    let mut seed: Option<Seed> = None;

    while iters < opts.max_iters {
        if pg < opts.tol * (1.0 + fx.abs()) && last_rel < opts.tol {
            break;
        }
        let active: Vec<bool> = (0..n)
            .map(|i| {
                !free[i]
                    || (x[i] <= bounds[i].0 && g[i] > 0.0)
                    || (x[i] >= bounds[i].1 && g[i] < 0.0)
            })
            .collect();
        // Curvature pairs mix in directions that are now pinned.
        if prev_active.as_ref().is_some_and(|p| *p != active) {
            history.clear();
        }
        let mask = |v: &mut DVector<f64>| {
            for i in 0..n {
                if active[i] {
                    v[i] = 0.0;
                }
            }
        };
        let mut q = g.clone();
        mask(&mut q);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if prev_active.as_ref() != Some(&active) || seed.is_none() {
            seed = Some(Seed::new(curvature, &active));
        }
        q = seed.as_ref().map_or(q.clone(), |sd| sd.apply(&q));
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        prev_active = Some(active.clone());
        let mut dir = -q;
        mask(&mut dir);
        if !(g.dot(&dir) < 0.0) {
            history.clear();
            dir = DVector::from_fn(n, |i, _| if active[i] { 0.0 } else { -g[i] / diag(curvature, i) });
        }
        if dir.amax() == 0.0 {
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xt: Vec<f64> = (0..n).map(|i| x[i] + step * dir[i]).collect();
            project(&mut xt, bounds);
            let moved = DVector::from_fn(n, |i, _| xt[i] - x[i]);
            if moved.amax() == 0.0 {
                break;
            }
            if let Ok((ft, gt)) = f(&xt) {
                if ft.is_finite() && ft <= fx + opts.armijo * g.dot(&moved) {
                    accepted = Some((xt, ft, gt, moved));
                    break;
                }
            }
            step *= opts.shrink;
        }
        let Some((xt, ft, gt, s)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let y = &gt - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        iters += 1;
        last_rel = (ft - fx).abs() / fx.abs().max(1.0);
        x = xt;
        fx = ft;
        g = gt;
        pg = projected_gradient(&x, &g, bounds, free);
        trace.push(fx);
    }
    Ok(BoxResult {
        x,
        f: fx,
        g,
        iters,
        trace,
        projected_gradient: pg,
        last_rel_change: last_rel,
    })
}
