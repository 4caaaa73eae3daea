//! Deterministic full-batch maximizer (limited-memory BFGS with Armijo
//! backtracking), used wherever an estimator is defined as an exact argmax.

use std::collections::VecDeque;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct MaximizeOptions {
    pub max_iters: usize,
    /// Stop once `|Δf| / max(|f|, 1)` stays below this for two iterations.
    pub rel_tol: f64,
    /// Stop once the gradient's largest entry falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            rel_tol: 1e-7,
            grad_tol: 1e-9,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaximizeResult<F> {
    pub x: Vec<F>,
    pub value: F,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Maximizes `f`, which returns the objective and its gradient.
pub fn maximize<F: Real>(
    mut f: impl FnMut(&[F]) -> (F, Vec<F>),
    x0: Vec<F>,
    opts: MaximizeOptions,
) -> MaximizeResult<F> {
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut pairs: VecDeque<(Vec<F>, Vec<F>, F)> = VecDeque::new();
    let mut quiet = 0;
    let rel_tol = F::lit(opts.rel_tol);
    let grad_tol = F::lit(opts.grad_tol);
    let c1 = F::lit(1e-4);

    for it in 0..opts.max_iters {
        if !fx.is_finite() {
            return MaximizeResult {
                x,
                value: fx,
                iterations: it,
                converged: false,
            };
        }
        let gmax = g.iter().fold(F::zero(), |a, &v| a.max(v.abs()));
        if gmax < grad_tol {
            return MaximizeResult {
                x,
                value: fx,
                iterations: it,
                converged: true,
            };
        }

        // Two-loop recursion on the ascent problem: direction ≈ H⁻¹ g with H
        // the negated Hessian.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => F::one() / gmax.max(F::lit(1e-12)),
        };
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += (*a - b) * si;
            }
        }
        let mut dir = q;
        let mut slope = dot(&g, &dir);
        if !(slope > F::zero()) {
            pairs.clear();
            dir = g.iter().map(|&v| v / gmax).collect();
            slope = dot(&g, &dir);
        }

        let mut step = F::one();
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<F> = x
                .iter()
                .zip(&dir)
                .map(|(&xi, &di)| xi + step * di)
                .collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ >= fx + c1 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= F::lit(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else {
            return MaximizeResult {
                x,
                value: fx,
                iterations: it,
                converged: false,
            };
        };

        // Curvature pair for the minimisation of −f.
        let s: Vec<F> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<F> = g.iter().zip(&gn).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > F::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, F::one() / sy));
        }

        let change = (fn_ - fx).abs() / fx.abs().max(F::one());
        x = xn;
        fx = fn_;
        g = gn;
        if change < rel_tol {
            quiet += 1;
            if quiet >= 2 {
                return MaximizeResult {
                    x,
                    value: fx,
                    iterations: it + 1,
                    converged: true,
                };
            }
        } else {
            quiet = 0;
        }
        debug_assert_eq!(x.len(), n);
    }
    MaximizeResult {
        x,
        value: fx,
        iterations: opts.max_iters,
        converged: false,
    }
}
