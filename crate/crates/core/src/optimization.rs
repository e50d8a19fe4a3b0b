//! Numeric kernels behind the calibrator fits: L-BFGS with a strong-Wolfe
//! line search, golden-section search, and isotonic regression via pool
//! adjacent violators.

use std::collections::VecDeque;

use thiserror::Error;

pub const LBFGS_MEMORY: usize = 10;
pub const WOLFE_C1: f64 = 1e-4;
pub const WOLFE_C2: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Gradient infinity norm for L-BFGS; final interval width for
    /// golden-section.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective or gradient became non-finite; keeping the best finite iterate")]
    NonFinite { last: Box<OptimizeResult> },
    #[error("{0}")]
    InvalidInput(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn all_finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Minimizes `f` (value and gradient) from `x0`. Stops when the gradient
/// infinity norm drops below `grad_tol` or after `max_iter` iterations,
/// whichever comes first; the flag on the result says which.
pub fn lbfgs<F>(
    mut f: F,
    x0: &[f64],
    grad_tol: f64,
    max_iter: usize,
) -> Result<OptimizeResult, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !all_finite(fx, &g) {
        return Err(OptimError::NonFinite {
            last: Box::new(OptimizeResult {
                x,
                value: fx,
                grad_norm: f64::INFINITY,
                iterations: 0,
                converged: false,
            }),
        });
    }

    // (s, y, 1 / s.y) pairs, oldest first.
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for iteration in 0..max_iter {
        let gnorm = inf_norm(&g);
        if gnorm < grad_tol {
            return Ok(OptimizeResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iteration,
                converged: true,
            });
        }

        let mut d = two_loop(&history, &g);
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // Stale curvature produced a non-descent direction; restart.
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }

        match line_search(&mut f, &x, fx, &d, dg) {
            Ok(step) => {
                let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step.alpha * di).collect();
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    history.push_back((s, y, 1.0 / sy));
                    if history.len() > LBFGS_MEMORY {
                        history.pop_front();
                    }
                }
                x = x_new;
                fx = step.value;
                g = step.grad;
            }
            Err(LineSearchError::NonFinite) => {
                return Err(OptimError::NonFinite {
                    last: Box::new(OptimizeResult {
                        x,
                        value: fx,
                        grad_norm: inf_norm(&g),
                        iterations: iteration,
                        converged: false,
                    }),
                });
            }
            Err(LineSearchError::NoStep) => {
                // No acceptable step along d; report where we stand.
                return Ok(OptimizeResult {
                    x,
                    value: fx,
                    grad_norm: inf_norm(&g),
                    iterations: iteration,
                    converged: false,
                });
            }
        }
        let _ = n;
    }

    let gnorm = inf_norm(&g);
    Ok(OptimizeResult { x, value: fx, grad_norm: gnorm, iterations: max_iter, converged: gnorm < grad_tol })
}

fn two_loop(history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = history
        .back()
        .map(|(s, y, _)| dot(s, y) / dot(y, y))
        .unwrap_or(1.0);
    let mut r: Vec<f64> = q.iter().map(|v| v * gamma).collect();
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    for v in &mut r {
        *v = -*v;
    }
    r
}

struct Step {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
}

enum LineSearchError {
    NonFinite,
    NoStep,
}

/// Strong-Wolfe line search (bracket then zoom by bisection).
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    d: &[f64],
    dg0: f64,
) -> Result<Step, LineSearchError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const ALPHA_MAX: f64 = 1e6;
    const MAX_BRACKET: usize = 30;

    let probe = |alpha: f64, f: &mut F| -> Result<(f64, Vec<f64>, f64), LineSearchError> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (v, g) = f(&xt);
        if !all_finite(v, &g) {
            return Err(LineSearchError::NonFinite);
        }
        let slope = dot(&g, d);
        Ok((v, g, slope))
    };

    let armijo = |alpha: f64, value: f64| value <= f0 + WOLFE_C1 * alpha * dg0;
    let curvature = |slope: f64| slope.abs() <= -WOLFE_C2 * dg0;

    let mut alpha_lo = 0.0;
    let mut f_lo = f0;
    let mut alpha = 1.0;
    let mut bracket: Option<(f64, f64, f64, f64)> = None; // lo, f_lo, hi, f_hi

    for i in 0..MAX_BRACKET {
        let (v, g, slope) = probe(alpha, f)?;
        if !armijo(alpha, v) || (i > 0 && v >= f_lo) {
            bracket = Some((alpha_lo, f_lo, alpha, v));
            break;
        }
        if curvature(slope) {
            return Ok(Step { alpha, value: v, grad: g });
        }
        if slope >= 0.0 {
            bracket = Some((alpha, v, alpha_lo, f_lo));
            break;
        }
        alpha_lo = alpha;
        f_lo = v;
        if alpha >= ALPHA_MAX {
            // Decreasing all the way out; accept the cap.
            return Ok(Step { alpha, value: v, grad: g });
        }
        alpha = (alpha * 2.0).min(ALPHA_MAX);
    }

    let (mut lo, mut f_lo, mut hi, mut f_hi) = bracket.ok_or(LineSearchError::NoStep)?;

    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() < 1e-16 * (1.0 + lo.abs()) || mid == lo || mid == hi {
            break;
        }
        let (v, g, slope) = probe(mid, f)?;
        if !armijo(mid, v) || v >= f_lo {
            hi = mid;
            f_hi = v;
        } else {
            if curvature(slope) {
                return Ok(Step { alpha: mid, value: v, grad: g });
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = mid;
            f_lo = v;
        }
        let _ = f_hi;
    }

    // The interval collapsed before strong Wolfe held; settle for the best
    // sufficient-decrease point if there is one.
    if lo > 0.0 && armijo(lo, f_lo) {
        let (v, g, _) = probe(lo, f)?;
        return Ok(Step { alpha: lo, value: v, grad: g });
    }
    Err(LineSearchError::NoStep)
}

/// Minimizes a unimodal function on [lo, hi]. Stops once the interval is
/// narrower than `tol` or after `max_iter` shrink steps.
pub fn golden_section<F>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<OptimizeResult, OptimError>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) {
        return Err(OptimError::InvalidInput(format!("empty interval [{lo}, {hi}]")));
    }
    const INVPHI: f64 = 0.618_033_988_749_894_9;

    let check = |x: f64, v: f64| -> Result<f64, OptimError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptimError::NonFinite {
                last: Box::new(OptimizeResult {
                    x: vec![x],
                    value: v,
                    grad_norm: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                }),
            })
        }
    };

    let mut c = hi - INVPHI * (hi - lo);
    let mut d = lo + INVPHI * (hi - lo);
    let mut fc = check(c, f(c))?;
    let mut fd = check(d, f(d))?;
    let mut iterations = 0;

    while hi - lo > tol && iterations < max_iter {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INVPHI * (hi - lo);
            fc = check(c, f(c))?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INVPHI * (hi - lo);
            fd = check(d, f(d))?;
        }
        iterations += 1;
    }

    let x = 0.5 * (lo + hi);
    let value = check(x, f(x))?;
    Ok(OptimizeResult { x: vec![x], value, grad_norm: hi - lo, iterations, converged: hi - lo <= tol })
}

/// Weighted isotonic regression: the nondecreasing sequence closest to
/// `values` in weighted least squares.
///
/// Block means are always recomputed left-to-right over the block's index
/// range, so the output is bit-for-bit independent of the order in which
/// violating blocks were pooled.
pub fn pava(values: &[f64], weights: &[f64]) -> Result<Vec<f64>, OptimError> {
    if values.len() != weights.len() {
        return Err(OptimError::InvalidInput(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        if !v.is_finite() {
            return Err(OptimError::InvalidInput(format!("value {i} is not finite")));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(OptimError::InvalidInput(format!("weight {i} must be positive, got {w}")));
        }
    }

    let block_mean = |lo: usize, hi: usize| -> f64 {
        // A one-element block keeps its value bit-for-bit; (w*y)/w rounds.
        if hi - lo == 1 {
            return values[lo];
        }
        let mut sw = 0.0;
        let mut swy = 0.0;
        for i in lo..hi {
            sw += weights[i];
            swy += weights[i] * values[i];
        }
        swy / sw
    };

    // Stack of maximal nondecreasing blocks as index ranges with their means.
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        blocks.push((i, i + 1, values[i]));
        while blocks.len() >= 2 {
            let (_, _, top_mean) = blocks[blocks.len() - 1];
            let (prev_lo, _, prev_mean) = blocks[blocks.len() - 2];
            if prev_mean > top_mean {
                let (_, top_hi, _) = blocks.pop().unwrap();
                blocks.pop();
                blocks.push((prev_lo, top_hi, block_mean(prev_lo, top_hi)));
            } else {
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(values.len());
    for &(lo, hi, mean) in &blocks {
        for _ in lo..hi {
            out.push(mean);
        }
    }
    Ok(out)
}
