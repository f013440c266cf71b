//! Bound-constrained smooth minimization: projected L-BFGS with an optional
//! projected Newton polish on the free variables.

use nalgebra::{DMatrix, DVector};

use crate::error::{IamError, Result};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pg_tol: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Newton iterations run after L-BFGS (0 disables the polish).
    pub newton_iters: usize,
    /// Relative finite-difference step for the polish Hessian.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 2000,
            pg_tol: 1e-9,
            memory: 12,
            newton_iters: 0,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub pg_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl OptimResult {
    /// Converts a non-converged result into an error carrying the best point.
    pub fn require_converged(self) -> Result<OptimResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(IamError::NotConverged {
                iterations: self.iterations,
                pg_norm: self.pg_norm,
                objective: self.f,
                best: self.x,
            })
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Whether coordinate `i` is held at a bound by the gradient.
fn is_active(x: f64, g: f64, lo: f64, hi: f64) -> bool {
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    (x <= lo + tol && g > 0.0) || (x >= hi - tol && g < 0.0)
}

pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut n = 0.0f64;
    for i in 0..x.len() {
        // distance moved by a unit projected steepest-descent step, capped by g
        let step = (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i];
        n = n.max(step.abs());
    }
    n
}

struct Counter<'a, F> {
    f: &'a mut F,
    n: usize,
}

impl<F> Counter<'_, F>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
        self.n += 1;
        match (self.f)(x, g) {
            Ok(v) if v.is_finite() && g.iter().all(|v| v.is_finite()) => Some(v),
            _ => None,
        }
    }
}

/// Minimizes `f` over the box `[lo, hi]`.
///
/// `f` writes the gradient into its second argument and returns the
/// objective. Points where `f` fails are treated as infeasible and the line
/// search backs away from them; only a failure at the starting point is an
/// error.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(IamError::config("bound vectors must match the decision length"));
    }
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(IamError::config("lower bound above upper bound"));
    }
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let first = f(&x, &mut g)?;
    if !first.is_finite() {
        return Err(IamError::numerical("objective is not finite at the starting point"));
    }
    let mut ctr = Counter { f: &mut f, n: 1 };
    let mut fx = first;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iter = 0;
    let mut stalled = 0;
    let mut pg = projected_gradient_norm(&x, &g, lo, hi);

    while iter < opts.max_iter && pg > opts.pg_tol {
        iter += 1;
        let free: Vec<bool> = (0..n).map(|i| !is_active(x[i], g[i], lo[i], hi[i])).collect();
        let mut d = lbfgs_direction(&g, &free, &s_hist, &y_hist);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut alpha = if s_hist.is_empty() {
            let dn = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (0.1 / dn).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        let mut g_new = vec![0.0; n];
        for _ in 0..60 {
            let mut x_new: Vec<f64> = (0..n).map(|i| x[i] + alpha * d[i]).collect();
            project(&mut x_new, lo, hi);
            let dec: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if dec >= 0.0 && alpha < 1e-30 {
                break;
            }
            if let Some(f_new) = ctr.eval(&x_new, &mut g_new) {
                if f_new <= fx + 1e-4 * dec.min(0.0) && f_new <= fx {
                    accepted = Some((x_new, f_new));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((x_new, f_new)) => {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|v| v * v).sum();
                let yy: f64 = y.iter().map(|v| v * v).sum();
                if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                if (fx - f_new).abs() <= 1e-16 * fx.abs().max(1.0) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                x = x_new;
                fx = f_new;
                g.copy_from_slice(&g_new);
                pg = projected_gradient_norm(&x, &g, lo, hi);
                if stalled >= 8 {
                    break;
                }
            }
            None => {
                if s_hist.is_empty() {
                    break;
                }
                s_hist.clear();
                y_hist.clear();
            }
        }
    }

    for _ in 0..opts.newton_iters {
        if pg <= opts.pg_tol * 1e-3 {
            break;
        }
        match newton_step(&mut ctr, &x, fx, &g, lo, hi, opts.fd_step) {
            Some((x_new, f_new, g_new)) => {
                x = x_new;
                fx = f_new;
                g = g_new;
                pg = projected_gradient_norm(&x, &g, lo, hi);
            }
            None => break,
        }
        iter += 1;
    }

    Ok(OptimResult {
        converged: pg <= opts.pg_tol,
        x,
        f: fx,
        grad: g,
        pg_norm: pg,
        iterations: iter,
        evaluations: ctr.n,
    })
}

fn lbfgs_direction(g: &[f64], free: &[bool], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let n = g.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).filter(|i| free[*i]).map(|i| a[i] * b[i]).sum() };
    let mut q: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for k in (0..m).rev() {
        let sy = dot(&s_hist[k], &y_hist[k]);
        if sy <= 0.0 {
            continue;
        }
        rhos[k] = 1.0 / sy;
        alphas[k] = rhos[k] * dot(&s_hist[k], &q);
        for i in 0..n {
            if free[i] {
                q[i] -= alphas[k] * y_hist[k][i];
            }
        }
    }
    if m > 0 {
        let sy = dot(&s_hist[m - 1], &y_hist[m - 1]);
        let yy = dot(&y_hist[m - 1], &y_hist[m - 1]);
        if sy > 0.0 && yy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for k in 0..m {
        if rhos[k] == 0.0 {
            continue;
        }
        let beta = rhos[k] * dot(&y_hist[k], &q);
        for i in 0..n {
            if free[i] {
                q[i] += s_hist[k][i] * (alphas[k] - beta);
            }
        }
    }
    q.iter().map(|v| -v).collect()
}

fn newton_step<F>(
    ctr: &mut Counter<'_, F>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    lo: &[f64],
    hi: &[f64],
    fd_step: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|i| !is_active(x[*i], g[*i], lo[*i], hi[*i])).collect();
    let nf = free.len();
    if nf == 0 {
        return None;
    }
    let mut h = DMatrix::<f64>::zeros(nf, nf);
    let mut gp = vec![0.0; n];
    for (c, &i) in free.iter().enumerate() {
        let mut h_i = fd_step * (1.0 + x[i].abs());
        // step inward when close to the upper bound
        if x[i] + h_i > hi[i] {
            h_i = -h_i;
        }
        let mut xp = x.to_vec();
        xp[i] += h_i;
        ctr.eval(&xp, &mut gp)?;
        for (r, &k) in free.iter().enumerate() {
            h[(r, c)] = (gp[k] - g[k]) / h_i;
        }
    }
    let ht = h.transpose();
    h = (h + ht) * 0.5;
    let rhs = DVector::from_iterator(nf, free.iter().map(|&i| -g[i]));
    let diag_scale = (0..nf).map(|i| h[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut tau = 0.0;
    let step = loop {
        let mut m = h.clone();
        for i in 0..nf {
            m[(i, i)] += tau;
        }
        if let Some(ch) = m.cholesky() {
            break ch.solve(&rhs);
        }
        tau = if tau == 0.0 { 1e-10 * diag_scale } else { tau * 10.0 };
        if tau > 1e6 * diag_scale {
            return None;
        }
    };
    let mut alpha = 1.0;
    let mut g_new = vec![0.0; n];
    for _ in 0..30 {
        let mut x_new = x.to_vec();
        for (r, &i) in free.iter().enumerate() {
            x_new[i] += alpha * step[r];
        }
        project(&mut x_new, lo, hi);
        let dec: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
        if let Some(f_new) = ctr.eval(&x_new, &mut g_new) {
            let pg_old = projected_gradient_norm(x, g, lo, hi);
            let pg_new = projected_gradient_norm(&x_new, &g_new, lo, hi);
            // accept on sufficient decrease, or on a gradient reduction with a
            // change in f at rounding level
            let round = 1e-14 * fx.abs().max(1.0);
            if f_new <= fx + 1e-4 * dec.min(0.0) || (f_new <= fx + round && pg_new < pg_old) {
                return Some((x_new, f_new, g_new));
            }
        }
        alpha *= 0.5;
    }
    None
}
