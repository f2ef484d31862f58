//! Non-negative minimization of a quadratic.
//!
//! Each iteration tries a projected Newton step: coordinates that sit at the
//! bound with a positive gradient move along the scaled negative gradient,
//! the rest take a conjugate-gradient Newton step, and the combined path is
//! projected and backtracked until Armijo holds. A projected gradient step
//! with step `1/L` is the fallback, so the objective never increases.

use super::{dot, kkt_residual, lipschitz_upper_bound, QpError, QuadraticObjective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Step bound; computed by power iteration when absent.
    pub lipschitz: Option<f64>,
    pub seed: u64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 5000,
            lipschitz: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub kkt_residual: f64,
    pub iters: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with `x0`.
    pub history: Vec<f64>,
}

pub fn solve_nnls(obj: &QuadraticObjective, x0: &[f64], opts: &NnlsOptions) -> Result<NnlsResult, QpError> {
    obj.check()?;
    let n = obj.dim;
    if x0.len() != n {
        return Err(QpError::InvalidInput(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if let Some(i) = x0.iter().position(|&v| !(v >= 0.0)) {
        return Err(QpError::InvalidInput(format!("x0[{i}] = {} is not non-negative", x0[i])));
    }
    if !(opts.tol > 0.0) {
        return Err(QpError::InvalidInput("tolerance must be positive".into()));
    }

    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_grad(&x, &mut g);
    if !f.is_finite() {
        return Err(QpError::NonFiniteValue { iters: 0 });
    }
    let mut lip = opts
        .lipschitz
        .unwrap_or_else(|| lipschitz_upper_bound(obj, opts.seed))
        .max(f64::MIN_POSITIVE);
    let mut history = vec![f];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut kkt = kkt_residual(&x, &g);
    let mut iters = 0;

    while kkt > opts.tol && iters < opts.max_iters {
        iters += 1;
        let accepted = newton_step(obj, &x, &g, f, lip, opts.tol, &mut xn, &mut gn);
        let fn_ = match accepted {
            Some(v) => v,
            None => {
                let mut accepted = None;
                for _ in 0..60 {
                    for i in 0..n {
                        xn[i] = (x[i] - g[i] / lip).max(0.0);
                    }
                    let v = obj.value_and_grad(&xn, &mut gn);
                    if !v.is_finite() {
                        return Err(QpError::NonFiniteValue { iters });
                    }
                    if v <= f {
                        accepted = Some(v);
                        break;
                    }
                    lip *= 2.0;
                }
                accepted.unwrap_or_else(|| {
                    xn.copy_from_slice(&x);
                    gn.copy_from_slice(&g);
                    f
                })
            }
        };
        if !fn_.is_finite() {
            return Err(QpError::NonFiniteValue { iters });
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        let stalled = fn_ == f && kkt_residual(&x, &g) >= kkt;
        f = fn_;
        history.push(f);
        kkt = kkt_residual(&x, &g);
        if stalled {
            // Rounding floor: no representable decrease remains.
            break;
        }
    }

    Ok(NnlsResult {
        converged: kkt <= opts.tol,
        x,
        value: f,
        gradient: g,
        kkt_residual: kkt,
        iters,
        history,
    })
}

/// Returns the new objective value when a projected Newton step is accepted,
/// with the iterate in `xn` and its gradient in `gn`.
#[allow(clippy::too_many_arguments)]
fn newton_step(
    obj: &QuadraticObjective,
    x: &[f64],
    g: &[f64],
    f: f64,
    lip: f64,
    tol: f64,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<f64> {
    let n = x.len();
    let width = x
        .iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            let d = xi - (xi - gi).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let eps = width.min(1e-3);
    let free: Vec<bool> = (0..n).map(|i| !(x[i] <= eps && g[i] > 0.0)).collect();

    let p = conjugate_gradient(obj, g, &free, tol);
    let mut beta = 1.0;
    for _ in 0..40 {
        for i in 0..n {
            let step = if free[i] { beta * p[i] } else { -beta * g[i] / lip };
            xn[i] = (x[i] + step).max(0.0);
        }
        let diff: Vec<f64> = xn.iter().zip(x).map(|(a, b)| a - b).collect();
        if diff.iter().all(|&d| d == 0.0) {
            return None;
        }
        let slope = dot(g, &diff);
        if slope >= 0.0 {
            beta *= 0.5;
            continue;
        }
        let v = obj.value_and_grad(xn, gn);
        if v <= f + 1e-4 * slope && v <= f {
            return Some(v);
        }
        beta *= 0.5;
    }
    None
}

/// Approximately solves `H_FF p_F = -g_F`, with `p` zero off the free set.
fn conjugate_gradient(obj: &QuadraticObjective, g: &[f64], free: &[bool], tol: f64) -> Vec<f64> {
    let n = g.len();
    let mask = |v: &mut [f64]| {
        for (vi, &f) in v.iter_mut().zip(free) {
            if !f {
                *vi = 0.0;
            }
        }
    };
    let mut p = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    mask(&mut r);
    let r0 = dot(&r, &r).sqrt();
    if r0 == 0.0 {
        return p;
    }
    let target = (1e-3 * r0).min(0.1 * tol).max(1e-14 * r0);
    let mut d = r.clone();
    let mut hd = vec![0.0; n];
    let mut rr = r0 * r0;
    let free_count = free.iter().filter(|&&f| f).count();
    for _ in 0..(2 * free_count + 10) {
        obj.hess_vec(&d, &mut hd);
        mask(&mut hd);
        let curv = dot(&d, &hd);
        if !(curv > 0.0) {
            break;
        }
        let a = rr / curv;
        for i in 0..n {
            p[i] += a * d[i];
            r[i] -= a * hd[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            break;
        }
        let b = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + b * d[i];
        }
        rr = rr_new;
    }
    p
}
