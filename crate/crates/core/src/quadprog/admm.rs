//! Linearly constrained least squares by operator splitting.
//!
//! Solves `min phi(x)` subject to `a_r x <= u_r` and `x >= 0` with the
//! splitting `z = C x`, `C = [A_cons; I]`, relaxed ADMM updates, residual
//! balancing of the penalty, and infeasibility detection from successive
//! dual differences. A converged run is refined by solving the equality
//! system of the detected active set.

use nalgebra::{DMatrix, DVector};

use super::{QpError, QuadraticObjective};

/// Rows `a_r x <= u_r`; non-negativity of `x` is implied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxLinearConstraints {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub upper: Vec<f64>,
}

impl BoxLinearConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: Vec<(usize, f64)>, upper: f64) {
        self.rows.push(row);
        self.upper.push(upper);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest violation `max(a_r x - u_r, 0)` over all rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.upper)
            .map(|(row, &u)| (row.iter().map(|&(j, v)| v * x[j]).sum::<f64>() - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub infeasibility_tol: f64,
    pub polish: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            infeasibility_tol: 1e-6,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedLsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iters: usize,
    pub polished: bool,
}

struct Problem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

impl Problem {
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
        let cx = &self.c * x;
        let px = &self.p * x;
        let cty = self.c.transpose() * y;
        let prim = (&cx - z).amax();
        let dual = (&px + &self.q + &cty).amax();
        let prim_scale = cx.amax().max(z.amax());
        let dual_scale = px.amax().max(cty.amax()).max(self.q.amax());
        (prim, dual, prim_scale, dual_scale)
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].max(self.l[i]).min(self.u[i]);
        }
    }

    fn certifies_infeasibility(&self, dy: &DVector<f64>, tol: f64) -> bool {
        let norm = dy.amax();
        if norm <= 1e-14 {
            return false;
        }
        if (self.c.transpose() * dy).amax() > tol * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let d = dy[i];
            if d > tol * norm {
                if !self.u[i].is_finite() {
                    return false;
                }
                support += self.u[i] * d;
            } else if d < -tol * norm {
                if !self.l[i].is_finite() {
                    return false;
                }
                support += self.l[i] * d;
            }
        }
        support < -tol * norm
    }
}

/// Minimizes `obj` over `{x >= 0, a_r x <= u_r}`, starting from `x0` when
/// given.
pub fn solve_constrained_ls(
    obj: &QuadraticObjective,
    cons: &BoxLinearConstraints,
    x0: Option<&[f64]>,
    opts: &AdmmOptions,
) -> Result<ConstrainedLsResult, QpError> {
    obj.check()?;
    let n = obj.dim;
    if !(opts.tol > 0.0) {
        return Err(QpError::InvalidInput("tolerance must be positive".into()));
    }
    if cons.rows.len() != cons.upper.len() {
        return Err(QpError::InvalidInput("row and bound counts differ".into()));
    }
    if cons.upper.iter().any(|u| !u.is_finite()) {
        return Err(QpError::InvalidInput("bounds must be finite".into()));
    }
    let (p, q, constant) = obj.dense_quadratic();
    let mc = cons.len() + n;
    let mut c = DMatrix::zeros(mc, n);
    for (r, row) in cons.rows.iter().enumerate() {
        for &(j, v) in row {
            if j >= n {
                return Err(QpError::InvalidInput(format!("constraint {r} references column {j}")));
            }
            c[(r, j)] += v;
        }
    }
    for j in 0..n {
        c[(cons.len() + j, j)] = 1.0;
    }
    let mut l = DVector::from_element(mc, f64::NEG_INFINITY);
    let mut u = DVector::from_element(mc, f64::INFINITY);
    for (r, &b) in cons.upper.iter().enumerate() {
        u[r] = b;
    }
    for j in 0..n {
        l[cons.len() + j] = 0.0;
    }
    let prob = Problem { p, q, c, l, u };

    let mut x = match x0 {
        Some(v) if v.len() == n => DVector::from_iterator(n, v.iter().map(|&t| t.max(0.0))),
        Some(v) => {
            return Err(QpError::InvalidInput(format!("x0 has length {}, expected {n}", v.len())));
        }
        None => DVector::zeros(n),
    };
    let mut z = &prob.c * &x;
    prob.project(&mut z);
    let mut y = DVector::zeros(mc);

    let mut rho = opts.rho;
    let ct = prob.c.transpose();
    let factor = |rho: f64| {
        let k = &prob.p + DMatrix::identity(n, n) * opts.sigma + (&ct * &prob.c) * rho;
        k.cholesky()
            .ok_or_else(|| QpError::InvalidInput("KKT matrix is not positive definite".into()))
    };
    let mut chol = factor(rho)?;
    let a = opts.relaxation;

    let mut iters = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);
    let mut y_prev = y.clone();
    while iters < opts.max_iters {
        iters += 1;
        let rhs = &x * opts.sigma - &prob.q + &ct * (&z * rho - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &prob.c * &x_tilde;
        x = &x_tilde * a + &x * (1.0 - a);
        let z_relaxed = &z_tilde * a + &z * (1.0 - a);
        let mut z_new = &z_relaxed + &y / rho;
        prob.project(&mut z_new);
        y += (&z_relaxed - &z_new) * rho;
        z = z_new;

        if iters % 10 == 0 || iters == opts.max_iters {
            let (prim, dual, ps, ds) = prob.residuals(&x, &z, &y);
            last = (prim, dual);
            if !(prim.is_finite() && dual.is_finite()) {
                return Err(QpError::NonFiniteValue { iters });
            }
            if prim <= opts.tol * (1.0 + ps) && dual <= opts.tol * (1.0 + ds) {
                return Ok(finish(obj, &prob, cons, x, z, y, constant, iters, opts));
            }
            if prob.certifies_infeasibility(&(&y - &y_prev), opts.infeasibility_tol) {
                return Err(QpError::Infeasible {
                    primal_residual: prim,
                    last_x: x.iter().map(|v| v.max(0.0)).collect(),
                });
            }
            y_prev = y.clone();
            if iters % 50 == 0 {
                let ratio = ((prim / ps.max(1e-12)) / (dual / ds.max(1e-12)).max(1e-300)).sqrt();
                let proposal = (rho * ratio).clamp(1e-6, 1e6);
                if !(0.2..=5.0).contains(&(proposal / rho)) {
                    rho = proposal;
                    chol = factor(rho)?;
                }
            }
        }
    }
    Err(QpError::MaxItersExceeded {
        max_iters: opts.max_iters,
        residual: last.0.max(last.1),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    obj: &QuadraticObjective,
    prob: &Problem,
    cons: &BoxLinearConstraints,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    constant: f64,
    iters: usize,
    opts: &AdmmOptions,
) -> ConstrainedLsResult {
    let (prim, dual, _, _) = prob.residuals(&x, &z, &y);
    let mut best: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let mut polished = false;
    let mut residuals = (prim, dual);
    if opts.polish {
        if let Some((xp, pp, dp)) = polish(prob, &z, &y) {
            let xp: Vec<f64> = xp.iter().map(|v| v.max(0.0)).collect();
            if cons.max_violation(&xp) <= cons.max_violation(&best).max(1e-12) && dp <= dual.max(opts.tol) {
                best = xp;
                polished = true;
                residuals = (pp, dp);
            }
        }
    }
    let value = obj.value(&best);
    debug_assert!((value - value_dense(prob, &best, constant)).abs() <= 1e-6 * (1.0 + value.abs()));
    ConstrainedLsResult {
        x: best,
        value,
        primal_residual: residuals.0,
        dual_residual: residuals.1,
        iters,
        polished,
    }
}

fn value_dense(prob: &Problem, x: &[f64], constant: f64) -> f64 {
    let xv = DVector::from_column_slice(x);
    0.5 * xv.dot(&(&prob.p * &xv)) + prob.q.dot(&xv) + constant
}

/// Solves the equality-constrained problem on the active set guessed from
/// `(z, y)`; returns the point and its residuals when the result is primal
/// and dual feasible.
fn polish(prob: &Problem, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64, f64)> {
    let n = prob.q.len();
    let mut active = Vec::new();
    for i in 0..z.len() {
        if prob.u[i].is_finite() && prob.u[i] - z[i] < y[i] {
            active.push((i, prob.u[i], true));
        } else if prob.l[i].is_finite() && z[i] - prob.l[i] < -y[i] {
            active.push((i, prob.l[i], false));
        }
    }
    let na = active.len();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    let mut rhs = DVector::zeros(n + na);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (k, &(i, b, _)) in active.iter().enumerate() {
        for j in 0..n {
            let v = prob.c[(i, j)];
            kkt[(n + k, j)] = v;
            kkt[(j, n + k)] = v;
        }
        rhs[n + k] = b;
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(z.len());
    for (k, &(i, _, upper)) in active.iter().enumerate() {
        let mult = sol[n + k];
        // Upper-active rows need non-negative multipliers, lower-active rows
        // non-positive ones.
        if (upper && mult < -1e-9) || (!upper && mult > 1e-9) {
            return None;
        }
        yp[i] = mult;
    }
    let mut zp = &prob.c * &x;
    prob.project(&mut zp);
    let (prim, dual, ps, _) = prob.residuals(&x, &zp, &yp);
    if prim > 1e-9 * (1.0 + ps) {
        return None;
    }
    Some((x, prim, dual))
}
