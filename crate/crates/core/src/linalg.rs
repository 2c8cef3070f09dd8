//! Least-squares helpers shared by the fitting code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition bound above which a linear fit is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `min |A x - b|` by Householder QR on column-scaled `A`.
///
/// Columns are scaled to unit norm before factorization and the solution is
/// unscaled afterwards, so coefficients come back in the caller's basis.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Insufficient(format!("{m} equations for {n} unknowns")));
    }
    let mut scaled = a.clone();
    let mut scale = vec![1.0; n];
    for j in 0..n {
        let norm = scaled.column(j).norm();
        if norm == 0.0 {
            return Err(Error::IllConditioned(format!("column {j} is identically zero")));
        }
        scale[j] = norm;
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }
    let qr = scaled.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(dmin > 0.0) || dmax / dmin > MAX_CONDITION {
        return Err(Error::IllConditioned(format!(
            "condition estimate {:.3e} exceeds {MAX_CONDITION:.0e}",
            dmax / dmin
        )));
    }
    let qtb = qr.q().transpose() * b;
    let y = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::IllConditioned("singular triangular factor".into()))?;
    Ok(DVector::from_iterator(n, (0..n).map(|j| y[j] / scale[j])))
}

/// Weighted variant: rows scaled by `sqrt(w)`.
pub fn weighted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let mut aw = a.clone();
    let mut bw = b.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.max(0.0).sqrt();
        aw.row_mut(i).scale_mut(s);
        bw[i] *= s;
    }
    lstsq(&aw, &bw)
}

#[derive(Debug, Clone)]
pub struct GaussNewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct GaussNewtonFit {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    m: usize,
    rel_step: f64,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = rel_step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `|f(x)|^2` by Gauss-Newton with numeric Jacobians and step halving.
///
/// Stops when the relative step falls below `tol`, or when no halved step
/// lowers the cost (the fit sits at the noise floor).
pub fn gauss_newton(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonFit> {
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let m = r.len();
    if m < x.len() {
        return Err(Error::Insufficient(format!("{m} residuals for {} parameters", x.len())));
    }
    let mut c = cost(&r);
    for it in 1..=opts.max_iter {
        let jac = numeric_jacobian(f, &x, m, opts.fd_step);
        let rv = DVector::from_column_slice(&r);
        let dx = lstsq(&jac, &(-rv)).map_err(|e| match e {
            Error::IllConditioned(msg) => Error::Degenerate(format!("rank-deficient Jacobian: {msg}")),
            other => other,
        })?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
            let rn = f(&xn);
            let cn = cost(&rn);
            if cn.is_finite() && cn <= c {
                let rel = dx.iter().zip(&x).map(|(d, a)| (step * d).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
                x = xn;
                r = rn;
                c = cn;
                accepted = true;
                if rel < opts.tol {
                    return Ok(GaussNewtonFit { params: x, cost: c, iterations: it });
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(GaussNewtonFit { params: x, cost: c, iterations: it });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, msg: "Gauss-Newton".into(), last: x })
}
