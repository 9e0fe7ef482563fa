//! Levenberg–Marquardt least squares on weighted residuals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("normal equations ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("fewer residuals ({residuals}) than parameters ({params})")]
    Underdetermined { residuals: usize, params: usize },
    #[error("model evaluation produced non-finite residuals")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub lambda0: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub max_condition: f64,
    /// Relative finite-difference step per parameter.
    pub diff_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, lambda0: 1e-3, ftol: 1e-15, xtol: 1e-13, max_condition: 1e12, diff_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Covariance (JᵀJ)⁻¹ of the weighted problem.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Condition number of the column-scaled normal matrix at the solution.
    pub condition: f64,
}

impl LmOutcome {
    pub fn sigma(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn jacobian<F>(f: &mut F, p: &[f64], r0: &[f64], scale: &[f64], step: f64) -> Result<DMatrix<f64>, FitError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut q = p.to_vec();
    for j in 0..n {
        let h = step * p[j].abs().max(scale[j]);
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        q[j] = p[j];
        for i in 0..m {
            let d = (rp[i] - rm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(FitError::NonFinite);
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

fn scaled_condition(jtj: &DMatrix<f64>) -> f64 {
    let n = jtj.nrows();
    let d: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-300).sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let ev = s.symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(f64::MIN, f64::max);
    let min = ev.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Minimizes Σ rᵢ(p)² where `residuals` already includes the 1/σ weights.
///
/// `scale` gives a typical magnitude per parameter for finite differences near zero.
pub fn levenberg_marquardt<F>(mut residuals: F, p0: &[f64], scale: &[f64], opts: &LmOptions) -> Result<LmOutcome, FitError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    if r.len() < n {
        return Err(FitError::Underdetermined { residuals: r.len(), params: n });
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut chi2: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&mut residuals, &p, &r, scale, opts.diff_step)?;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.clone().cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let dp = chol.solve(&(-&g));
            let trial: Vec<f64> = p.iter().zip(dp.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial);
            let chi2t: f64 = rt.iter().map(|v| v * v).sum();
            if chi2t.is_finite() && chi2t <= chi2 {
                let small_step = dp.iter().zip(&p).all(|(d, x)| d.abs() <= opts.xtol * (x.abs() + opts.xtol));
                let small_gain = chi2 - chi2t <= opts.ftol * chi2.max(1e-300);
                p = trial;
                r = rt;
                chi2 = chi2t;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
        jac = jacobian(&mut residuals, &p, &r, scale, opts.diff_step)?;
    }
    if !converged {
        return Err(FitError::NoConvergence { iterations });
    }
    let jac = jacobian(&mut residuals, &p, &r, scale, opts.diff_step)?;
    let jtj = jac.transpose() * &jac;
    let condition = scaled_condition(&jtj);
    if !(condition <= opts.max_condition) {
        return Err(FitError::IllConditioned { condition });
    }
    let d: Vec<f64> = (0..n).map(|i| jtj[(i, i)].sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let sinv = s.try_inverse().ok_or(FitError::IllConditioned { condition })?;
    let covariance = DMatrix::from_fn(n, n, |i, j| sinv[(i, j)] / (d[i] * d[j]));
    Ok(LmOutcome { params: p, covariance, chi2, residuals: r, iterations, condition })
}
