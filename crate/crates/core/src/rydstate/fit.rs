//! Weighted Rydberg–Ritz fits of measured series.

use super::{ritz_energy, RydError};
use crate::numerics::fit::{levenberg_marquardt, FitError, LmOptions};
use nalgebra::DMatrix;

/// One measured line: level energy above the ionic ground state (J) with 1σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesLine {
    pub n: u32,
    pub l: u32,
    pub twice_j: u32,
    pub energy: f64,
    pub sigma: f64,
}

/// Whether μ¹ is fitted independently or tied to μ⁰.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesParameterization {
    Free,
    Tied,
}

/// Starting point and fixed constants for a series fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesGuess {
    pub ionization_limit: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub dmu_de: f64,
    pub reduced_rydberg: f64,
    pub core_charge: f64,
}

#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub ionization_limit: f64,
    pub mu0: f64,
    pub mu1: f64,
    /// ∂μ/∂E (J⁻¹).
    pub dmu_de: f64,
    /// Covariance over (I⁺⁺ [J], μ⁰, μ¹, ∂μ/∂E [J⁻¹]); tied fits repeat the μ⁰ row for μ¹.
    pub covariance: DMatrix<f64>,
    /// Model minus measured energy per line (J).
    pub residuals: Vec<f64>,
    pub chi2: f64,
    pub condition: f64,
}

impl SeriesFit {
    pub fn sigma_ionization_limit(&self) -> f64 {
        self.covariance[(0, 0)].sqrt()
    }
}

/// Fits I⁺⁺, μ⁰, μ¹ and ∂μ/∂E of a single (L, J) series.
pub fn fit_rydberg_series(lines: &[SeriesLine], guess: &SeriesGuess, param: SeriesParameterization) -> Result<SeriesFit, RydError> {
    let first = lines.first().ok_or_else(|| RydError::IllConditioned("no lines".into()))?;
    if lines.iter().any(|l| l.l != first.l || l.twice_j != first.twice_j) {
        return Err(RydError::IllConditioned("lines from more than one series".into()));
    }
    let nmin = lines.iter().map(|l| l.n).min().unwrap();
    let nmax = lines.iter().map(|l| l.n).max().unwrap();
    if lines.len() < 4 || nmax - nmin < 10 {
        return Err(RydError::IllConditioned(format!("{} lines spanning Δn={} (need ≥4 over ≥10)", lines.len(), nmax - nmin)));
    }
    let r = guess.reduced_rydberg;
    let z = guess.core_charge;
    let j = first.twice_j as f64 / 2.0;
    let e_ref = lines.iter().map(|l| l.energy).sum::<f64>() / lines.len() as f64;
    let offsets: Vec<f64> = lines.iter().map(|l| (l.energy - e_ref) / r).collect();
    let weights: Vec<f64> = lines.iter().map(|l| r / l.sigma).collect();
    // p = [(I − E_ref)/R*, μ⁰, a = R*·∂μ/∂E, μ¹]
    let unpack = |p: &[f64]| -> (f64, f64, f64, f64) {
        match param {
            SeriesParameterization::Free => (p[0], p[1], p[2], p[3]),
            SeriesParameterization::Tied => (p[0], p[1], p[2], p[1]),
        }
    };
    let model = |p: &[f64]| -> Vec<f64> {
        let (di, mu0, a, mu1) = unpack(p);
        lines
            .iter()
            .zip(&offsets)
            .zip(&weights)
            .map(|((l, off), w)| {
                let n = l.n as f64;
                let mu = mu0 - a / (n - mu1).powi(2);
                let ns = n - mu;
                let e = ritz_energy(di, 1.0, z, ns, j);
                (e - off) * w
            })
            .collect()
    };
    let mut p0 = vec![(guess.ionization_limit - e_ref) / r, guess.mu0, guess.dmu_de * r];
    let mut scale = vec![1e-4, 1.0, 1.0];
    if param == SeriesParameterization::Free {
        p0.push(guess.mu1);
        scale.push(1.0);
    }
    let opts = LmOptions { diff_step: 1e-7, ..LmOptions::default() };
    let out = levenberg_marquardt(model, &p0, &scale, &opts).map_err(|e| match e {
        FitError::IllConditioned { condition } => RydError::IllConditioned(format!("condition number {condition:.3e}")),
        FitError::Underdetermined { .. } => RydError::IllConditioned("underdetermined".into()),
        FitError::NoConvergence { iterations } => RydError::NoConvergence(format!("series fit after {iterations} iterations")),
        other => RydError::Fit(other),
    })?;
    let (di, mu0, a, mu1) = unpack(&out.params);
    // map covariance to (I, μ⁰, μ¹, ∂μ/∂E)
    let np = out.params.len();
    let mut jac = DMatrix::zeros(4, np);
    jac[(0, 0)] = r;
    jac[(1, 1)] = 1.0;
    jac[(3, 2)] = 1.0 / r;
    match param {
        SeriesParameterization::Free => jac[(2, 3)] = 1.0,
        SeriesParameterization::Tied => jac[(2, 1)] = 1.0,
    }
    let covariance = &jac * &out.covariance * jac.transpose();
    let residuals = out.residuals.iter().zip(&weights).map(|(res, w)| res / w * r).collect();
    Ok(SeriesFit {
        ionization_limit: e_ref + di * r,
        mu0,
        mu1,
        dmu_de: a / r,
        covariance,
        residuals,
        chi2: out.chi2,
        condition: out.condition,
    })
}
