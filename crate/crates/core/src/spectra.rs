//! Rydberg line shapes of a trapped ion: micromotion Doppler and Stark
//! sidebands, thermally averaged profiles, RF Floquet sidebands of a
//! quadrupole-coupled Zeeman manifold, and line fits.

use crate::constants::HBAR;
use crate::numerics::fit::{levenberg_marquardt, FitError, LmOptions};
use crate::numerics::special::bessel_j_all;
use crate::rydstate::{rf_coupling_rate, static_quadrupole_shift, RydbergLevel};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("sideband truncation too small (residual weight {residual:.3e})")]
    TruncationTooSmall { residual: f64 },
    #[error("invalid line model: {0}")]
    InvalidModel(&'static str),
    #[error("detuning grid must be strictly monotone")]
    NonMonotoneGrid,
    #[error("need at least {required} resolved features, found {found}")]
    TooFewFeatures { required: usize, found: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Line parameters in angular frequency units (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineModel {
    pub omega0: f64,
    /// Doppler modulation index k·R_mm.
    pub beta_mm: f64,
    /// Stark modulation index |α|E_res²/(8ħΩ_RF).
    pub beta_alpha: f64,
    pub omega_rf: f64,
    /// Lorentzian FWHM.
    pub natural_width: f64,
    /// Mean Stark shift −αE_res²/(4ħ).
    pub carrier_offset: f64,
}

impl LineModel {
    /// Builds a model from the polarizability α (C² m² J⁻¹) and residual RF field amplitude (V/m).
    pub fn from_physical(omega0: f64, beta_mm: f64, alpha: f64, e_res: f64, omega_rf: f64, natural_width: f64) -> Self {
        let stark = alpha * e_res * e_res / HBAR;
        Self {
            omega0,
            beta_mm,
            beta_alpha: (stark / (8.0 * omega_rf)).abs(),
            omega_rf,
            natural_width,
            carrier_offset: -stark / 4.0,
        }
    }

    /// Builds a model from a signed Stark index (positive for α > 0).
    pub fn from_indices(omega0: f64, beta_mm: f64, stark_index: f64, omega_rf: f64, natural_width: f64) -> Self {
        Self {
            omega0,
            beta_mm,
            beta_alpha: stark_index.abs(),
            omega_rf,
            natural_width,
            carrier_offset: -2.0 * stark_index * omega_rf,
        }
    }

    /// β_α carrying the sign of α.
    pub fn signed_stark_index(&self) -> f64 {
        if self.carrier_offset > 0.0 {
            -self.beta_alpha
        } else {
            self.beta_alpha
        }
    }

    pub fn validate(&self) -> Result<(), SpectraError> {
        if !(self.natural_width > 0.0) {
            return Err(SpectraError::InvalidModel("natural width must be positive"));
        }
        if !(self.beta_mm >= 0.0 && self.beta_alpha >= 0.0) {
            return Err(SpectraError::InvalidModel("modulation indices must be non-negative"));
        }
        if !(self.omega_rf > 0.0) {
            return Err(SpectraError::InvalidModel("RF frequency must be positive"));
        }
        if ![self.omega0, self.carrier_offset].iter().all(|v| v.is_finite()) {
            return Err(SpectraError::InvalidModel("non-finite frequency"));
        }
        Ok(())
    }

    /// Default per-index truncation ceil(β) + 8.
    pub fn default_order_cap(&self) -> usize {
        self.beta_mm.max(self.beta_alpha).ceil() as usize + 8
    }
}

/// One sideband: offset from ω₀ + carrier offset (rad/s), harmonic index and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sideband {
    pub order: i64,
    pub offset: f64,
    pub weight: f64,
}

/// Complex amplitude of each harmonic kΩ_RF, k in [−3·cap, 3·cap].
fn harmonic_amplitudes(model: &LineModel, cap: usize) -> Vec<(i64, Complex64)> {
    let jmm = bessel_j_all(cap, model.beta_mm);
    let beta_a = model.signed_stark_index();
    let ja = bessel_j_all(cap, beta_a.abs());
    let jsigned = |tab: &[f64], m: i64, negative_arg: bool| -> f64 {
        let v = tab[m.unsigned_abs() as usize];
        let parity = if m < 0 && m % 2 != 0 { -1.0 } else { 1.0 };
        let arg_sign = if negative_arg && m % 2 != 0 { -1.0 } else { 1.0 };
        v * parity * arg_sign
    };
    let c = cap as i64;
    let kmax = 3 * c;
    let mut amps = vec![Complex64::new(0.0, 0.0); (2 * kmax + 1) as usize];
    let minus_i = Complex64::new(0.0, -1.0);
    for mp in -c..=c {
        let doppler = minus_i.powi(mp as i32) * jsigned(&jmm, mp, false);
        if doppler.norm() == 0.0 {
            continue;
        }
        for m in -c..=c {
            let stark = if m % 2 == 0 { 1.0 } else { -1.0 } * jsigned(&ja, m, beta_a < 0.0);
            let k = mp + 2 * m;
            amps[(k + kmax) as usize] += doppler * stark;
        }
    }
    (-kmax..=kmax).zip(amps).collect()
}

/// Discrete sideband spectrum with per-index truncation `order_cap`.
pub fn sideband_series(model: &LineModel, order_cap: usize) -> Result<Vec<Sideband>, SpectraError> {
    model.validate()?;
    if order_cap < 1 {
        return Err(SpectraError::InvalidModel("order cap must be at least 1"));
    }
    let amps = harmonic_amplitudes(model, order_cap);
    let mut out = Vec::new();
    let mut total = 0.0;
    for (k, a) in amps {
        let w = a.norm_sqr();
        total += w;
        if w > 1e-16 {
            out.push(Sideband { order: k, offset: k as f64 * model.omega_rf, weight: w });
        }
    }
    let residual = (1.0 - total).abs();
    if residual > 1e-4 {
        return Err(SpectraError::TruncationTooSmall { residual });
    }
    Ok(out)
}

fn lorentzian(x: f64, fwhm: f64) -> f64 {
    let h = 0.5 * fwhm;
    h * h / (x * x + h * h)
}

fn check_grid(grid: &[f64]) -> Result<(), SpectraError> {
    let inc = grid.windows(2).all(|w| w[1] > w[0]);
    let dec = grid.windows(2).all(|w| w[1] < w[0]);
    if inc || dec {
        Ok(())
    } else {
        Err(SpectraError::NonMonotoneGrid)
    }
}

/// Lorentzian-broadened sideband spectrum on a laser-detuning grid (rad/s); unit-height lines.
pub fn line_profile(model: &LineModel, grid: &[f64]) -> Result<Vec<f64>, SpectraError> {
    check_grid(grid)?;
    let bands = sideband_series(model, model.default_order_cap())?;
    let centre = model.omega0 + model.carrier_offset;
    Ok(grid
        .iter()
        .map(|&d| bands.iter().map(|b| b.weight * lorentzian(d - centre - b.offset, model.natural_width)).sum())
        .collect())
}

/// Geometric occupation probabilities truncated at cumulative 1 − 1e-6.
pub fn thermal_occupations(nbar: f64) -> Vec<f64> {
    if nbar <= 0.0 {
        return vec![1.0];
    }
    let ratio = nbar / (nbar + 1.0);
    let mut p = 1.0 / (nbar + 1.0);
    let mut out = Vec::new();
    let mut cum = 0.0;
    while cum < 1.0 - 1e-6 {
        out.push(p);
        cum += p;
        p *= ratio;
    }
    out
}

/// Line profile of a thermal ion whose radial trap frequencies change on excitation.
///
/// `omega_ground`, `omega_rydberg` are the (x, y) secular frequencies in each state (rad/s).
pub fn thermal_profile(
    omega_ground: [f64; 2],
    omega_rydberg: [f64; 2],
    nbar: [f64; 2],
    natural_width: f64,
    grid: &[f64],
) -> Result<Vec<f64>, SpectraError> {
    check_grid(grid)?;
    if !(natural_width > 0.0) {
        return Err(SpectraError::InvalidModel("natural width must be positive"));
    }
    if nbar.iter().any(|n| !(*n >= 0.0)) {
        return Err(SpectraError::InvalidModel("mean phonon number must be non-negative"));
    }
    let px = thermal_occupations(nbar[0]);
    let py = thermal_occupations(nbar[1]);
    let dx = omega_rydberg[0] - omega_ground[0];
    let dy = omega_rydberg[1] - omega_ground[1];
    let mut out = vec![0.0; grid.len()];
    for (nx, wx) in px.iter().enumerate() {
        for (ny, wy) in py.iter().enumerate() {
            let shift = (nx as f64 + 0.5) * dx + (ny as f64 + 0.5) * dy;
            let w = wx * wy;
            for (o, &d) in out.iter_mut().zip(grid) {
                *o += w * lorentzian(d - shift, natural_width);
            }
        }
    }
    Ok(out)
}

/// Full width at half maximum of a sampled single-peaked profile (linear interpolation).
pub fn fwhm(grid: &[f64], profile: &[f64]) -> Option<f64> {
    let (imax, &pmax) = profile.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * pmax;
    let mut left = None;
    for i in (0..imax).rev() {
        if profile[i] < half {
            let t = (half - profile[i]) / (profile[i + 1] - profile[i]);
            left = Some(grid[i] + t * (grid[i + 1] - grid[i]));
            break;
        }
    }
    let mut right = None;
    for i in imax + 1..profile.len() {
        if profile[i] < half {
            let t = (half - profile[i - 1]) / (profile[i] - profile[i - 1]);
            right = Some(grid[i - 1] + t * (grid[i] - grid[i - 1]));
            break;
        }
    }
    Some((right? - left?).abs())
}

/// Inputs for the Floquet analysis of a J = 3/2 Zeeman manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetManifold {
    pub n: u32,
    pub l: u32,
    /// Quadrupole moment (C m²).
    pub quadrupole: f64,
    pub gamma_prime: f64,
    pub gamma: f64,
    pub omega_rf: f64,
    /// Zeeman energies / ħ for m_J = −3/2, −1/2, 1/2, 3/2 (rad/s).
    pub zeeman: [f64; 4],
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloquetLine {
    /// Sublevel probed, as 2m_J.
    pub twice_mj: i32,
    /// Quasi-energy minus the bare energy of the probed sublevel (rad/s).
    pub offset: f64,
    pub weight: f64,
    /// Sideband order round(offset/Ω_RF).
    pub order: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloquetSpectrum {
    /// Bare energies / ħ (Zeeman plus static quadrupole shift) for m_J = −3/2 … 3/2.
    pub bare: [f64; 4],
    pub quasi_energies: Vec<f64>,
    pub lines: Vec<FloquetLine>,
    /// Weight in sideband order |k| averaged over the four probed sublevels.
    pub order_weights: Vec<f64>,
    pub coupling_rate: f64,
}

/// Diagonalizes the truncated Floquet Hamiltonian of a J = 3/2 manifold with RF Δm_J = ±2 coupling.
pub fn floquet_sidebands(manifold: &FloquetManifold) -> Result<FloquetSpectrum, SpectraError> {
    if manifold.k_max < 2 {
        return Err(SpectraError::InvalidModel("k_max must be at least 2"));
    }
    if !(manifold.omega_rf > 0.0) {
        return Err(SpectraError::InvalidModel("RF frequency must be positive"));
    }
    let mut bare = [0.0; 4];
    for (i, b) in bare.iter_mut().enumerate() {
        let twice_mj = 2 * i as i32 - 3;
        let level = RydbergLevel { n: manifold.n, l: manifold.l, twice_j: 3, twice_mj };
        *b = manifold.zeeman[i] + static_quadrupole_shift(&level, manifold.quadrupole, manifold.gamma) / HBAR;
    }
    let coupling = rf_coupling_rate(manifold.quadrupole, manifold.gamma_prime);
    let kmax = manifold.k_max as i64;
    let nk = (2 * kmax + 1) as usize;
    let dim = 4 * nk;
    let idx = |m: usize, k: i64| ((k + kmax) as usize) * 4 + m;
    let mut h = DMatrix::zeros(dim, dim);
    for k in -kmax..=kmax {
        for m in 0..4 {
            h[(idx(m, k), idx(m, k))] = bare[m] + k as f64 * manifold.omega_rf;
        }
        if k < kmax {
            for (a, b) in [(0usize, 2usize), (1, 3)] {
                for (p, q) in [(a, b), (b, a)] {
                    h[(idx(p, k), idx(q, k + 1))] = 0.5 * coupling;
                    h[(idx(q, k + 1), idx(p, k))] = 0.5 * coupling;
                }
            }
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut lines = Vec::new();
    let mut order_weights = vec![0.0; manifold.k_max + 1];
    let mut edge_leak = 0.0;
    for m in 0..4 {
        let row = idx(m, 0);
        for j in 0..dim {
            let w = eig.eigenvectors[(row, j)].powi(2);
            if w < 1e-14 {
                continue;
            }
            let edge: f64 = (0..4)
                .map(|mm| eig.eigenvectors[(idx(mm, -kmax), j)].powi(2) + eig.eigenvectors[(idx(mm, kmax), j)].powi(2))
                .sum();
            edge_leak += w * edge / 4.0;
            let offset = eig.eigenvalues[j] - bare[m];
            let order = (offset / manifold.omega_rf).round() as i64;
            if (order.unsigned_abs() as usize) <= manifold.k_max {
                order_weights[order.unsigned_abs() as usize] += w / 4.0;
            }
            lines.push(FloquetLine { twice_mj: 2 * m as i32 - 3, offset, weight: w, order });
        }
    }
    if edge_leak > 1e-3 {
        return Err(SpectraError::TruncationTooSmall { residual: edge_leak });
    }
    let mut quasi: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    quasi.sort_by(f64::total_cmp);
    Ok(FloquetSpectrum { bare, quasi_energies: quasi, lines, order_weights, coupling_rate: coupling })
}

/// Observed spectrum: detuning (rad/s), signal and 1σ uncertainty per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSpectrum {
    pub detuning: Vec<f64>,
    pub signal: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub model: LineModel,
    pub amplitude: f64,
    /// Parameter order: ω₀, β_mm, signed β_α, amplitude, width.
    pub estimates: [f64; 5],
    pub sigmas: [f64; 5],
    /// Parameters held at zero after a degenerate first pass.
    pub fixed: [bool; 5],
    pub chi2: f64,
    pub reduced_chi2: f64,
    /// (α, σ_α) in C² m² J⁻¹ when E_res is supplied.
    pub alpha: Option<(f64, f64)>,
}

/// Counts local maxima standing above 5 % of the peak.
pub fn resolved_features(signal: &[f64]) -> usize {
    let peak = signal.iter().cloned().fold(f64::MIN, f64::max);
    (1..signal.len().saturating_sub(1))
        .filter(|&i| signal[i] > signal[i - 1] && signal[i] >= signal[i + 1] && signal[i] > 0.05 * peak)
        .count()
}

fn run_line_fit(
    data: &ObservedSpectrum,
    omega_rf: f64,
    guess: &[f64; 5],
    fixed: [bool; 5],
) -> Result<(Vec<f64>, crate::numerics::fit::LmOutcome), FitError> {
    let free: Vec<usize> = (0..5).filter(|&i| !fixed[i]).collect();
    let expand = |q: &[f64]| -> [f64; 5] {
        let mut p = *guess;
        for (slot, &i) in free.iter().enumerate() {
            p[i] = q[slot];
        }
        for i in 0..5 {
            if fixed[i] {
                p[i] = 0.0;
            }
        }
        p
    };
    let residuals = |q: &[f64]| -> Vec<f64> {
        let p = expand(q);
        let width = p[4].abs().max(1e-300);
        let model = LineModel::from_indices(p[0], p[1].abs(), p[2], omega_rf, width);
        match line_profile(&model, &data.detuning) {
            Ok(prof) => prof
                .iter()
                .zip(&data.signal)
                .zip(&data.sigma)
                .map(|((m, y), s)| (p[3] * m - y) / s)
                .collect(),
            Err(_) => vec![f64::NAN; data.signal.len()],
        }
    };
    let q0: Vec<f64> = free.iter().map(|&i| guess[i]).collect();
    let scale: Vec<f64> = free
        .iter()
        .map(|&i| match i {
            0 | 4 => guess[4].abs().max(1e-3 * omega_rf),
            _ => 0.1,
        })
        .collect();
    let opts = LmOptions { diff_step: 1e-7, ..LmOptions::default() };
    let out = levenberg_marquardt(residuals, &q0, &scale, &opts)?;
    let full = expand(&out.params).to_vec();
    Ok((full, out))
}

/// Scans ω₀ over one RF period around the guess at quarter-width steps.
fn coarse_centre(data: &ObservedSpectrum, omega_rf: f64, p: &[f64; 5]) -> f64 {
    let width = p[4].abs();
    let steps = ((omega_rf / (0.25 * width)).ceil() as i64).min(2000);
    let mut best = (f64::INFINITY, p[0]);
    for i in -steps..=steps {
        let w0 = p[0] + i as f64 * omega_rf / steps as f64;
        let model = LineModel::from_indices(w0, p[1].abs(), p[2], omega_rf, width);
        if let Ok(prof) = line_profile(&model, &data.detuning) {
            let chi2: f64 = prof.iter().zip(&data.signal).zip(&data.sigma).map(|((m, y), s)| ((p[3] * m - y) / s).powi(2)).sum();
            if chi2 < best.0 {
                best = (chi2, w0);
            }
        }
    }
    best.1
}

/// Fits `line_profile` (times an amplitude) to an observed spectrum.
///
/// Free: ω₀, β_mm, signed β_α, amplitude, width. With `e_res` (V/m) the
/// polarizability is derived from β_α.
pub fn fit_line(data: &ObservedSpectrum, omega_rf: f64, guess: &LineModel, amplitude: f64, e_res: Option<f64>) -> Result<LineFit, SpectraError> {
    check_grid(&data.detuning)?;
    if data.signal.len() != data.detuning.len() || data.sigma.len() != data.detuning.len() {
        return Err(SpectraError::InvalidModel("spectrum columns differ in length"));
    }
    let found = resolved_features(&data.signal);
    if found == 0 {
        return Err(SpectraError::TooFewFeatures { required: 1, found });
    }
    let mut p0 = [guess.omega0, guess.beta_mm, guess.signed_stark_index(), amplitude, guess.natural_width];
    p0[0] = coarse_centre(data, omega_rf, &p0);
    let mut fixed = [false; 5];
    let (p, out) = match run_line_fit(data, omega_rf, &p0, fixed) {
        Ok(r) => r,
        Err(FitError::IllConditioned { condition }) => {
            // indices collapsed to zero make their columns vanish; drop them and refit
            let mut relaxed = p0;
            relaxed[1] = 0.0;
            relaxed[2] = 0.0;
            let pre = run_line_fit(data, omega_rf, &relaxed, [false, true, true, false, false]);
            match pre {
                Ok((pp, _)) => {
                    let trial = run_line_fit(data, omega_rf, &[pp[0], 1e-2, 1e-2, pp[3], pp[4]], fixed);
                    match trial {
                        Ok(r) if r.0[1].abs() > 1e-3 || r.0[2].abs() > 1e-3 => r,
                        _ => {
                            fixed = [false, true, true, false, false];
                            run_line_fit(data, omega_rf, &relaxed, fixed)?
                        }
                    }
                }
                Err(_) => return Err(SpectraError::Fit(FitError::IllConditioned { condition })),
            }
        }
        Err(e) => return Err(e.into()),
    };
    let free: Vec<usize> = (0..5).filter(|&i| !fixed[i]).collect();
    let mut sigmas = [0.0; 5];
    for (slot, &i) in free.iter().enumerate() {
        sigmas[i] = out.sigma(slot);
    }
    let dof = (data.signal.len() as f64 - free.len() as f64).max(1.0);
    let model = LineModel::from_indices(p[0], p[1].abs(), p[2], omega_rf, p[4].abs());
    let alpha = e_res.map(|e| {
        let k = 8.0 * HBAR * omega_rf / (e * e);
        (k * p[2], k * sigmas[2])
    });
    Ok(LineFit {
        model,
        amplitude: p[3],
        estimates: [p[0], p[1].abs(), p[2], p[3], p[4].abs()],
        sigmas,
        fixed,
        chi2: out.chi2,
        reduced_chi2: out.chi2 / dof,
        alpha,
    })
}
