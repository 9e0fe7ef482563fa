//! Open-system dynamics of the two-step Rydberg excitation ladder
//! {|0⟩, |e⟩, |r⟩} plus a sink |g⟩ collecting spontaneous decay.
//!
//! Rates and detunings are angular frequencies (rad/s); the Hamiltonian is
//! returned divided by ħ.

use crate::numerics::fit::{levenberg_marquardt, FitError, LmOptions};
use crate::numerics::ode::{integrate, OdeError, OdeOptions};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("adiabatic elimination invalid: |Δ₁| = {delta1:.3e} < 5 × {largest:.3e}")]
    EliminationInvalid { delta1: f64, largest: f64 },
    #[error("integration failed: {0}")]
    StepFailure(#[from] OdeError),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("pulse order is not counter-intuitive: Ω₂ must lead Ω₁")]
    NotCounterIntuitive,
    #[error(transparent)]
    Fit(#[from] FitError),
}

pub type CMatrix = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Time-dependent real amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Constant(f64),
    /// peak · sin²(π(t − start)/width) on [start, start + width], zero elsewhere.
    SinSquared { peak: f64, start: f64, width: f64 },
    Sum(Vec<Envelope>),
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Envelope::Constant(v) => *v,
            Envelope::SinSquared { peak, start, width } => {
                let s = (t - start) / width;
                if (0.0..=1.0).contains(&s) {
                    peak * (PI * s).sin().powi(2)
                } else {
                    0.0
                }
            }
            Envelope::Sum(parts) => parts.iter().map(|p| p.at(t)).sum(),
        }
    }

    /// Earliest time at which the envelope is non-zero (−∞ for constants).
    pub fn onset(&self) -> f64 {
        match self {
            Envelope::Constant(v) => {
                if *v == 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
            Envelope::SinSquared { peak, start, .. } => {
                if *peak == 0.0 {
                    f64::INFINITY
                } else {
                    *start
                }
            }
            Envelope::Sum(parts) => parts.iter().map(|p| p.onset()).fold(f64::INFINITY, f64::min),
        }
    }

    pub(crate) fn shortest_feature(&self) -> f64 {
        match self {
            Envelope::Constant(_) => f64::INFINITY,
            Envelope::SinSquared { width, .. } => *width,
            Envelope::Sum(parts) => parts.iter().map(|p| p.shortest_feature()).fold(f64::INFINITY, f64::min),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Envelope::Constant(v) => v.is_finite(),
            Envelope::SinSquared { peak, start, width } => peak.is_finite() && start.is_finite() && width.is_finite() && *width > 0.0,
            Envelope::Sum(parts) => parts.iter().all(|p| p.is_finite()),
        }
    }
}

/// Three-level ladder driven by two lasers, decaying into a sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelSystem {
    pub omega1: Envelope,
    pub omega2: Envelope,
    pub delta1: f64,
    pub delta2: f64,
    pub phi: f64,
    pub gamma_e: f64,
    pub gamma_r: f64,
    /// Pure-dephasing rates (δ₁, δ₂) of the two laser-driven coherences.
    pub laser_linewidths: (f64, f64),
}

impl ThreeLevelSystem {
    /// Constant couplings, no losses.
    pub fn lossless(omega1: f64, omega2: f64, delta1: f64, delta2: f64) -> Self {
        Self {
            omega1: Envelope::Constant(omega1),
            omega2: Envelope::Constant(omega2),
            delta1,
            delta2,
            phi: 0.0,
            gamma_e: 0.0,
            gamma_r: 0.0,
            laser_linewidths: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let rates = [self.gamma_e, self.gamma_r, self.laser_linewidths.0, self.laser_linewidths.1];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(DynamicsError::InvalidParameters("rates must be finite and non-negative"));
        }
        if !self.omega1.is_finite() || !self.omega2.is_finite() || !self.delta1.is_finite() || !self.delta2.is_finite() || !self.phi.is_finite() {
            return Err(DynamicsError::InvalidParameters("non-finite coupling or detuning"));
        }
        Ok(())
    }
}

/// Level indices in the 4×4 density matrix.
pub const GROUND: usize = 0;
pub const INTERMEDIATE: usize = 1;
pub const RYDBERG: usize = 2;
pub const SINK: usize = 3;

/// The 3×3 ladder Hamiltonian / ħ at time t.
pub fn hamiltonian(sys: &ThreeLevelSystem, t: f64) -> CMatrix {
    ladder_hamiltonian(sys.omega1.at(t), sys.omega2.at(t), sys.delta1, sys.delta2, sys.phi)
}

pub(crate) fn ladder_hamiltonian(o1: f64, o2: f64, d1: f64, d2: f64, phi: f64) -> CMatrix {
    let mut h = CMatrix::zeros(3, 3);
    h[(0, 1)] = c(0.5 * o1);
    h[(1, 0)] = c(0.5 * o1);
    h[(1, 1)] = c(d1);
    h[(1, 2)] = Complex64::from_polar(0.5 * o2, phi);
    h[(2, 1)] = Complex64::from_polar(0.5 * o2, -phi);
    h[(2, 2)] = c(d1 + d2);
    h
}

/// Density matrix with contract checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState(pub CMatrix);

impl SystemState {
    pub fn pure(amplitudes: &[Complex64]) -> Self {
        let v = DVector::from_column_slice(amplitudes);
        let norm = v.norm();
        let v = v / c(norm);
        SystemState(&v * v.adjoint())
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(index, index)] = c(1.0);
        SystemState(m)
    }

    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.0.nrows()).map(|i| self.0[(i, i)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.0 + self.0.adjoint()) * c(0.5);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Checks Hermiticity, unit trace and positivity within `tol`.
    pub fn check(&self, tol: f64) -> Result<(), DynamicsError> {
        let h = self.hermiticity_error();
        if h > tol {
            return Err(DynamicsError::InvalidState(format!("non-Hermitian by {h:.3e}")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > tol {
            return Err(DynamicsError::InvalidState(format!("trace {tr}")));
        }
        let m = self.min_eigenvalue();
        if m < -tol {
            return Err(DynamicsError::InvalidState(format!("negative eigenvalue {m:.3e}")));
        }
        Ok(())
    }
}

/// Lindblad master equation dρ/dt = −i[H(t), ρ] + Σ (LρL† − ½{L†L, ρ}).
pub struct MasterEquation<'a> {
    pub hamiltonian: Box<dyn Fn(f64) -> CMatrix + 'a>,
    pub collapse: Vec<CMatrix>,
    /// Largest step allowed (s).
    pub max_step: f64,
}

fn to_real(m: &CMatrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * m.len());
    for z in m.iter() {
        v.push(z.re);
        v.push(z.im);
    }
    v
}

fn from_real(v: &[f64], d: usize) -> CMatrix {
    CMatrix::from_iterator(d, d, v.chunks(2).map(|p| Complex64::new(p[0], p[1])))
}

impl<'a> MasterEquation<'a> {
    /// Integrates from t0 and returns ρ at each sample time.
    pub fn evolve(&self, rho0: &CMatrix, t0: f64, times: &[f64]) -> Result<Vec<CMatrix>, DynamicsError> {
        let d = rho0.nrows();
        let dissipators: Vec<(CMatrix, CMatrix, CMatrix)> = self
            .collapse
            .iter()
            .map(|l| {
                let ld = l.adjoint();
                let ldl = &ld * l;
                (l.clone(), ld, ldl)
            })
            .collect();
        let minus_i = Complex64::new(0.0, -1.0);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let rho = from_real(y, d);
            let h = (self.hamiltonian)(t);
            let mut out = (&h * &rho - &rho * &h) * minus_i;
            for (l, ld, ldl) in &dissipators {
                out += l * &rho * ld - (ldl * &rho + &rho * ldl) * c(0.5);
            }
            for (k, z) in out.iter().enumerate() {
                dy[2 * k] = z.re;
                dy[2 * k + 1] = z.im;
            }
        };
        let opts = OdeOptions { rtol: 1e-9, atol: 1e-10, max_step: self.max_step, ..OdeOptions::default() };
        let ys = integrate(rhs, t0, &to_real(rho0), times, &opts)?;
        Ok(ys.iter().map(|y| from_real(y, d)).collect())
    }
}

fn projector(d: usize, i: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, i)] = c(1.0);
    m
}

fn transition(d: usize, to: usize, from: usize, rate: f64) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(to, from)] = c(rate.sqrt());
    m
}

/// Collapse operators of the ladder embedded in a `d`-level space at `offset`.
///
/// Decay |e⟩, |r⟩ → sink; dephasing (|e⟩⟨e| + |r⟩⟨r|)√δ₁ and |r⟩⟨r|√δ₂, so a
/// laser of FWHM δ damps its coherence at δ/2.
pub(crate) fn ladder_collapse(sys: &ThreeLevelSystem, d: usize, offset: usize) -> Vec<CMatrix> {
    let (e, r, g) = (offset + INTERMEDIATE, offset + RYDBERG, offset + SINK);
    let mut ops = Vec::new();
    if sys.gamma_e > 0.0 {
        ops.push(transition(d, g, e, sys.gamma_e));
    }
    if sys.gamma_r > 0.0 {
        ops.push(transition(d, g, r, sys.gamma_r));
    }
    let (d1, d2) = sys.laser_linewidths;
    if d1 > 0.0 {
        ops.push((projector(d, e) + projector(d, r)) * c(d1.sqrt()));
    }
    if d2 > 0.0 {
        ops.push(projector(d, r) * c(d2.sqrt()));
    }
    ops
}

fn embed(h3: &CMatrix, d: usize, offset: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for i in 0..3 {
        for j in 0..3 {
            m[(offset + i, offset + j)] = h3[(i, j)];
        }
    }
    m
}

fn step_limit(sys: &ThreeLevelSystem, duration: f64) -> f64 {
    let feature = sys.omega1.shortest_feature().min(sys.omega2.shortest_feature());
    (feature / 40.0).min(duration / 20.0).max(1e-15)
}

/// Sampled trajectory of the 4×4 density matrix.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
}

impl Trajectory {
    pub fn population(&self, level: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.population(level)).collect()
    }
}

/// Master-equation evolution of the ladder for `duration`, sampled every `dt`.
pub fn evolve(sys: &ThreeLevelSystem, initial: &SystemState, duration: f64, dt: f64) -> Result<Trajectory, DynamicsError> {
    sys.validate()?;
    if initial.0.nrows() != 4 {
        return Err(DynamicsError::InvalidState("ladder state must be 4×4".into()));
    }
    initial.check(1e-9)?;
    if !(duration > 0.0 && dt > 0.0) {
        return Err(DynamicsError::InvalidParameters("duration and sample step must be positive"));
    }
    let n = (duration / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=n).map(|k| duration * k as f64 / n as f64).collect();
    let me = MasterEquation {
        hamiltonian: Box::new(|t| embed(&hamiltonian(sys, t), 4, 0)),
        collapse: ladder_collapse(sys, 4, 0),
        max_step: step_limit(sys, duration),
    };
    let rhos = me.evolve(&initial.0, 0.0, &times)?;
    Ok(Trajectory { times, states: rhos.into_iter().map(SystemState).collect() })
}

/// Effective two-level description after eliminating |e⟩.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveTwoLevel {
    pub omega_eff: f64,
    /// Light shift of |0⟩, −Ω₁²/(4Δ₁).
    pub shift_ground: f64,
    /// Light shift of |r⟩, −Ω₂²/(4Δ₁).
    pub shift_rydberg: f64,
    /// (Ω₁² − Ω₂²)/(4Δ₁) + Δ₁ + Δ₂; zero on the effective two-photon resonance.
    pub resonance_residual: f64,
    /// 2×2 Hamiltonian / ħ in {|0⟩, |r⟩}.
    pub hamiltonian: [[f64; 2]; 2],
}

/// Adiabatic elimination of the intermediate level (peak couplings at t = 0).
pub fn adiabatic_eliminate(sys: &ThreeLevelSystem) -> Result<EffectiveTwoLevel, DynamicsError> {
    let o1 = sys.omega1.at(0.0);
    let o2 = sys.omega2.at(0.0);
    let d1 = sys.delta1;
    let largest = o1.abs().max(o2.abs()).max(sys.gamma_e);
    if !(d1.abs() >= 5.0 * largest * (1.0 - 1e-12)) || d1 == 0.0 {
        return Err(DynamicsError::EliminationInvalid { delta1: d1.abs(), largest });
    }
    let h00 = -o1 * o1 / (4.0 * d1);
    let h01 = -o1 * o2 / (4.0 * d1);
    let h11 = -o2 * o2 / (4.0 * d1) + d1 + sys.delta2;
    Ok(EffectiveTwoLevel {
        omega_eff: (o1 * o2 / (2.0 * d1)).abs(),
        shift_ground: h00,
        shift_rydberg: -o2 * o2 / (4.0 * d1),
        resonance_residual: (o1 * o1 - o2 * o2) / (4.0 * d1) + d1 + sys.delta2,
        hamiltonian: [[h00, h01], [h01, h11]],
    })
}

/// Dressed states of the |e⟩–|r⟩ pair under Ω₂.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedStates {
    /// E₀, E₊, E₋ divided by ħ (rad/s).
    pub energies: [f64; 3],
    /// Normalized amplitudes on (|e⟩, |r⟩) of |φ₊⟩ and |φ₋⟩.
    pub plus: [f64; 2],
    pub minus: [f64; 2],
}

/// Autler–Townes eigenvalues and eigenvectors of the coupled |e⟩, |r⟩ pair.
pub fn autler_townes(sys: &ThreeLevelSystem) -> Result<DressedStates, DynamicsError> {
    let o2 = sys.omega2.at(0.0);
    if !(o2 > 0.0) {
        return Err(DynamicsError::InvalidParameters("Ω₂ must be positive"));
    }
    let d2 = sys.delta2;
    let root = (d2 * d2 + o2 * o2).sqrt();
    let vec = |sign: f64| {
        let a = (-d2 + sign * root) / o2;
        let n = (a * a + 1.0).sqrt();
        [a / n, 1.0 / n]
    };
    Ok(DressedStates { energies: [0.0, 0.5 * (d2 + root), 0.5 * (d2 - root)], plus: vec(1.0), minus: vec(-1.0) })
}

/// How a spectroscopy grid point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScanMode {
    /// Steady state with decay returned to |0⟩ (closed cycle).
    SteadyState,
    /// Population after a fixed interaction time (s), starting in |0⟩.
    Duration(f64),
}

/// Observable recorded at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Probe {
    Intermediate,
    Rydberg,
    /// Population lost from |0⟩ (1 − P₀).
    Depletion,
}

/// Steady state of the closed-cycle ladder (sink removed, decay back to |0⟩).
fn steady_state(o1: f64, o2: f64, sys: &ThreeLevelSystem, d1: f64, d2: f64) -> CMatrix {
    let d = 3;
    let h = ladder_hamiltonian(o1, o2, d1, d2, sys.phi);
    let mut ops = Vec::new();
    if sys.gamma_e > 0.0 {
        ops.push(transition(d, GROUND, INTERMEDIATE, sys.gamma_e));
    }
    if sys.gamma_r > 0.0 {
        ops.push(transition(d, GROUND, RYDBERG, sys.gamma_r));
    }
    if sys.laser_linewidths.0 > 0.0 {
        ops.push((projector(d, 1) + projector(d, 2)) * c(sys.laser_linewidths.0.sqrt()));
    }
    if sys.laser_linewidths.1 > 0.0 {
        ops.push(projector(d, 2) * c(sys.laser_linewidths.1.sqrt()));
    }
    let n = d * d;
    let id = CMatrix::identity(d, d);
    // column-stacked vec: vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
    let mi = Complex64::new(0.0, -1.0);
    let mut lsup = (id.kronecker(&h) - h.transpose().kronecker(&id)) * mi;
    for l in &ops {
        let ldl = l.adjoint() * l;
        lsup += l.conjugate().kronecker(l) - (id.kronecker(&ldl) + ldl.transpose().kronecker(&id)) * c(0.5);
    }
    for col in 0..n {
        lsup[(0, col)] = c(0.0);
    }
    for i in 0..d {
        lsup[(0, i * d + i)] = c(1.0);
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = c(1.0);
    let sol = lsup.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
    CMatrix::from_column_slice(d, d, sol.as_slice())
}

fn probe_value(rho: &CMatrix, probe: Probe) -> f64 {
    match probe {
        Probe::Intermediate => rho[(INTERMEDIATE, INTERMEDIATE)].re,
        Probe::Rydberg => rho[(RYDBERG, RYDBERG)].re,
        Probe::Depletion => 1.0 - rho[(GROUND, GROUND)].re,
    }
}

/// Excitation map over Δ₁ (rows of the result) and Δ₂ (columns).
pub fn spectroscopy_scan(
    sys: &ThreeLevelSystem,
    delta1_grid: &[f64],
    delta2_grid: &[f64],
    mode: ScanMode,
    probe: Probe,
) -> Result<Vec<Vec<f64>>, DynamicsError> {
    sys.validate()?;
    let o1 = sys.omega1.at(0.0);
    let o2 = sys.omega2.at(0.0);
    let mut out = Vec::with_capacity(delta1_grid.len());
    for &d1 in delta1_grid {
        let mut row = Vec::with_capacity(delta2_grid.len());
        for &d2 in delta2_grid {
            let v = match mode {
                ScanMode::SteadyState => probe_value(&steady_state(o1, o2, sys, d1, d2), probe),
                ScanMode::Duration(t) => {
                    let mut s = sys.clone();
                    s.delta1 = d1;
                    s.delta2 = d2;
                    let traj = evolve(&s, &SystemState::basis(4, GROUND), t, t)?;
                    probe_value(&traj.states.last().unwrap().0, probe)
                }
            };
            row.push(v);
        }
        out.push(row);
    }
    Ok(out)
}

/// Local maxima above `min_fraction` of the global maximum, refined by a parabola.
pub fn find_peaks(grid: &[f64], values: &[f64], min_fraction: f64) -> Vec<f64> {
    let top = values.iter().cloned().fold(f64::MIN, f64::max);
    let mut peaks = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] && values[i] >= min_fraction * top {
            let (a, b, cc) = (values[i - 1], values[i], values[i + 1]);
            let denom = a - 2.0 * b + cc;
            let shift = if denom != 0.0 { 0.5 * (a - cc) / denom } else { 0.0 };
            let h = 0.5 * (grid[i + 1] - grid[i - 1]);
            peaks.push(grid[i] + shift * h);
        }
    }
    peaks
}

/// Counter-intuitive double-STIRAP pulse settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StirapPulses {
    pub peak_omega1: f64,
    pub peak_omega2: f64,
    /// Duration of one transfer (s).
    pub duration: f64,
    /// Fractional overlap of the two bumps (0, 1).
    pub overlap: f64,
    /// Wait between the two transfers (s).
    pub wait: f64,
    /// Phase of Ω₂ during the return transfer.
    pub phase: f64,
}

impl StirapPulses {
    pub fn width(&self) -> f64 {
        self.duration / (2.0 - self.overlap)
    }

    /// Envelopes of the forward transfer then the return transfer.
    pub fn envelopes(&self) -> (Envelope, Envelope) {
        let w = self.width();
        let lag = (1.0 - self.overlap) * w;
        let back = self.duration + self.wait;
        let o1 = Envelope::Sum(vec![
            Envelope::SinSquared { peak: self.peak_omega1, start: lag, width: w },
            Envelope::SinSquared { peak: self.peak_omega1, start: back, width: w },
        ]);
        let o2 = Envelope::Sum(vec![
            Envelope::SinSquared { peak: self.peak_omega2, start: 0.0, width: w },
            Envelope::SinSquared { peak: self.peak_omega2, start: back + lag, width: w },
        ]);
        (o1, o2)
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.duration > 0.0) || !(self.wait >= 0.0) {
            return Err(DynamicsError::InvalidParameters("duration must be positive and wait non-negative"));
        }
        if !(self.overlap > 0.0 && self.overlap < 1.0) {
            return Err(DynamicsError::InvalidParameters("overlap must lie in (0, 1)"));
        }
        if !(self.peak_omega1 > 0.0 && self.peak_omega2 > 0.0) {
            return Err(DynamicsError::InvalidParameters("peak couplings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StirapOutcome {
    /// P_r after the forward transfer.
    pub transfer_efficiency: f64,
    /// P₀ after the return transfer.
    pub return_population: f64,
    /// arg ρ₀₀-coherence phase acquired relative to a spectator level (rad).
    pub acquired_phase: f64,
}

/// Pulse schedule: envelopes, end of the forward transfer and start of the return phase (s).
struct Schedule<'a> {
    omega1: &'a Envelope,
    omega2: &'a Envelope,
    forward_end: f64,
    phase_switch: f64,
    end: f64,
    phase: f64,
    max_step: f64,
}

/// Runs forward and return transfers with a spectator qubit level |1⟩.
///
/// Basis {|1⟩, |0⟩, |e⟩, |r⟩, |g⟩}; returns the 5×5 density matrices after
/// the forward transfer and after the return transfer.
fn stirap_run(sys: &ThreeLevelSystem, sched: &Schedule, rho0: &CMatrix) -> Result<(CMatrix, CMatrix), DynamicsError> {
    let d = 5;
    let me = MasterEquation {
        hamiltonian: Box::new(|t| {
            let phi = if t >= sched.phase_switch { sys.phi + sched.phase } else { sys.phi };
            embed(&ladder_hamiltonian(sched.omega1.at(t), sched.omega2.at(t), sys.delta1, sys.delta2, phi), d, 1)
        }),
        collapse: ladder_collapse(sys, d, 1),
        max_step: sched.max_step,
    };
    let mut out = me.evolve(rho0, 0.0, &[sched.forward_end, sched.end])?;
    let back = out.pop().unwrap();
    let fwd = out.pop().unwrap();
    Ok((fwd, back))
}

fn schedule_of<'a>(pulses: &StirapPulses, o1: &'a Envelope, o2: &'a Envelope) -> Schedule<'a> {
    Schedule {
        omega1: o1,
        omega2: o2,
        forward_end: pulses.duration,
        phase_switch: pulses.duration + 0.5 * pulses.wait,
        end: 2.0 * pulses.duration + pulses.wait,
        phase: pulses.phase,
        max_step: pulses.width() / 40.0,
    }
}

fn stirap_outcome(sys: &ThreeLevelSystem, sched: &Schedule) -> Result<StirapOutcome, DynamicsError> {
    if sched.omega2.onset() >= sched.omega1.onset() {
        return Err(DynamicsError::NotCounterIntuitive);
    }
    let plus = [c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2), c(0.0), c(0.0), c(0.0)];
    let rho0 = SystemState::pure(&plus).0;
    let (fwd, back) = stirap_run(sys, sched, &rho0)?;
    Ok(StirapOutcome {
        transfer_efficiency: 2.0 * fwd[(3, 3)].re,
        return_population: 2.0 * back[(1, 1)].re,
        acquired_phase: (back[(1, 0)] / back[(1, 0)].norm().max(1e-300)).arg(),
    })
}

/// Double STIRAP |0⟩ → −|r⟩ → e^{−iφ}|0⟩ with sin² pulses.
pub fn stirap(sys: &ThreeLevelSystem, pulses: &StirapPulses) -> Result<StirapOutcome, DynamicsError> {
    sys.validate()?;
    pulses.validate()?;
    let (o1, o2) = pulses.envelopes();
    stirap_outcome(sys, &schedule_of(pulses, &o1, &o2))
}

/// Double STIRAP with arbitrary envelopes; the return phase switches on at `phase_switch`.
pub fn stirap_with_envelopes(
    sys: &ThreeLevelSystem,
    omega1: &Envelope,
    omega2: &Envelope,
    forward_end: f64,
    phase_switch: f64,
    end: f64,
    phase: f64,
) -> Result<StirapOutcome, DynamicsError> {
    sys.validate()?;
    if !(forward_end > 0.0 && end >= forward_end) {
        return Err(DynamicsError::InvalidParameters("transfer times must be ordered"));
    }
    let feature = omega1.shortest_feature().min(omega2.shortest_feature()).min(end);
    let sched = Schedule { omega1, omega2, forward_end, phase_switch, end, phase, max_step: feature / 40.0 };
    stirap_outcome(sys, &sched)
}

/// Exponential decay fit y = A e^{−t/τ}; returns (A, τ, σ_τ).
pub fn fit_exponential_decay(times: &[f64], values: &[f64]) -> Result<(f64, f64, f64), DynamicsError> {
    if times.len() < 3 {
        return Err(DynamicsError::InvalidParameters("need at least three samples"));
    }
    let span = times.last().unwrap() - times[0];
    let a0 = values[0].max(1e-12);
    let last = values.last().unwrap().max(1e-12);
    let tau0 = if last < a0 { span / (a0 / last).ln() } else { span };
    let t0 = times[0];
    let out = levenberg_marquardt(
        |p| times.iter().zip(values).map(|(t, y)| p[0] * (-(t - t0) / p[1]).exp() - y).collect(),
        &[a0, tau0],
        &[a0, tau0],
        &LmOptions::default(),
    )?;
    let amp = out.params[0] * (t0 / out.params[1]).exp();
    let dof = (times.len() as f64 - 2.0).max(1.0);
    let s2 = out.chi2 / dof;
    Ok((amp, out.params[1], (out.covariance[(1, 1)] * s2).max(0.0).sqrt()))
}

/// Ramsey phase-gate characterization.
#[derive(Debug, Clone)]
pub struct GateCharacterization {
    pub phases: Vec<f64>,
    /// P₀ after the closing π/2 pulse for each phase.
    pub ramsey_p0: Vec<f64>,
    /// Process matrix in the Pauli basis {I, X, Y, Z} (qubit order |1⟩, |0⟩).
    pub chi: CMatrix,
    /// True when χ had to be projected onto the PSD cone.
    pub projected: bool,
    /// Tr(χ_ideal χ) for the Z gate.
    pub fidelity: f64,
}

fn qubit_block(rho: &CMatrix) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| rho[(i, j)])
}

fn embed_qubit(q: &CMatrix) -> CMatrix {
    let mut m = CMatrix::zeros(5, 5);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = q[(i, j)];
        }
    }
    m
}

fn half_pi() -> CMatrix {
    let s = FRAC_1_SQRT_2;
    CMatrix::from_row_slice(2, 2, &[c(s), Complex64::new(0.0, -s), Complex64::new(0.0, -s), c(s)])
}

fn paulis() -> [CMatrix; 4] {
    let i = Complex64::new(0.0, 1.0);
    [
        CMatrix::identity(2, 2),
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(0.0), -i, i, c(0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]),
    ]
}

/// Linear-inversion χ from the images of the four standard inputs
/// {|1⟩, |0⟩, (|1⟩+|0⟩)/√2, (|1⟩+i|0⟩)/√2}.
pub fn process_matrix(images: &[CMatrix; 4]) -> CMatrix {
    let i = Complex64::new(0.0, 1.0);
    let e11 = &images[0];
    let e00 = &images[1];
    let e10 = &images[2] - &images[3] * i - (e11 + e00) * ((c(1.0) - i) * 0.5);
    let e01 = &images[2] + &images[3] * i - (e11 + e00) * ((c(1.0) + i) * 0.5);
    // superoperator columns: vec(ε(|a⟩⟨b|)) for column index b·2 + a
    let mut sup = CMatrix::zeros(4, 4);
    let cols = [(0usize, 0usize, e11), (1, 0, &e10), (0, 1, &e01), (1, 1, e00)];
    for (a, b, img) in cols {
        let col = b * 2 + a;
        for r in 0..2 {
            for s in 0..2 {
                sup[(s * 2 + r, col)] = img[(r, s)];
            }
        }
    }
    let p = paulis();
    let mut basis = CMatrix::zeros(16, 16);
    for m in 0..4 {
        for n in 0..4 {
            let k = p[n].conjugate().kronecker(&p[m]);
            for (idx, z) in k.iter().enumerate() {
                basis[(idx, m * 4 + n)] = *z;
            }
        }
    }
    let target = DVector::from_iterator(16, sup.iter().cloned());
    let sol = basis.lu().solve(&target).unwrap_or_else(|| DVector::zeros(16));
    CMatrix::from_fn(4, 4, |m, n| sol[m * 4 + n])
}

fn project_psd(chi: &CMatrix) -> (CMatrix, bool) {
    let herm = (chi + chi.adjoint()) * c(0.5);
    let eig = herm.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v > -1e-9) {
        return (herm, false);
    }
    let trace: f64 = eig.eigenvalues.iter().sum();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let kept: f64 = clipped.iter().sum();
    let scale = if kept > 0.0 { trace / kept } else { 0.0 };
    let mut out = CMatrix::zeros(4, 4);
    for (k, v) in clipped.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        out += &col * col.adjoint() * c(v * scale);
    }
    (out, true)
}

/// Double STIRAP with phase φ as a qubit operation, embedded in Ramsey π/2 pulses.
///
/// `phases` are scanned for the Ramsey signal; tomography uses `pulses.phase`.
pub fn geometric_phase_gate(sys: &ThreeLevelSystem, pulses: &StirapPulses, phases: &[f64]) -> Result<GateCharacterization, DynamicsError> {
    sys.validate()?;
    pulses.validate()?;
    let channel = |q: &CMatrix, phase: f64| -> Result<CMatrix, DynamicsError> {
        let p = StirapPulses { phase, ..*pulses };
        let (o1, o2) = p.envelopes();
        let (_, back) = stirap_run(sys, &schedule_of(&p, &o1, &o2), &embed_qubit(q))?;
        Ok(qubit_block(&back))
    };
    let hp = half_pi();
    let start = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(1.0)]);
    let mut ramsey = Vec::with_capacity(phases.len());
    for &phi in phases {
        let after_first = &hp * &start * hp.adjoint();
        let gated = channel(&after_first, phi)?;
        let fin = &hp * gated * hp.adjoint();
        ramsey.push(fin[(1, 1)].re);
    }
    let s = FRAC_1_SQRT_2;
    let i = Complex64::new(0.0, 1.0);
    let inputs = [
        SystemState::pure(&[c(1.0), c(0.0)]).0,
        SystemState::pure(&[c(0.0), c(1.0)]).0,
        SystemState::pure(&[c(s), c(s)]).0,
        SystemState::pure(&[c(s), i * s]).0,
    ];
    let images = [
        channel(&inputs[0], pulses.phase)?,
        channel(&inputs[1], pulses.phase)?,
        channel(&inputs[2], pulses.phase)?,
        channel(&inputs[3], pulses.phase)?,
    ];
    let (chi, projected) = project_psd(&process_matrix(&images));
    Ok(GateCharacterization { phases: phases.to_vec(), ramsey_p0: ramsey, fidelity: chi[(3, 3)].re, chi, projected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular;

    #[test]
    fn hamiltonian_basics() {
        let z = ThreeLevelSystem::lossless(0.0, 0.0, 0.0, 0.0);
        assert!(hamiltonian(&z, 0.0).iter().all(|v| v.norm() == 0.0));
        let mut s = ThreeLevelSystem::lossless(1.0, 2.0, 0.3, -0.1);
        s.phi = 1.1;
        let h = hamiltonian(&s, 0.0);
        assert!((&h - h.adjoint()).iter().all(|v| v.norm() < 1e-15));
        let s = ThreeLevelSystem::lossless(0.0, 2.0, 0.0, 0.0);
        let mut ev: Vec<f64> = hamiltonian(&s, 0.0).symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 1.0).abs() < 1e-12 && ev[1].abs() < 1e-12 && (ev[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_rabi() {
        let w = angular(1e6);
        let s = ThreeLevelSystem::lossless(w, 0.0, 0.0, 0.0);
        let traj = evolve(&s, &SystemState::basis(4, GROUND), 2e-6, 1e-8).unwrap();
        for (t, st) in traj.times.iter().zip(&traj.states) {
            let expect = (w * t / 2.0).sin().powi(2);
            assert!((st.population(INTERMEDIATE) - expect).abs() < 1e-6);
            st.check(1e-8).unwrap();
        }
    }

    #[test]
    fn elimination() {
        let s = ThreeLevelSystem::lossless(angular(10e6), angular(10e6), angular(50e6), -angular(50e6));
        let e = adiabatic_eliminate(&s).unwrap();
        assert!((e.omega_eff / angular(1e6) - 1.0).abs() < 1e-12);
        assert!(e.resonance_residual.abs() < 1e-6);
        let bad = ThreeLevelSystem::lossless(angular(10e6), angular(10e6), angular(20e6), 0.0);
        assert!(matches!(adiabatic_eliminate(&bad), Err(DynamicsError::EliminationInvalid { .. })));
    }

    #[test]
    fn dressed_states() {
        let s = ThreeLevelSystem::lossless(0.0, 3.0, 0.0, 0.0);
        let d = autler_townes(&s).unwrap();
        assert!((d.energies[1] - d.energies[2] - 3.0).abs() < 1e-12);
        assert!((d.plus[0] - FRAC_1_SQRT_2).abs() < 1e-12 && (d.minus[0] + FRAC_1_SQRT_2).abs() < 1e-12);
        let s = ThreeLevelSystem::lossless(0.0, 1.0, 0.0, 100.0);
        let d = autler_townes(&s).unwrap();
        assert!((d.energies[1] + d.energies[2] - 100.0).abs() < 1e-12);
        assert!((d.energies[2] + 1.0 / 400.0).abs() < 1e-6);
    }

    #[test]
    fn process_matrix_of_identity_and_z() {
        let s = FRAC_1_SQRT_2;
        let i = Complex64::new(0.0, 1.0);
        let inputs = [
            SystemState::pure(&[c(1.0), c(0.0)]).0,
            SystemState::pure(&[c(0.0), c(1.0)]).0,
            SystemState::pure(&[c(s), c(s)]).0,
            SystemState::pure(&[c(s), i * s]).0,
        ];
        let chi = process_matrix(&inputs.clone());
        assert!((chi[(0, 0)].re - 1.0).abs() < 1e-12);
        let z = &paulis()[3];
        let imgs = [z * &inputs[0] * z, z * &inputs[1] * z, z * &inputs[2] * z, z * &inputs[3] * z];
        let chi = process_matrix(&imgs);
        assert!((chi[(3, 3)].re - 1.0).abs() < 1e-12);
        assert!(chi.iter().map(|v| v.norm()).sum::<f64>() - 1.0 < 1e-12);
    }

    #[test]
    fn counter_intuitive_required() {
        let s = ThreeLevelSystem::lossless(0.0, 0.0, 0.0, 0.0);
        let intuitive = Envelope::SinSquared { peak: 1e8, start: 0.0, width: 1e-6 };
        let late = Envelope::SinSquared { peak: 1e8, start: 0.5e-6, width: 1e-6 };
        let r = stirap_with_envelopes(&s, &intuitive, &late, 1.5e-6, 1.5e-6, 1.5e-6, 0.0);
        assert_eq!(r.unwrap_err(), DynamicsError::NotCounterIntuitive);
    }

    #[test]
    fn lossless_stirap_transfers() {
        let s = ThreeLevelSystem::lossless(0.0, 0.0, 0.0, 0.0);
        let p = StirapPulses { peak_omega1: angular(30e6), peak_omega2: angular(30e6), duration: 2e-6, overlap: 0.5, wait: 0.0, phase: 0.0 };
        let out = stirap(&s, &p).unwrap();
        assert!(out.transfer_efficiency > 0.999, "{out:?}");
        assert!(out.return_population > 0.998, "{out:?}");
    }
}
