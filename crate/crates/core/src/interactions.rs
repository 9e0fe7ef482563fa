//! Rydberg-mediated interactions between trapped ions: pair potentials,
//! microwave dressing, blockade and electric-kick gates, excitation transport
//! and spin couplings in planar crystals.

use crate::constants::{coulomb_e2, E_CHARGE, EPSILON_0, HBAR};
use crate::crystal::{
    lamb_dicke_mode, linear_chain, normal_modes, Crystal, CrystalError, CrystalIon, ElectronicTag, ModeDecomposition, SplitMix,
};
use crate::dynamics::{ladder_collapse, ladder_hamiltonian, DynamicsError, Envelope, StirapPulses, ThreeLevelSystem};
use crate::numerics::fit::{levenberg_marquardt, LmOptions};
use crate::numerics::ode::{integrate, OdeOptions};
use crate::numerics::simplex::{nelder_mead, SimplexOptions};
use crate::trap::{IonSpecies, TrapConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("charges coincide")]
    CoincidentCharges,
    #[error("multipole expansion invalid: |r|/R = {ratio:.3} exceeds 0.2")]
    ExpansionInvalid { ratio: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("no feasible pulse: best infidelity {infidelity:.3e}")]
    NoFeasiblePulse { infidelity: f64 },
    #[error("system of {n} sites exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("mode {mode} is driven resonantly (detuning {detuning:.3e} rad/s)")]
    ResonantMode { mode: usize, detuning: f64 },
    #[error(transparent)]
    Crystal(#[from] CrystalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn length(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Coulomb energy of two Rydberg ions (J).
///
/// Each ion is a doubly charged core at `core_*` with its electron displaced
/// by `electron_*` from the core.
pub fn pair_potential_exact(core_i: Vec3, core_j: Vec3, electron_i: Vec3, electron_j: Vec3) -> Result<f64, InteractionError> {
    let r = sub(core_i, core_j);
    let dists = [
        length(r),
        length(sub(r, electron_j)),
        length(add(r, electron_i)),
        length(sub(add(r, electron_i), electron_j)),
    ];
    if dists.iter().any(|d| *d == 0.0) {
        return Err(InteractionError::CoincidentCharges);
    }
    Ok(coulomb_e2() * (4.0 / dists[0] - 2.0 / dists[1] - 2.0 / dists[2] + 1.0 / dists[3]))
}

/// Separate terms of the multipole expansion of the pair energy (J).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipoleTerms {
    pub coulomb: f64,
    pub dipole_charge: f64,
    pub quadrupole_charge: f64,
    pub dipole_dipole: f64,
}

impl MultipoleTerms {
    pub fn total(&self) -> f64 {
        self.coulomb + self.dipole_charge + self.quadrupole_charge + self.dipole_dipole
    }
}

pub fn pair_potential_multipole(core_i: Vec3, core_j: Vec3, electron_i: Vec3, electron_j: Vec3) -> Result<MultipoleTerms, InteractionError> {
    let r = sub(core_i, core_j);
    let big = length(r);
    if big == 0.0 {
        return Err(InteractionError::CoincidentCharges);
    }
    let ratio = length(electron_i).max(length(electron_j)) / big;
    if ratio > 0.2 {
        return Err(InteractionError::ExpansionInvalid { ratio });
    }
    let n = [r[0] / big, r[1] / big, r[2] / big];
    let k = coulomb_e2();
    let r3 = big.powi(3);
    let (ni, nj) = (dot(n, electron_i), dot(n, electron_j));
    Ok(MultipoleTerms {
        coulomb: k / big,
        dipole_charge: k * dot(r, sub(electron_i, electron_j)) / r3,
        quadrupole_charge: k * (dot(electron_i, electron_i) - 3.0 * ni * ni + dot(electron_j, electron_j) - 3.0 * nj * nj) / (2.0 * r3),
        dipole_dipole: k * (dot(electron_i, electron_j) - 3.0 * ni * nj) / r3,
    })
}

/// Microwave coupling of an nP level to an n′S level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MWDressing {
    /// Ω_MW (rad/s).
    pub rabi_mw: f64,
    pub delta_s: f64,
    pub delta_p: f64,
    /// |⟨P|d|S⟩| (C·m).
    pub dipole_d1: f64,
    /// C²·m²/J.
    pub alpha_s: f64,
    pub alpha_p: f64,
}

impl MWDressing {
    /// Δ₋ = Δ_P − Δ_S.
    pub fn delta_minus(&self) -> f64 {
        self.delta_p - self.delta_s
    }

    pub fn delta_plus(&self) -> f64 {
        self.delta_p + self.delta_s
    }
}

/// One dressed state (C|P⟩ + |S⟩)/√(1 + C²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedState {
    pub mixing: f64,
    /// Amplitudes on (|P⟩, |S⟩).
    pub amplitudes: [f64; 2],
    pub polarizability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedPair {
    pub plus: DressedState,
    pub minus: DressedState,
}

fn dressed_state(mixing: f64, d: &MWDressing) -> DressedState {
    let norm = (1.0 + mixing * mixing).sqrt();
    DressedState {
        mixing,
        amplitudes: [mixing / norm, 1.0 / norm],
        polarizability: (mixing * mixing * d.alpha_p + d.alpha_s) / (1.0 + mixing * mixing),
    }
}

pub fn mw_dressed_states(dressing: &MWDressing) -> Result<DressedPair, InteractionError> {
    let om = dressing.rabi_mw;
    if om == 0.0 || !om.is_finite() {
        return Err(InteractionError::InvalidParameters("microwave Rabi frequency must be non-zero"));
    }
    let dm = dressing.delta_minus();
    let root = om.hypot(dm);
    // C₊C₋ = −1; take the well-conditioned root first
    let (cp, cm) = if dm >= 0.0 {
        let cp = (dm + root) / om;
        (cp, -1.0 / cp)
    } else {
        let cm = (dm - root) / om;
        (-1.0 / cm, cm)
    };
    Ok(DressedPair { plus: dressed_state(cp, dressing), minus: dressed_state(cm, dressing) })
}

/// Δ₋ that sets C₊ = `mixing` (> 0) at a given Ω_MW; then C₋ = −1/mixing.
pub fn detuning_for_mixing(rabi_mw: f64, mixing: f64) -> f64 {
    0.5 * rabi_mw * (mixing - 1.0 / mixing)
}

/// |C| at which a dressed state has zero polarizability, √(−α_S/α_P).
pub fn zero_polarizability_mixing(alpha_s: f64, alpha_p: f64) -> Option<f64> {
    let r = -alpha_s / alpha_p;
    (r > 0.0 && r.is_finite()).then(|| r.sqrt())
}

/// Resonant dipole-dipole energy of each dressed pair state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleDipole {
    /// d_± (m): dressed dipole length per unit charge, |d₁|C/(e(1 + C²)).
    pub dipole_length: [f64; 2],
    /// Energy of |++⟩ and |−−⟩ (J).
    pub strength: [f64; 2],
    /// d₁²/(4πε₀R³) (J), the undressed scale.
    pub bare: f64,
}

/// V_dd for |++⟩ and |−−⟩ at separation `distance`.
///
/// The oscillating dipole of a dressed state is ⟨±|d|±⟩ = 2e·d_±, which is
/// the moment entering the pair energy.
pub fn dipole_dipole_strength(dressing: &MWDressing, distance: f64) -> Result<DipoleDipole, InteractionError> {
    if !(distance > 0.0) {
        return Err(InteractionError::InvalidParameters("separation must be positive"));
    }
    let pair = mw_dressed_states(dressing)?;
    let r3 = 4.0 * PI * EPSILON_0 * distance.powi(3);
    let len = |c: f64| dressing.dipole_d1.abs() * c / (E_CHARGE * (1.0 + c * c));
    let dl = [len(pair.plus.mixing), len(pair.minus.mixing)];
    let strength = dl.map(|d| (2.0 * E_CHARGE * d).powi(2) / r3);
    Ok(DipoleDipole { dipole_length: dl, strength, bare: dressing.dipole_d1.powi(2) / r3 })
}

// ---------------------------------------------------------------------------
// Blockade gate

/// Sparse operator as (row, column, value) triples.
type Sparse = Vec<(usize, usize, Complex64)>;

fn sparse_of(m: &DMatrix<Complex64>) -> Sparse {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != Complex64::new(0.0, 0.0) {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Lifts a single-ion operator to the pair space (ion 0 is the slow index).
fn lift(op: &Sparse, dim: usize, ion: usize) -> Sparse {
    let mut out = Vec::with_capacity(op.len() * dim);
    for &(p, q, v) in op {
        for s in 0..dim {
            if ion == 0 {
                out.push((p * dim + s, q * dim + s, v));
            } else {
                out.push((s * dim + p, s * dim + q, v));
            }
        }
    }
    out
}

/// Lindblad evolution with sparse Hamiltonian and collapse operators.
fn sparse_lindblad<H>(hamiltonian: H, collapse: &[Sparse], rho0: &DMatrix<Complex64>, times: &[f64], max_step: f64) -> Result<Vec<DMatrix<Complex64>>, InteractionError>
where
    H: Fn(f64) -> Sparse,
{
    let d = rho0.nrows();
    let mut decay: Sparse = Vec::new();
    for l in collapse {
        for &(a, b, x) in l {
            for &(c2, e, y) in l {
                if a == c2 {
                    decay.push((b, e, x.conj() * y * Complex64::new(0.0, -0.5)));
                }
            }
        }
    }
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let rho = |i: usize, j: usize| Complex64::new(y[2 * (j * d + i)], y[2 * (j * d + i) + 1]);
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        let mut heff = hamiltonian(t);
        heff.extend_from_slice(&decay);
        let mi = Complex64::new(0.0, -1.0);
        for &(i, k, h) in &heff {
            let a = mi * h;
            let b = -mi * h.conj();
            for j in 0..d {
                out[j * d + i] += a * rho(k, j);
                // (ρ H†)_{j,i} picks up ρ_{j,k} conj(H_{i,k})
                out[i * d + j] += b * rho(j, k);
            }
        }
        for l in collapse {
            for &(a, b, x) in l {
                for &(c2, e, z) in l {
                    out[c2 * d + a] += x * rho(b, e) * z.conj();
                }
            }
        }
        for (k, z) in out.iter().enumerate() {
            dy[2 * k] = z.re;
            dy[2 * k + 1] = z.im;
        }
    };
    let y0: Vec<f64> = rho0.iter().flat_map(|z| [z.re, z.im]).collect();
    let opts = OdeOptions { rtol: 1e-9, atol: 1e-10, max_step, ..OdeOptions::default() };
    let ys = integrate(rhs, 0.0, &y0, times, &opts).map_err(DynamicsError::from)?;
    Ok(ys.iter().map(|y| DMatrix::from_iterator(d, d, y.chunks(2).map(|p| Complex64::new(p[0], p[1])))).collect())
}

/// Excitation protocol for the blockade gate.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockadeProtocol {
    /// Double STIRAP on both ions with these pulses; the envelopes of the
    /// ion systems are replaced.
    Stirap(StirapPulses),
    /// Drive with the ions' own envelopes for `duration` (s).
    Direct { duration: f64 },
}

/// Populations of the pair states that carry excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPopulations {
    pub p00: f64,
    pub p0r: f64,
    pub pr0: f64,
    pub prr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockadeOutcome {
    pub times: Vec<f64>,
    /// Pair populations for the |00⟩ initial state.
    pub pairs: Vec<PairPopulations>,
    /// Rydberg population of each ion.
    pub rydberg: Vec<[f64; 2]>,
    /// φ₀₀ − φ₀₁ − φ₁₀ + φ₁₁ after a STIRAP protocol (rad).
    pub conditional_phase: Option<f64>,
    /// Process fidelity of a STIRAP protocol against a controlled-π phase
    /// after local Z corrections.
    pub fidelity: Option<f64>,
}

const ION_DIM: usize = 5;
const SPECTATOR: usize = 0;
const LADDER: usize = 1;
const RYD: usize = LADDER + 2;

struct PairDrive<'a> {
    systems: [&'a ThreeLevelSystem; 2],
    envelopes: Option<(Envelope, Envelope)>,
    phase_switch: f64,
    phase: f64,
    end: f64,
    max_step: f64,
}

impl PairDrive<'_> {
    fn single(&self, ion: usize, t: f64) -> Sparse {
        let sys = self.systems[ion];
        let (o1, o2) = match &self.envelopes {
            Some((a, b)) => (a.at(t), b.at(t)),
            None => (sys.omega1.at(t), sys.omega2.at(t)),
        };
        let phi = if t >= self.phase_switch { sys.phi + self.phase } else { sys.phi };
        let h3 = ladder_hamiltonian(o1, o2, sys.delta1, sys.delta2, phi);
        sparse_of(&h3).into_iter().map(|(i, j, v)| (i + LADDER, j + LADDER, v)).collect()
    }
}

fn pair_index(a: usize, b: usize) -> usize {
    a * ION_DIM + b
}

/// Two ions with ladder excitation and the |rr⟩ pair shifted by `v_dd` (rad/s).
///
/// Each ion carries levels {|1⟩, |0⟩, |e⟩, |r⟩, |g⟩}; |1⟩ is an uncoupled
/// qubit level and |g⟩ collects decay.
pub fn blockade_gate(ion_a: &ThreeLevelSystem, ion_b: &ThreeLevelSystem, v_dd: f64, protocol: &BlockadeProtocol, samples: usize) -> Result<BlockadeOutcome, InteractionError> {
    ion_a.validate()?;
    ion_b.validate()?;
    if !(v_dd >= 0.0 && v_dd.is_finite()) {
        return Err(InteractionError::InvalidParameters("interaction shift must be finite and non-negative"));
    }
    let drive = match protocol {
        BlockadeProtocol::Stirap(p) => {
            if !(p.duration > 0.0 && p.wait >= 0.0 && p.overlap > 0.0 && p.overlap < 1.0) {
                return Err(InteractionError::InvalidParameters("STIRAP timing invalid"));
            }
            PairDrive {
                systems: [ion_a, ion_b],
                envelopes: Some(p.envelopes()),
                phase_switch: p.duration + 0.5 * p.wait,
                phase: p.phase,
                end: 2.0 * p.duration + p.wait,
                max_step: p.width() / 40.0,
            }
        }
        BlockadeProtocol::Direct { duration } => {
            if !(*duration > 0.0) {
                return Err(InteractionError::InvalidParameters("duration must be positive"));
            }
            let feature = [ion_a, ion_b]
                .iter()
                .map(|s| s.omega1.shortest_feature().min(s.omega2.shortest_feature()))
                .fold(f64::INFINITY, f64::min);
            let max_step = (feature / 40.0).min(duration / 20.0);
            PairDrive { systems: [ion_a, ion_b], envelopes: None, phase_switch: f64::INFINITY, phase: 0.0, end: *duration, max_step }
        }
    };
    let d = ION_DIM * ION_DIM;
    let rr = pair_index(RYD, RYD);
    let hamiltonian = |t: f64| {
        let mut h = lift(&drive.single(0, t), ION_DIM, 0);
        h.extend(lift(&drive.single(1, t), ION_DIM, 1));
        if v_dd > 0.0 {
            h.push((rr, rr, Complex64::new(v_dd, 0.0)));
        }
        h
    };
    let mut collapse = Vec::new();
    for (ion, sys) in [ion_a, ion_b].iter().enumerate() {
        for l in ladder_collapse(sys, ION_DIM, LADDER) {
            collapse.push(lift(&sparse_of(&l), ION_DIM, ion));
        }
    }

    let n = samples.max(1);
    let times: Vec<f64> = (0..=n).map(|k| drive.end * k as f64 / n as f64).collect();
    let mut rho0 = DMatrix::zeros(d, d);
    let start = pair_index(LADDER, LADDER);
    rho0[(start, start)] = Complex64::new(1.0, 0.0);
    let traj = sparse_lindblad(&hamiltonian, &collapse, &rho0, &times, drive.max_step)?;
    let pop = |rho: &DMatrix<Complex64>, a: usize, b: usize| rho[(pair_index(a, b), pair_index(a, b))].re;
    let pairs = traj
        .iter()
        .map(|rho| PairPopulations {
            p00: pop(rho, LADDER, LADDER),
            p0r: pop(rho, LADDER, RYD),
            pr0: pop(rho, RYD, LADDER),
            prr: pop(rho, RYD, RYD),
        })
        .collect();
    let rydberg = traj
        .iter()
        .map(|rho| {
            let mut p = [0.0; 2];
            for s in 0..ION_DIM {
                p[0] += pop(rho, RYD, s);
                p[1] += pop(rho, s, RYD);
            }
            p
        })
        .collect();

    if matches!(protocol, BlockadeProtocol::Direct { .. }) {
        return Ok(BlockadeOutcome { times, pairs, rydberg, conditional_phase: None, fidelity: None });
    }
    // process map on the computational states |11⟩, |10⟩, |01⟩, |00⟩
    let comp = [
        pair_index(SPECTATOR, SPECTATOR),
        pair_index(SPECTATOR, LADDER),
        pair_index(LADDER, SPECTATOR),
        pair_index(LADDER, LADDER),
    ];
    let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
    for (a, &ia) in comp.iter().enumerate() {
        for (b, &ib) in comp.iter().enumerate() {
            let mut r0 = DMatrix::zeros(d, d);
            r0[(ia, ib)] = Complex64::new(1.0, 0.0);
            let fin = sparse_lindblad(&hamiltonian, &collapse, &r0, &[drive.end], drive.max_step)?;
            m[a][b] = fin[0][(ia, ib)];
        }
    }
    let phase = |a: usize| (m[a][0] / m[a][0].norm().max(1e-300)).arg();
    let (p10, p01, p00) = (phase(1), phase(2), phase(3));
    let conditional_phase = wrap(p00 - p10 - p01);
    let ideal = [0.0, p10, p01, p10 + p01 + PI].map(|p| Complex64::from_polar(1.0, p));
    let mut f = Complex64::new(0.0, 0.0);
    for a in 0..4 {
        for b in 0..4 {
            f += ideal[a].conj() * ideal[b] * m[a][b];
        }
    }
    Ok(BlockadeOutcome { times, pairs, rydberg, conditional_phase: Some(conditional_phase), fidelity: Some(f.re / 16.0) })
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

// ---------------------------------------------------------------------------
// Electric-kick gate

/// Piecewise-constant field segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickSegment {
    /// Field amplitude (V/m).
    pub amplitude: f64,
    /// Duration (s).
    pub duration: f64,
}

/// Basis order of the two-ion qubit states: ↓↓, ↓↑, ↑↓, ↑↑ (↑ is Rydberg).
pub const KICK_BASIS: [&str; 4] = ["dd", "du", "ud", "uu"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickGateProblem {
    pub pulse: Vec<KickSegment>,
    /// Axial mode frequencies per basis state (rad/s).
    pub mode_frequencies: [[f64; 2]; 4],
    /// Force on each mode per unit field (J per V/m).
    pub kick_couplings: [[f64; 2]; 4],
    /// Energy of the crystal centre per unit field (J per V/m).
    pub com_term: [f64; 4],
}

impl KickGateProblem {
    /// Two ions along the trap axis; the Rydberg state has polarizability `alpha`.
    ///
    /// Modes come from the crystal with per-state tags. The centre term is
    /// −e(z₁ + z₂) at the state's equilibrium, the linear response of the
    /// charges to a uniform field.
    pub fn two_ion(trap: &TrapConfig, species: &IonSpecies, alpha: f64, pulse: Vec<KickSegment>) -> Result<Self, InteractionError> {
        let mut mode_frequencies = [[0.0; 2]; 4];
        let mut kick_couplings = [[0.0; 2]; 4];
        let mut com_term = [0.0; 4];
        for s in 0..4 {
            let tag = |up: bool| if up { ElectronicTag::Rydberg { alpha } } else { ElectronicTag::Ground };
            let ions = [
                CrystalIon { species: species.clone(), tag: tag(s & 2 != 0) },
                CrystalIon { species: species.clone(), tag: tag(s & 1 != 0) },
            ];
            let crystal = linear_chain(trap, &ions)?;
            let modes = normal_modes(&crystal)?;
            let mut axial: Vec<usize> = (0..modes.frequencies.len()).filter(|&k| modes.axis(k) == 2).collect();
            axial.sort_by(|&a, &b| modes.frequencies[a].total_cmp(&modes.frequencies[b]));
            for (j, &k) in axial.iter().take(2).enumerate() {
                let w = modes.frequencies[k];
                mode_frequencies[s][j] = w;
                kick_couplings[s][j] = -crystal
                    .ions
                    .iter()
                    .enumerate()
                    .map(|(i, ion)| E_CHARGE * ion.species.charge_number as f64 * modes.eigenvectors[(3 * i + 2, k)] * (HBAR / (2.0 * ion.species.mass * w)).sqrt())
                    .sum::<f64>();
            }
            com_term[s] = -crystal.ions.iter().zip(&crystal.positions).map(|(ion, p)| E_CHARGE * ion.species.charge_number as f64 * p[2]).sum::<f64>();
        }
        let p = KickGateProblem { pulse, mode_frequencies, kick_couplings, com_term };
        p.validate()?;
        Ok(p)
    }

    pub fn duration(&self) -> f64 {
        self.pulse.iter().map(|s| s.duration).sum()
    }

    pub fn with_pulse(&self, pulse: Vec<KickSegment>) -> Self {
        KickGateProblem { pulse, ..self.clone() }
    }

    fn min_period(&self) -> f64 {
        let w = self.mode_frequencies.iter().flatten().cloned().fold(0.0f64, f64::max);
        2.0 * PI / w
    }

    pub fn validate(&self) -> Result<(), InteractionError> {
        if self.mode_frequencies.iter().flatten().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(InteractionError::InvalidParameters("mode frequencies must be positive"));
        }
        if self.pulse.iter().any(|s| !(s.duration >= 0.0) || !s.amplitude.is_finite()) {
            return Err(InteractionError::InvalidParameters("segments need finite amplitudes and non-negative durations"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KickWarning {
    /// Pulse is not at least ten times shorter than the fastest mode period.
    NotImpulsive { duration: f64, period: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KickGatePhases {
    /// Total phase per basis state (rad, unwrapped).
    pub phases: [f64; 4],
    pub mode_phases: [[f64; 2]; 4],
    pub centre_phases: [f64; 4],
    /// Final displacement of each mode.
    pub displacements: [[Complex64; 2]; 4],
    pub residual_phonons: [[f64; 2]; 4],
    /// Entangling fidelity after local Z corrections, motional ground state.
    pub fidelity: f64,
    pub warnings: Vec<KickWarning>,
}

impl KickGatePhases {
    /// φ↑↑ − φ↑↓ − φ↓↑ + φ↓↓ (rad, unwrapped).
    pub fn conditional_phase(&self) -> f64 {
        self.phases[3] - self.phases[2] - self.phases[1] + self.phases[0]
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// Displacement and phase of one driven mode after a piecewise pulse.
///
/// `drive` per segment is F/ħ (rad/s); the mode starts in its interaction
/// frame at t = `t0`.
pub fn driven_mode(omega: f64, t0: f64, segments: &[(f64, f64)]) -> (Complex64, f64) {
    let mut beta = Complex64::new(0.0, 0.0);
    let mut phase = 0.0;
    let mut t = t0;
    for &(f, tau) in segments {
        let ea = Complex64::from_polar(1.0, omega * t);
        let eb = Complex64::from_polar(1.0, omega * (t + tau));
        let chord = eb - ea;
        phase += (beta.conj() * chord / Complex64::new(0.0, omega)).re * -f + f * f / omega * (tau - (omega * tau).sin() / omega);
        beta -= chord * (f / omega);
        t += tau;
    }
    (beta, phase)
}

/// Fidelity against a controlled phase `target` after local Z corrections,
/// with every mode starting in its ground state.
pub fn kick_fidelity(report: &KickGatePhases, target: f64) -> f64 {
    let delta = wrap(report.conditional_phase() - target);
    let local = [1.0, -1.0, -1.0, 1.0];
    let mut amp = Complex64::new(0.0, 0.0);
    for s in 0..4 {
        let overlap = (-0.5 * (report.residual_phonons[s][0] + report.residual_phonons[s][1])).exp();
        amp += Complex64::from_polar(overlap, local[s] * delta / 4.0);
    }
    (amp / 4.0).norm_sqr()
}

pub fn kick_gate_phases(problem: &KickGateProblem) -> Result<KickGatePhases, InteractionError> {
    problem.validate()?;
    let mut out = KickGatePhases {
        phases: [0.0; 4],
        mode_phases: [[0.0; 2]; 4],
        centre_phases: [0.0; 4],
        displacements: [[Complex64::new(0.0, 0.0); 2]; 4],
        residual_phonons: [[0.0; 2]; 4],
        fidelity: 0.0,
        warnings: Vec::new(),
    };
    let area: f64 = problem.pulse.iter().map(|s| s.amplitude * s.duration).sum();
    for s in 0..4 {
        for j in 0..2 {
            let segs: Vec<(f64, f64)> = problem.pulse.iter().map(|p| (p.amplitude * problem.kick_couplings[s][j] / HBAR, p.duration)).collect();
            let (beta, phi) = driven_mode(problem.mode_frequencies[s][j], 0.0, &segs);
            out.mode_phases[s][j] = phi;
            out.displacements[s][j] = beta;
            out.residual_phonons[s][j] = beta.norm_sqr();
        }
        out.centre_phases[s] = -problem.com_term[s] * area / HBAR;
        out.phases[s] = out.mode_phases[s][0] + out.mode_phases[s][1] + out.centre_phases[s];
    }
    out.fidelity = kick_fidelity(&out, PI);
    let period = problem.min_period();
    let duration = problem.duration();
    if duration > 0.1 * period {
        out.warnings.push(KickWarning::NotImpulsive { duration, period });
    }
    Ok(out)
}

/// Optimization targets for the kick waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickTargets {
    pub segments: usize,
    /// Fixed total duration (s); durations are optimized when absent.
    pub total_duration: Option<f64>,
    /// φ↑↑ − φ↓↓ target (rad).
    pub phase: f64,
    /// Score the phase table after single-ion Z rotations.
    pub local_corrections: bool,
    pub restarts: usize,
    pub seed: u64,
    pub max_evaluations: usize,
}

impl Default for KickTargets {
    fn default() -> Self {
        KickTargets { segments: 1, total_duration: None, phase: PI, local_corrections: true, restarts: 8, seed: 1, max_evaluations: 4000 }
    }
}

/// Phase branches tried when scaling a pulse shape.
const BRANCHES: i64 = 3;

/// Weights on (target phase, residual phonons, symmetry, symmetry).
pub const KICK_WEIGHTS: [f64; 4] = [1.0, 10.0, 1.0, 1.0];

/// Phase table after the local Z rotations that zero φ↓↑ − φ↓↓ and φ↑↓ − φ↓↓.
pub fn locally_corrected(phases: &[f64; 4]) -> [f64; 4] {
    let (a, b) = (phases[2] - phases[0], phases[1] - phases[0]);
    [phases[0], phases[1] - b, phases[2] - a, phases[3] - a - b]
}

/// Weighted terms whose squares sum to the kick objective.
pub fn kick_residuals(report: &KickGatePhases, target_phase: f64, local_corrections: bool) -> Vec<f64> {
    let p = if local_corrections { locally_corrected(&report.phases) } else { report.phases };
    let mut r = vec![KICK_WEIGHTS[0].sqrt() * wrap(p[3] - p[0] - target_phase)];
    r.extend(report.residual_phonons.iter().flatten().map(|n| KICK_WEIGHTS[1].sqrt() * n));
    r.push(KICK_WEIGHTS[2].sqrt() * wrap(p[0] - p[2]));
    r.push(KICK_WEIGHTS[3].sqrt() * wrap(p[0] - p[1]));
    r
}

pub fn kick_objective(report: &KickGatePhases, target_phase: f64, local_corrections: bool) -> f64 {
    kick_residuals(report, target_phase, local_corrections).iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KickOptimization {
    pub pulse: Vec<KickSegment>,
    pub report: KickGatePhases,
    pub objective: f64,
    pub infidelity: f64,
}

pub fn optimize_kick(template: &KickGateProblem, targets: &KickTargets) -> Result<KickOptimization, InteractionError> {
    template.validate()?;
    let n = targets.segments;
    if n == 0 || n > 16 {
        return Err(InteractionError::InvalidParameters("segment count must lie in 1..=16"));
    }
    if let Some(t) = targets.total_duration {
        if !(t > 0.0) {
            return Err(InteractionError::InvalidParameters("total duration must be positive"));
        }
    }
    let w_ref = template.mode_frequencies[0][0];
    let k_ref = template.kick_couplings[0][0].abs().max(1e-300);
    let tau = 2.0 * PI / w_ref;
    // field giving one radian of mode phase over one period
    let a_ref = HBAR * (w_ref / tau).sqrt() / k_ref;
    let free = targets.total_duration.is_none();
    let base_total = targets.total_duration.unwrap_or_else(|| {
        let d = template.duration();
        if d > 0.0 {
            d
        } else {
            tau
        }
    });
    let decode = |x: &[f64]| -> Vec<KickSegment> {
        let durations: Vec<f64> = if free {
            x[n..].iter().map(|d| d.abs() * tau).collect()
        } else {
            vec![base_total / n as f64; n]
        };
        (0..n).map(|i| KickSegment { amplitude: x[i] * a_ref, duration: durations[i] }).collect()
    };
    // The conditional phase of a fixed shape scales as the amplitude squared,
    // so each shape is evaluated at the scales that put it on a target branch.
    let scaled = |x: &[f64]| -> (f64, f64) {
        let base = template.with_pulse(decode(x));
        let Ok(rep) = kick_gate_phases(&base) else { return (f64::INFINITY, 1.0) };
        let c = rep.conditional_phase();
        if c == 0.0 || !c.is_finite() {
            return (kick_objective(&rep, targets.phase, targets.local_corrections), 1.0);
        }
        let mut best = (f64::INFINITY, 1.0);
        for m in -BRANCHES..=BRANCHES {
            let q = (targets.phase + 2.0 * PI * m as f64) / c;
            if q <= 0.0 {
                continue;
            }
            let s = q.sqrt();
            let pulse: Vec<KickSegment> = base.pulse.iter().map(|g| KickSegment { amplitude: g.amplitude * s, ..*g }).collect();
            if let Ok(r) = kick_gate_phases(&template.with_pulse(pulse)) {
                let v = kick_objective(&r, targets.phase, targets.local_corrections);
                if v < best.0 {
                    best = (v, s);
                }
            }
        }
        best
    };
    let evaluate = |x: &[f64]| scaled(x).0;

    let mut rng = SplitMix(targets.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for r in 0..targets.restarts.max(1) {
        let mut x: Vec<f64> = (0..n).map(|i| if r == 0 || i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + 0.5 * rng.next())).collect();
        if r == 0 {
            x.iter_mut().for_each(|v| *v = 1.0);
        }
        if free {
            let spread = if r == 0 { 0.0 } else { 0.3 };
            x.extend((0..n).map(|_| base_total / (n as f64 * tau) * (1.0 + spread * rng.next())));
        }
        starts.push(x);
    }
    let opts = SimplexOptions { max_evaluations: targets.max_evaluations, ftol: 1e-14, xtol: 1e-12 };
    let mut best: Option<(f64, Vec<KickSegment>)> = None;
    for x0 in &starts {
        let steps: Vec<f64> = x0.iter().map(|v| 0.05 * v.abs().max(1e-3)).collect();
        let mut out = nelder_mead(evaluate, x0, &steps, &opts);
        for _ in 0..3 {
            let steps: Vec<f64> = out.x.iter().map(|v| 0.01 * v.abs().max(1e-4)).collect();
            let next = nelder_mead(evaluate, &out.x, &steps, &opts);
            if next.value >= out.value {
                break;
            }
            out = next;
        }
        // least-squares polish with the amplitude scale as a free parameter
        let sc = scaled(&out.x).1;
        let mut p0 = out.x.clone();
        p0.iter_mut().take(n).for_each(|a| *a *= sc);
        let lm_res = |p: &[f64]| -> Vec<f64> {
            match kick_gate_phases(&template.with_pulse(decode(p))) {
                Ok(r) => kick_residuals(&r, targets.phase, targets.local_corrections),
                Err(_) => vec![1e6; 12],
            }
        };
        let lm_opts = LmOptions { max_iterations: 200, max_condition: 1e300, diff_step: 1e-7, ..LmOptions::default() };
        let unit: Vec<f64> = p0.iter().map(|v| v.abs().max(1e-6)).collect();
        let scaled_pulse = |x: &[f64], sc: f64| -> Vec<KickSegment> { decode(x).into_iter().map(|g| KickSegment { amplitude: g.amplitude * sc, ..g }).collect() };
        let mut candidate = (out.value, scaled_pulse(&out.x, sc));
        if let Ok(fit) = levenberg_marquardt(lm_res, &p0, &unit, &lm_opts) {
            let v: f64 = fit.residuals.iter().map(|r| r * r).sum();
            if v < candidate.0 {
                candidate = (v, decode(&fit.params));
            }
        }
        if best.as_ref().map_or(true, |b| candidate.0 < b.0) {
            best = Some(candidate);
        }
    }
    let zero = kick_gate_phases(&template.with_pulse(Vec::new()))?;
    let zero_value = kick_objective(&zero, targets.phase, targets.local_corrections);
    if best.as_ref().map_or(true, |b| zero_value <= b.0) {
        return Ok(KickOptimization { pulse: Vec::new(), infidelity: 1.0 - kick_fidelity(&zero, targets.phase), objective: zero_value, report: zero })
            .and_then(|o| if o.infidelity > 0.1 { Err(InteractionError::NoFeasiblePulse { infidelity: o.infidelity }) } else { Ok(o) });
    }
    let (objective, pulse) = best.expect("at least one start");
    let report = kick_gate_phases(&template.with_pulse(pulse.clone()))?;
    let infidelity = 1.0 - kick_fidelity(&report, targets.phase);
    if infidelity > 0.1 {
        return Err(InteractionError::NoFeasiblePulse { infidelity });
    }
    Ok(KickOptimization { pulse, report, objective, infidelity })
}

// ---------------------------------------------------------------------------
// Excitation transport

/// J = −2Mω_z²d₂²/(9e²) (J) for transition dipole `d2` (C·m).
pub fn exchange_scale(mass: f64, omega_z: f64, d2: f64) -> f64 {
    -2.0 * mass * omega_z * omega_z * d2 * d2 / (9.0 * E_CHARGE * E_CHARGE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportBasis {
    /// States with one excitation.
    SingleExcitation,
    /// Full 2^N spin space.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    /// Exchange scale J (J); site coupling is J/u³ with u the spacing in units of l.
    pub exchange: f64,
    /// Site shift per unit Σ_j 1/u_ij³ (J).
    pub onsite: f64,
    pub basis: TransportBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub times: Vec<f64>,
    /// ⟨S_z⟩ per time and site.
    pub magnetization: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub exchange: f64,
}

pub const TRANSPORT_SECTOR_LIMIT: usize = 14;
pub const TRANSPORT_FULL_LIMIT: usize = 12;

/// Coupling matrix J/u_ij³ and site shifts of a chain along z (J).
pub fn transport_hamiltonian(chain: &Crystal, params: &TransportParams) -> DMatrix<f64> {
    let n = chain.positions.len();
    let u: Vec<f64> = chain.positions.iter().map(|p| p[2] / chain.length_scale).collect();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let inv = 1.0 / (u[i] - u[j]).abs().powi(3);
                h[(i, j)] = params.exchange * inv;
                h[(i, i)] += params.onsite * inv;
            }
        }
    }
    h
}

/// Evolves |↑↓↓…⟩ (or the reversed chain when `from_last`) under XY exchange.
pub fn spin_transport(chain: &Crystal, params: &TransportParams, times: &[f64], from_last: bool) -> Result<TransportResult, InteractionError> {
    let n = chain.positions.len();
    if n == 0 {
        return Err(InteractionError::InvalidParameters("empty chain"));
    }
    let limit = match params.basis {
        TransportBasis::SingleExcitation => TRANSPORT_SECTOR_LIMIT,
        TransportBasis::Full => TRANSPORT_FULL_LIMIT,
    };
    if n > limit {
        return Err(InteractionError::TooLarge { n, limit });
    }
    if params.exchange == 0.0 && params.onsite == 0.0 {
        return Err(InteractionError::InvalidParameters("exchange scale must be non-zero"));
    }
    let site_h = transport_hamiltonian(chain, params) / HBAR;
    let start = if from_last { n - 1 } else { 0 };
    let (dim, h, psi0, occupation): (usize, DMatrix<f64>, usize, Box<dyn Fn(usize, usize) -> bool>) = match params.basis {
        TransportBasis::SingleExcitation => (n, site_h, start, Box::new(|state: usize, site: usize| state == site)),
        TransportBasis::Full => {
            let dim = 1usize << n;
            let mut h = DMatrix::zeros(dim, dim);
            for s in 0..dim {
                for i in 0..n {
                    if s >> i & 1 == 1 {
                        h[(s, s)] += site_h[(i, i)];
                        for j in 0..n {
                            if j != i && s >> j & 1 == 0 {
                                let t = s ^ (1 << i) ^ (1 << j);
                                h[(t, s)] += site_h[(i, j)];
                            }
                        }
                    }
                }
            }
            (dim, h, 1 << start, Box::new(|state: usize, site: usize| state >> site & 1 == 1))
        }
    };
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let c0: Vec<f64> = (0..dim).map(|k| v[(psi0, k)]).collect();
    let mut magnetization = Vec::with_capacity(times.len());
    let mut total = Vec::with_capacity(times.len());
    for &t in times {
        let coeffs: Vec<Complex64> = (0..dim).map(|k| Complex64::from_polar(c0[k], -eig.eigenvalues[k] * t)).collect();
        let mut sz = vec![-0.5; n];
        for s in 0..dim {
            let mut a = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                a += coeffs[k] * v[(s, k)];
            }
            let p = a.norm_sqr();
            for (site, m) in sz.iter_mut().enumerate() {
                if occupation(s, site) {
                    *m += p;
                }
            }
        }
        total.push(sz.iter().sum());
        magnetization.push(sz);
    }
    Ok(TransportResult { times: times.to_vec(), magnetization, total, exchange: params.exchange })
}

/// First local maximum of ⟨S_z⟩ on `site` above `threshold`, with parabolic refinement.
pub fn first_arrival(result: &TransportResult, site: usize, threshold: f64) -> Option<f64> {
    let y: Vec<f64> = result.magnetization.iter().map(|m| m[site]).collect();
    let t = &result.times;
    (1..y.len().saturating_sub(1)).find(|&i| y[i] > threshold && y[i] >= y[i - 1] && y[i] > y[i + 1]).map(|i| {
        let denom = y[i - 1] - 2.0 * y[i] + y[i + 1];
        let shift = if denom != 0.0 { 0.5 * (y[i - 1] - y[i + 1]) / denom } else { 0.0 };
        t[i] + shift * (t[i + 1] - t[i])
    })
}

// ---------------------------------------------------------------------------
// Plaquette couplings

/// Spin-dependent Raman drive of a planar crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanDrive {
    /// Ω_I per ion (rad/s).
    pub rabi: Vec<f64>,
    /// Optional spin-flip drive per ion for J_⊥ (rad/s).
    pub rabi_perp: Option<Vec<f64>>,
    /// Effective wavevector (1/m); its dominant axis selects the transverse modes.
    pub k_effective: [f64; 3],
    /// Beat-note frequency ω_I (rad/s); δ_m = ω_m − ω_I.
    pub beat: f64,
    pub nbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaquetteCouplings {
    /// J_z (rad/s).
    pub jz: DMatrix<f64>,
    pub jperp: Option<DMatrix<f64>>,
    /// Indices of the transverse modes used.
    pub modes: Vec<usize>,
    pub detunings: Vec<f64>,
    /// (mode, ion, η√(n̄+1)) entries at or above 0.3.
    pub lamb_dicke_violations: Vec<(usize, usize, f64)>,
}

fn coupling_matrix(rabi: &[f64], eta: &[Vec<f64>], detunings: &[f64]) -> DMatrix<f64> {
    let n = rabi.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        eta.iter().zip(detunings).map(|(e, d)| 4.0 * rabi[i] * rabi[j] * e[i] * e[j] / d).sum()
    })
}

pub fn plaquette_couplings(crystal: &Crystal, drive: &RamanDrive) -> Result<PlaquetteCouplings, InteractionError> {
    let n = crystal.ions.len();
    if drive.rabi.len() != n || drive.rabi_perp.as_ref().is_some_and(|r| r.len() != n) {
        return Err(InteractionError::InvalidParameters("one Rabi frequency per ion required"));
    }
    let modes: ModeDecomposition = normal_modes(crystal)?;
    let k = drive.k_effective;
    let axis = (0..3).max_by(|&a, &b| k[a].abs().total_cmp(&k[b].abs())).unwrap();
    let chosen: Vec<usize> = (0..modes.frequencies.len()).filter(|&m| modes.axis(m) == axis).collect();
    let mut detunings = Vec::with_capacity(chosen.len());
    let mut eta = Vec::with_capacity(chosen.len());
    let mut violations = Vec::new();
    for &m in &chosen {
        let w = modes.frequencies[m];
        let d = w - drive.beat;
        if d.abs() < 1e-3 * w {
            return Err(InteractionError::ResonantMode { mode: m, detuning: d });
        }
        detunings.push(d);
        let e: Vec<f64> = (0..n).map(|i| lamb_dicke_mode(crystal, &modes, m, i, k)).collect();
        for (i, v) in e.iter().enumerate() {
            let s = v.abs() * (drive.nbar + 1.0).sqrt();
            if s >= 0.3 {
                violations.push((m, i, s));
            }
        }
        eta.push(e);
    }
    Ok(PlaquetteCouplings {
        jz: coupling_matrix(&drive.rabi, &eta, &detunings),
        jperp: drive.rabi_perp.as_ref().map(|r| coupling_matrix(r, &eta, &detunings)),
        modes: chosen,
        detunings,
        lamb_dicke_violations: violations,
    })
}

/// max|J_ij − J̄|/|J̄| over pairs of `sites`.
pub fn uniformity(j: &DMatrix<f64>, sites: &[usize]) -> f64 {
    let mut vals = Vec::new();
    for (a, &i) in sites.iter().enumerate() {
        for &k in &sites[a + 1..] {
            vals.push(j[(i, k)]);
        }
    }
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular;

    #[test]
    fn point_charges_reduce_to_coulomb() {
        let v = pair_potential_exact([0.0, 0.0, 0.0], [0.0, 0.0, 5e-6], [0.0; 3], [0.0; 3]).unwrap();
        assert!((v - coulomb_e2() / 5e-6).abs() < 1e-12 * v);
        assert_eq!(
            pair_potential_exact([0.0; 3], [0.0, 0.0, 1e-6], [0.0, 0.0, 1e-6], [0.0; 3]),
            Err(InteractionError::CoincidentCharges)
        );
    }

    #[test]
    fn multipole_terms_match_exact_sum() {
        let ri = [3e-9, -1e-9, 2e-9];
        let rj = [-2e-9, 1.5e-9, 1e-9];
        let (a, b) = ([0.0, 0.0, 0.0], [0.5e-6, 0.0, 4e-6]);
        let exact = pair_potential_exact(a, b, ri, rj).unwrap();
        let m = pair_potential_multipole(a, b, ri, rj).unwrap();
        let ratio: f64 = 4e-9 / 4e-6;
        assert!((exact - m.total()).abs() < 10.0 * ratio.powi(3) * exact.abs());
        let same = pair_potential_multipole(a, b, ri, ri).unwrap();
        assert_eq!(same.dipole_charge, 0.0);
        assert!(matches!(pair_potential_multipole(a, b, [1e-6, 0.0, 0.0], rj), Err(InteractionError::ExpansionInvalid { .. })));
    }

    #[test]
    fn dressing_identities() {
        let d = MWDressing { rabi_mw: angular(400e6), delta_s: angular(136e6), delta_p: angular(293e6), dipole_d1: 4.07e-27, alpha_s: 1.0, alpha_p: -2.0 };
        let p = mw_dressed_states(&d).unwrap();
        assert!((p.plus.mixing * p.minus.mixing + 1.0).abs() < 1e-12);
        assert!((p.minus.mixing + 0.682).abs() < 2e-3);
        let resonant = MWDressing { delta_p: d.delta_s, ..d };
        let q = mw_dressed_states(&resonant).unwrap();
        assert!((q.plus.mixing - 1.0).abs() < 1e-12 && (q.minus.mixing + 1.0).abs() < 1e-12);
        let v = dipole_dipole_strength(&resonant, 4e-6).unwrap();
        assert!((v.strength[0] - v.strength[1]).abs() < 1e-12 * v.strength[0]);
        let far = dipole_dipole_strength(&resonant, 8e-6).unwrap();
        assert!((far.strength[0] / v.strength[0] - 0.125).abs() < 1e-14);
    }

    #[test]
    fn zero_polarizability_dressing() {
        let c0 = zero_polarizability_mixing(0.4624, -1.0).unwrap();
        assert!((c0 - 0.68).abs() < 1e-12);
        let om = angular(100e6);
        let d = MWDressing { rabi_mw: om, delta_s: 0.0, delta_p: detuning_for_mixing(om, c0), dipole_d1: 1e-27, alpha_s: 0.4624, alpha_p: -1.0 };
        let p = mw_dressed_states(&d).unwrap();
        assert!((p.plus.mixing - c0).abs() < 1e-12);
        assert!(p.plus.polarizability.abs() < 1e-12);
    }

    #[test]
    fn closed_form_kick_matches_constant_force() {
        // one full period of constant force closes the loop with phase f²T/ω
        let w = angular(1e6);
        let f = 3e5;
        let t = 2.0 * PI / w;
        let (beta, phase) = driven_mode(w, 0.0, &[(f, t)]);
        assert!(beta.norm() < 1e-9 * f / w);
        assert!((phase - f * f * t / w).abs() < 1e-10 * phase);
    }

    #[test]
    fn transport_two_sites_flop() {
        let trap = TrapConfig::from_secular(&IonSpecies::calcium40(), angular(3e6), angular(1e6), angular(30e6)).unwrap();
        let chain = linear_chain(&trap, &[CrystalIon::ground(IonSpecies::calcium40()), CrystalIon::ground(IonSpecies::calcium40())]).unwrap();
        let j = 1e-30;
        let params = TransportParams { exchange: j, onsite: 0.0, basis: TransportBasis::SingleExcitation };
        let u = (chain.positions[1][2] - chain.positions[0][2]) / chain.length_scale;
        let j12 = j / u.powi(3) / HBAR;
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.05 / j12).collect();
        let r = spin_transport(&chain, &params, &times, false).unwrap();
        for (t, m) in times.iter().zip(&r.magnetization) {
            assert!((m[0] - ((j12 * t).cos().powi(2) - 0.5)).abs() < 1e-10);
        }
        let full = spin_transport(&chain, &TransportParams { basis: TransportBasis::Full, ..params }, &times, false).unwrap();
        for (a, b) in r.magnetization.iter().zip(&full.magnetization) {
            assert!((a[1] - b[1]).abs() < 1e-10);
        }
    }

    fn toy_problem(pulse: Vec<KickSegment>) -> KickGateProblem {
        let w = angular(1e6);
        KickGateProblem {
            pulse,
            mode_frequencies: [[w, 1.7 * w], [1.001 * w, 1.71 * w], [1.001 * w, 1.71 * w], [1.002 * w, 1.72 * w]],
            kick_couplings: [[-2e-27, 0.0], [-2e-27, 1e-30], [-2e-27, 1e-30], [-2e-27, 0.0]],
            com_term: [0.0, 1e-28, -1e-28, 0.0],
        }
    }

    #[test]
    fn kick_phases_compose_over_free_evolution() {
        let a = [(2e5, 3e-8), (-1e5, 5e-8)];
        let b = [(4e5, 2e-8)];
        let w = angular(1.3e6);
        let (ba, pa) = driven_mode(w, 0.0, &a);
        let gap = 2.1e-7;
        let start_b = 8e-8 + gap;
        let (bb, pb) = driven_mode(w, start_b, &b);
        let (bt, pt) = driven_mode(w, 0.0, &[a[0], a[1], (0.0, gap), b[0]]);
        assert!((bt - (ba + bb)).norm() < 1e-12 * bt.norm());
        assert!((pt - (pa + pb + (ba.conj() * bb).im)).abs() < 1e-10 * pt.abs());
    }

    #[test]
    fn kick_phase_scaling_and_zero_pulse() {
        let zero = kick_gate_phases(&toy_problem(vec![])).unwrap();
        assert!(zero.phases.iter().all(|p| *p == 0.0));
        assert!(zero.residual_phonons.iter().flatten().all(|r| *r == 0.0));
        let seg = |a: f64| vec![KickSegment { amplitude: a, duration: 2e-7 }];
        let p1 = kick_gate_phases(&toy_problem(seg(10.0))).unwrap();
        let p2 = kick_gate_phases(&toy_problem(seg(20.0))).unwrap();
        for s in [0, 3] {
            assert!((p2.mode_phases[s][0] / p1.mode_phases[s][0] - 4.0).abs() < 1e-12);
        }
        assert!(p1.warnings.iter().any(|w| matches!(w, KickWarning::NotImpulsive { .. })));
        let short = kick_gate_phases(&toy_problem(vec![KickSegment { amplitude: 10.0, duration: 1e-9 }])).unwrap();
        assert!(short.warnings.is_empty());
        let target = KickTargets { phase: 0.0, ..KickTargets::default() };
        let opt = optimize_kick(&toy_problem(vec![]), &target).unwrap();
        assert!(opt.objective < 1e-20);
    }

    #[test]
    fn full_period_closes_loop() {
        let w = angular(1e6);
        let mut p = toy_problem(vec![KickSegment { amplitude: 50.0, duration: 2.0 * PI / w }]);
        p.mode_frequencies[0] = [w, 2.0 * w];
        let r = kick_gate_phases(&p).unwrap();
        assert!(r.residual_phonons[0][0] < 1e-18 * r.mode_phases[0][0].abs().max(1.0));
    }

    #[test]
    fn local_correction_keeps_conditional_phase() {
        let p = [0.3, 1.1, -0.4, 2.5];
        let c = locally_corrected(&p);
        assert!((c[1] - c[0]).abs() < 1e-15 && (c[2] - c[0]).abs() < 1e-15);
        assert!(((c[3] - c[0]) - (p[3] - p[2] - p[1] + p[0])).abs() < 1e-15);
    }

    #[test]
    fn single_mode_couplings_are_rank_one() {
        let ca = IonSpecies::calcium40();
        let trap = TrapConfig::from_secular(&ca, angular(3e6), angular(1e6), angular(30e6)).unwrap();
        let chain = linear_chain(&trap, &vec![CrystalIon::ground(ca); 4]).unwrap();
        let modes = normal_modes(&chain).unwrap();
        let com = (0..12).find(|&k| modes.axis(k) == 2).unwrap();
        let drive = RamanDrive { rabi: vec![angular(50e3); 4], rabi_perp: None, k_effective: [0.0, 0.0, 1.5e7], beat: modes.frequencies[com] - angular(2e3), nbar: 0.0 };
        let j = plaquette_couplings(&chain, &drive).unwrap();
        assert!(j.jz.iter().enumerate().all(|(k, v)| k % 5 == 0 || *v > 0.0));
        let off: Vec<f64> = (0..4).flat_map(|i| (0..4).filter(move |&k| k != i).map(move |k| (i, k))).map(|(i, k)| j.jz[(i, k)]).collect();
        let mean = off.iter().sum::<f64>() / off.len() as f64;
        assert!(off.iter().all(|v| (v - mean).abs() < 1e-2 * mean));
        let resonant = RamanDrive { beat: modes.frequencies[com], ..drive };
        assert!(matches!(plaquette_couplings(&chain, &resonant), Err(InteractionError::ResonantMode { .. })));
    }

    #[test]
    fn wrap_range() {
        for x in [-7.0, -PI, 0.0, PI, 3.0 * PI, 10.0] {
            let y = wrap(x);
            assert!(y > -PI - 1e-15 && y <= PI + 1e-15);
            assert!(((x - y) / (2.0 * PI)).fract().abs() < 1e-12 || ((x - y) / (2.0 * PI)).fract().abs() > 1.0 - 1e-12);
        }
    }
}
