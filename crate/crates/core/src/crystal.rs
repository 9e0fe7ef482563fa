//! Ion Coulomb crystals: equilibrium configurations, normal modes with
//! state-dependent confinement and charge, Lamb–Dicke factors, sideband
//! strengths, the zigzag transition and Franck–Condon factors.

use crate::constants::{E_CHARGE, EPSILON_0, HBAR};
use crate::numerics::special::{laguerre, ln_factorial};
use crate::trap::{secular_frequencies, shifted_secular_frequencies, IonSpecies, TrapConfig, TrapError};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error("ion {index} unstable: {source}")]
    Unstable { index: usize, source: TrapError },
    #[error("equilibrium search did not converge (gradient {gradient:.3e})")]
    NoConvergence { gradient: f64 },
    #[error("ions {a} and {b} collapsed (distance {distance:.3e} l)")]
    CollapsedPair { a: usize, b: usize, distance: f64 },
    #[error("configuration is not an equilibrium (gradient {gradient:.3e})")]
    NotAtEquilibrium { gradient: f64 },
    #[error("imaginary mode with eigenvalue {eigenvalue:.3e} (s^-2)")]
    ImaginaryMode { eigenvalue: f64, eigenvector: Vec<f64> },
    #[error("no lower motional state for the red sideband at n = 0")]
    NoLowerState,
    #[error("not applicable: {0}")]
    NotApplicable(&'static str),
    #[error("empty crystal")]
    Empty,
}

/// Electronic state of an ion entering the crystal potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElectronicTag {
    Ground,
    /// Rydberg state with static polarizability α (C² m² J⁻¹).
    Rydberg { alpha: f64 },
    /// Doubly charged core (𝒵 = 2) with the same mass.
    DoublyCharged,
    /// Explicit per-axis secular frequencies (rad/s), e.g. optically pinned ions.
    Frequencies { omega: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalIon {
    pub species: IonSpecies,
    pub tag: ElectronicTag,
}

impl CrystalIon {
    pub fn ground(species: IonSpecies) -> Self {
        Self { species, tag: ElectronicTag::Ground }
    }

    pub fn charge_number(&self) -> f64 {
        match self.tag {
            ElectronicTag::DoublyCharged => 2.0,
            _ => self.species.charge_number as f64,
        }
    }

    /// Harmonic frequencies of this ion alone in `trap`.
    pub fn frequencies(&self, trap: &TrapConfig) -> Result<[f64; 3], TrapError> {
        match &self.tag {
            ElectronicTag::Ground => Ok(secular_frequencies(trap, &self.species)?.as_array()),
            ElectronicTag::DoublyCharged => Ok(secular_frequencies(trap, &self.species.with_charge(2))?.as_array()),
            ElectronicTag::Rydberg { alpha } => {
                let nu2 = -alpha / (2.0 * E_CHARGE * E_CHARGE);
                Ok(shifted_secular_frequencies(trap, &self.species, nu2)?.as_array())
            }
            ElectronicTag::Frequencies { omega } => {
                if omega.iter().all(|w| *w > 0.0) {
                    Ok(*omega)
                } else {
                    Err(TrapError::Invalid("override frequencies must be positive"))
                }
            }
        }
    }
}

/// A crystal with equilibrium positions (m), ordered by z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crystal {
    pub ions: Vec<CrystalIon>,
    pub trap: TrapConfig,
    pub positions: Vec<[f64; 3]>,
    /// l = (𝒵²e²/(4πε₀Mω_z²))^{1/3} of the first ion (m).
    pub length_scale: f64,
}

/// Normal modes: ascending frequencies and mass-weighted orthonormal eigenvectors
/// (column k belongs to frequency k; row 3i+a is ion i, axis a).
#[derive(Debug, Clone)]
pub struct ModeDecomposition {
    pub frequencies: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl ModeDecomposition {
    /// Displacement weight of each ion in mode k (sums to one).
    pub fn ion_weights(&self, k: usize) -> Vec<f64> {
        let n = self.eigenvectors.nrows() / 3;
        (0..n)
            .map(|i| (0..3).map(|a| self.eigenvectors[(3 * i + a, k)].powi(2)).sum())
            .collect()
    }

    /// Dominant axis (0, 1, 2) of mode k.
    pub fn axis(&self, k: usize) -> usize {
        let n = self.eigenvectors.nrows() / 3;
        let mut w = [0.0; 3];
        for i in 0..n {
            for (a, wa) in w.iter_mut().enumerate() {
                *wa += self.eigenvectors[(3 * i + a, k)].powi(2);
            }
        }
        (0..3).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap()
    }
}

/// Dimensionless model: lengths in l, energies in e²/(4πε₀l), masses in M_ref.
struct Model {
    kappa: Vec<[f64; 3]>,
    charge: Vec<f64>,
    mass: Vec<f64>,
    omega_unit: f64,
    length: f64,
}

fn length_scale(z: f64, mass: f64, omega_z: f64) -> f64 {
    (z * z * E_CHARGE * E_CHARGE / (4.0 * PI * EPSILON_0 * mass * omega_z * omega_z)).cbrt()
}

impl Model {
    fn build(trap: &TrapConfig, ions: &[CrystalIon]) -> Result<Self, CrystalError> {
        let first = ions.first().ok_or(CrystalError::Empty)?;
        let ref_w = secular_frequencies(trap, &first.species)
            .map_err(|source| CrystalError::Unstable { index: 0, source })?;
        let z_ref = first.species.charge_number as f64;
        let m_ref = first.species.mass;
        let l = length_scale(z_ref, m_ref, ref_w.z);
        let c = 4.0 * PI * EPSILON_0 * l.powi(3) / (E_CHARGE * E_CHARGE);
        let mut kappa = Vec::with_capacity(ions.len());
        for (index, ion) in ions.iter().enumerate() {
            let w = ion.frequencies(trap).map_err(|source| CrystalError::Unstable { index, source })?;
            let m = ion.species.mass;
            kappa.push([m * w[0] * w[0] * c, m * w[1] * w[1] * c, m * w[2] * w[2] * c]);
        }
        Ok(Self {
            kappa,
            charge: ions.iter().map(|i| i.charge_number()).collect(),
            mass: ions.iter().map(|i| i.species.mass / m_ref).collect(),
            omega_unit: ref_w.z / z_ref,
            length: l,
        })
    }

    fn n(&self) -> usize {
        self.charge.len()
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let n = self.n();
        let mut e = 0.0;
        for i in 0..n {
            for a in 0..3 {
                e += 0.5 * self.kappa[i][a] * u[3 * i + a].powi(2);
            }
            for j in i + 1..n {
                let d = dist(u, i, j);
                e += self.charge[i] * self.charge[j] / d;
            }
        }
        e
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = vec![0.0; 3 * n];
        for i in 0..n {
            for a in 0..3 {
                g[3 * i + a] += self.kappa[i][a] * u[3 * i + a];
            }
            for j in i + 1..n {
                let d = dist(u, i, j);
                let f = self.charge[i] * self.charge[j] / d.powi(3);
                for a in 0..3 {
                    let da = u[3 * i + a] - u[3 * j + a];
                    g[3 * i + a] -= f * da;
                    g[3 * j + a] += f * da;
                }
            }
        }
        g
    }

    fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            for a in 0..3 {
                h[(3 * i + a, 3 * i + a)] += self.kappa[i][a];
            }
            for j in i + 1..n {
                let d = dist(u, i, j);
                let qq = self.charge[i] * self.charge[j];
                let diff = [u[3 * i] - u[3 * j], u[3 * i + 1] - u[3 * j + 1], u[3 * i + 2] - u[3 * j + 2]];
                for a in 0..3 {
                    for b in 0..3 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let v = qq * (3.0 * diff[a] * diff[b] / d.powi(5) - delta / d.powi(3));
                        h[(3 * i + a, 3 * i + b)] += v;
                        h[(3 * j + a, 3 * j + b)] += v;
                        h[(3 * i + a, 3 * j + b)] -= v;
                        h[(3 * j + a, 3 * i + b)] -= v;
                    }
                }
            }
        }
        h
    }
}

fn dist(u: &[f64], i: usize, j: usize) -> f64 {
    let dx = u[3 * i] - u[3 * j];
    let dy = u[3 * i + 1] - u[3 * j + 1];
    let dz = u[3 * i + 2] - u[3 * j + 2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Deterministic jitter source for seeding.
pub(crate) struct SplitMix(pub(crate) u64);

impl SplitMix {
    pub(crate) fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

const GRAD_TOL: f64 = 1e-12;

/// Damped Newton descent with eigenvalue-regularized Hessian; ends at a minimum.
fn minimize(model: &Model, mut u: Vec<f64>) -> Result<Vec<f64>, CrystalError> {
    let n = u.len();
    let mut g = model.gradient(&u);
    for _ in 0..200 {
        let gn = norm(&g);
        if gn < GRAD_TOL {
            return Ok(u);
        }
        let h = model.hessian(&u);
        let eig = SymmetricEigen::new(h);
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let gv = DVector::from_column_slice(&g);
        let proj = eig.eigenvectors.transpose() * &gv;
        let mut step = DVector::zeros(n);
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            let reg = if lam > 1e-10 * lmax { lam } else { lam.abs().max(1e-3 * lmax) };
            step -= eig.eigenvectors.column(k) * (proj[k] / reg);
        }
        let e0 = model.energy(&u);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let et = model.energy(&trial);
            let gt = model.gradient(&trial);
            if et.is_finite() && (et < e0 - 1e-4 * t * gv.dot(&step).abs() || (et <= e0 + 1e-14 * e0.abs() && norm(&gt) < gn)) {
                u = trial;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let gn = norm(&g);
    if gn < GRAD_TOL * 10.0 {
        Ok(u)
    } else {
        Err(CrystalError::NoConvergence { gradient: gn })
    }
}

/// Pushes a stationary point off any unstable direction until it is a minimum.
fn escape_saddles(model: &Model, mut u: Vec<f64>) -> Result<Vec<f64>, CrystalError> {
    for _ in 0..50 {
        let eig = SymmetricEigen::new(model.hessian(&u));
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (k, lmin) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        if lmin >= -1e-9 * lmax {
            return Ok(u);
        }
        let dir = eig.eigenvectors.column(k);
        let trial: Vec<f64> = u.iter().zip(dir.iter()).map(|(a, b)| a + 0.05 * b).collect();
        u = minimize(model, trial)?;
    }
    Err(CrystalError::NoConvergence { gradient: norm(&model.gradient(&u)) })
}

fn check_collapse(u: &[f64]) -> Result<(), CrystalError> {
    let n = u.len() / 3;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(u, i, j);
            if d < 1e-3 {
                return Err(CrystalError::CollapsedPair { a: i, b: j, distance: d });
            }
        }
    }
    Ok(())
}

fn weakest_axis(model: &Model) -> usize {
    let mut k = [0.0; 3];
    for kap in &model.kappa {
        for a in 0..3 {
            k[a] += kap[a];
        }
    }
    (0..3).min_by(|&a, &b| k[a].total_cmp(&k[b]).then(b.cmp(&a))).unwrap()
}

fn seed(model: &Model, rng: &mut SplitMix, jitter: f64) -> Vec<f64> {
    let n = model.n();
    let axis = weakest_axis(model);
    let spacing = 2.018 / (n as f64).powf(0.559);
    let mut u = vec![0.0; 3 * n];
    for i in 0..n {
        u[3 * i + axis] = (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
        for a in 0..3 {
            u[3 * i + a] += jitter * rng.next();
        }
    }
    u
}

fn assemble(trap: &TrapConfig, ions: &[CrystalIon], model: &Model, u: &[f64]) -> Crystal {
    let n = ions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        u[3 * a + 2]
            .total_cmp(&u[3 * b + 2])
            .then(u[3 * a].total_cmp(&u[3 * b]))
            .then(u[3 * a + 1].total_cmp(&u[3 * b + 1]))
    });
    Crystal {
        ions: order.iter().map(|&i| ions[i].clone()).collect(),
        trap: trap.clone(),
        positions: order
            .iter()
            .map(|&i| [u[3 * i] * model.length, u[3 * i + 1] * model.length, u[3 * i + 2] * model.length])
            .collect(),
        length_scale: model.length,
    }
}

/// Finds the minimum-energy configuration of `ions` in `trap`.
pub fn equilibrium_positions(trap: &TrapConfig, ions: &[CrystalIon]) -> Result<Crystal, CrystalError> {
    let model = Model::build(trap, ions)?;
    let mut rng = SplitMix(0x5EED_1234);
    let mut last_err = CrystalError::NoConvergence { gradient: f64::NAN };
    for attempt in 0..21 {
        let jitter = if attempt == 0 { 1e-3 } else { 1e-3 * (1.0 + attempt as f64) };
        let u0 = seed(&model, &mut rng, jitter);
        match minimize(&model, u0).and_then(|u| escape_saddles(&model, u)) {
            Ok(u) => {
                check_collapse(&u)?;
                return Ok(assemble(trap, ions, &model, &u));
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Linear-chain stationary point along the weakest axis, stable or not.
pub fn linear_chain(trap: &TrapConfig, ions: &[CrystalIon]) -> Result<Crystal, CrystalError> {
    let model = Model::build(trap, ions)?;
    let n = model.n();
    let axis = 2;
    let spacing = 2.018 / (n as f64).powf(0.559);
    let mut z: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing).collect();
    for _ in 0..200 {
        let mut u = vec![0.0; 3 * n];
        for i in 0..n {
            u[3 * i + axis] = z[i];
        }
        let g = model.gradient(&u);
        let gz: Vec<f64> = (0..n).map(|i| g[3 * i + axis]).collect();
        if norm(&gz) < GRAD_TOL {
            check_collapse(&u)?;
            return Ok(assemble(trap, ions, &model, &u));
        }
        let h = model.hessian(&u);
        let hz = DMatrix::from_fn(n, n, |i, j| h[(3 * i + axis, 3 * j + axis)]);
        let dz = hz.lu().solve(&DVector::from_vec(gz)).ok_or(CrystalError::NoConvergence { gradient: f64::NAN })?;
        for i in 0..n {
            z[i] -= dz[i];
        }
    }
    Err(CrystalError::NoConvergence { gradient: f64::NAN })
}

impl Crystal {
    fn model(&self) -> Result<Model, CrystalError> {
        Model::build(&self.trap, &self.ions)
    }

    fn dimensionless(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| p.iter().map(|x| x / self.length_scale)).collect()
    }

    /// Gradient norm of the dimensionless potential at the stored positions.
    pub fn gradient_norm(&self) -> Result<f64, CrystalError> {
        Ok(norm(&self.model()?.gradient(&self.dimensionless())))
    }

    /// Dimensionless Hessian of the crystal potential.
    pub fn hessian(&self) -> Result<DMatrix<f64>, CrystalError> {
        Ok(self.model()?.hessian(&self.dimensionless()))
    }

    /// Returns a copy with ion `index` re-tagged; positions are not re-solved.
    pub fn with_tag(&self, index: usize, tag: ElectronicTag) -> Self {
        let mut c = self.clone();
        c.ions[index].tag = tag;
        c
    }

    /// Re-solves the equilibrium with the current ions (tags in place).
    pub fn relaxed(&self) -> Result<Self, CrystalError> {
        let model = self.model()?;
        let u = minimize(&model, self.dimensionless()).and_then(|u| escape_saddles(&model, u))?;
        check_collapse(&u)?;
        Ok(Crystal { ions: self.ions.clone(), trap: self.trap.clone(), positions: to_positions(&u, model.length), length_scale: model.length })
    }
}

fn to_positions(u: &[f64], l: f64) -> Vec<[f64; 3]> {
    u.chunks(3).map(|c| [c[0] * l, c[1] * l, c[2] * l]).collect()
}

/// Normal modes of a crystal at equilibrium.
pub fn normal_modes(crystal: &Crystal) -> Result<ModeDecomposition, CrystalError> {
    let model = crystal.model()?;
    let u = crystal.dimensionless();
    let gn = norm(&model.gradient(&u));
    if gn > 1e-8 {
        return Err(CrystalError::NotAtEquilibrium { gradient: gn });
    }
    let h = model.hessian(&u);
    let n3 = h.nrows();
    let sm: Vec<f64> = (0..n3).map(|r| model.mass[r / 3].sqrt()).collect();
    let hm = DMatrix::from_fn(n3, n3, |i, j| h[(i, j)] / (sm[i] * sm[j]));
    let eig = SymmetricEigen::new(hm);
    let mut idx: Vec<usize> = (0..n3).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let w2 = model.omega_unit * model.omega_unit;
    let lowest = idx[0];
    if eig.eigenvalues[lowest] < -1e-9 * lmax {
        return Err(CrystalError::ImaginaryMode {
            eigenvalue: eig.eigenvalues[lowest] * w2,
            eigenvector: eig.eigenvectors.column(lowest).iter().cloned().collect(),
        });
    }
    let frequencies = idx.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt() * model.omega_unit).collect();
    let mut vecs = DMatrix::zeros(n3, n3);
    for (c, &k) in idx.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        // fix sign: largest component positive
        let big = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let s = if big < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n3 {
            vecs[(r, c)] = s * col[r];
        }
    }
    Ok(ModeDecomposition { frequencies, eigenvectors: vecs })
}

/// Minimum-spacing estimate l·2.018/N^0.559 (m).
pub fn min_spacing_estimate(n: usize, omega_z: f64, ion: &IonSpecies) -> f64 {
    length_scale(ion.charge_number as f64, ion.mass, omega_z) * 2.018 / (n as f64).powf(0.559)
}

/// Minimum nearest-neighbour distance in a crystal (m).
pub fn min_spacing(crystal: &Crystal) -> f64 {
    let p = &crystal.positions;
    let mut m = f64::INFINITY;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let d = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2) + (p[i][2] - p[j][2]).powi(2)).sqrt();
            m = m.min(d);
        }
    }
    m
}

/// η = √(ħ/2Mω)·k·ê for a single ion.
pub fn lamb_dicke(k_effective: [f64; 3], direction: [f64; 3], omega: f64, mass: f64) -> f64 {
    let dot: f64 = k_effective.iter().zip(&direction).map(|(a, b)| a * b).sum();
    (HBAR / (2.0 * mass * omega)).sqrt() * dot
}

/// Lamb–Dicke factor of ion `ion` in mode `mode` of a crystal.
pub fn lamb_dicke_mode(crystal: &Crystal, modes: &ModeDecomposition, mode: usize, ion: usize, k_effective: [f64; 3]) -> f64 {
    let v = [
        modes.eigenvectors[(3 * ion, mode)],
        modes.eigenvectors[(3 * ion + 1, mode)],
        modes.eigenvectors[(3 * ion + 2, mode)],
    ];
    let dot: f64 = k_effective.iter().zip(&v).map(|(a, b)| a * b).sum();
    (HBAR / (2.0 * crystal.ions[ion].species.mass * modes.frequencies[mode])).sqrt() * dot
}

/// Two-photon excitation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoPhotonScheme {
    /// Both photons absorbed: k₁ + k₂.
    Ladder,
    /// One photon absorbed, one emitted: k₁ − k₂.
    Raman,
}

/// Effective wavevector of a two-photon transition.
pub fn effective_wavevector(k1: [f64; 3], k2: [f64; 3], scheme: TwoPhotonScheme) -> [f64; 3] {
    let s = match scheme {
        TwoPhotonScheme::Ladder => 1.0,
        TwoPhotonScheme::Raman => -1.0,
    };
    [k1[0] + s * k2[0], k1[1] + s * k2[1], k1[2] + s * k2[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SidebandBranch {
    Carrier,
    Red,
    Blue,
}

/// Rabi frequency of a carrier or first-order sideband in the Lamb–Dicke regime.
pub fn sideband_rabi(eta: f64, n: u64, branch: SidebandBranch, omega0: f64) -> Result<f64, CrystalError> {
    let nf = n as f64;
    match branch {
        SidebandBranch::Carrier => Ok((1.0 - eta * eta * nf) * omega0),
        SidebandBranch::Red => {
            if n == 0 {
                Err(CrystalError::NoLowerState)
            } else {
                Ok(eta * nf.sqrt() * omega0)
            }
        }
        SidebandBranch::Blue => Ok(eta * (nf + 1.0).sqrt() * omega0),
    }
}

/// Critical anisotropy (ω_z/ω_r)² of the linear-to-zigzag transition for N equal ions.
pub fn zigzag_critical_anisotropy(n: usize, ion: &IonSpecies, omega_z: f64, omega_rf: f64) -> Result<f64, CrystalError> {
    if n < 3 {
        return Err(CrystalError::NotApplicable("fewer than three ions never form a zigzag"));
    }
    let ions: Vec<CrystalIon> = (0..n).map(|_| CrystalIon::ground(ion.clone())).collect();
    let unstable = |ratio: f64| -> Result<bool, CrystalError> {
        let trap = TrapConfig::from_secular(ion, ratio * omega_z, omega_z, omega_rf)
            .map_err(|source| CrystalError::Unstable { index: 0, source })?;
        let chain = linear_chain(&trap, &ions)?;
        match normal_modes(&chain) {
            Ok(_) => Ok(false),
            Err(CrystalError::ImaginaryMode { .. }) => Ok(true),
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (1.0, 2.0 * n as f64);
    if !unstable(lo)? || unstable(hi)? {
        return Err(CrystalError::NotApplicable("transition outside search bracket"));
    }
    // bracket in anisotropy; stop once 𝒜 is resolved to 1e-6
    while 1.0 / (lo * lo) - 1.0 / (hi * hi) > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if unstable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    Ok(1.0 / (r * r))
}

/// |⟨n_to|D(β)|n_from⟩|² for a real displacement β.
pub fn franck_condon(beta: f64, n_from: u64, n_to: u64) -> f64 {
    let (lo, hi) = if n_from <= n_to { (n_from, n_to) } else { (n_to, n_from) };
    let d = hi - lo;
    let b2 = beta * beta;
    if b2 == 0.0 {
        return if d == 0 { 1.0 } else { 0.0 };
    }
    let lag = laguerre(lo, d as f64, b2);
    if lag == 0.0 {
        return 0.0;
    }
    let ln = -b2 + d as f64 * b2.ln() + ln_factorial(lo) - ln_factorial(hi) + 2.0 * lag.abs().ln();
    ln.exp()
}

/// Localization metrics for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeLocalization {
    pub frequency: f64,
    pub participation_ratio: f64,
    /// Amplitude weight inside each subcrystal of untagged ions.
    pub subcrystal_weights: Vec<f64>,
    /// Index of the subcrystal holding > 90 % of the weight, if it is a proper subset.
    pub localized_in: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeShapingReport {
    /// Ion indices (z-ordered) of each subcrystal.
    pub subcrystals: Vec<Vec<usize>>,
    pub modes: Vec<ModeLocalization>,
}

/// Participation and subcrystal localization of every mode of a tagged crystal.
pub fn mode_shaping_report(crystal: &Crystal) -> Result<ModeShapingReport, CrystalError> {
    let modes = normal_modes(crystal)?;
    let mut subcrystals: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    for (i, ion) in crystal.ions.iter().enumerate() {
        if ion.tag == ElectronicTag::Ground {
            current.push(i);
        } else if !current.is_empty() {
            subcrystals.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        subcrystals.push(current);
    }
    let untagged: usize = subcrystals.iter().map(|s| s.len()).sum();
    let any_tag = untagged < crystal.ions.len();
    let mut out = Vec::with_capacity(modes.frequencies.len());
    for k in 0..modes.frequencies.len() {
        let w = modes.ion_weights(k);
        let pr = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
        let sub: Vec<f64> = subcrystals.iter().map(|s| s.iter().map(|&i| w[i]).sum()).collect();
        let localized_in = if any_tag {
            sub.iter().enumerate().find(|(s, &v)| v > 0.9 && subcrystals[*s].len() < untagged).map(|(s, _)| s)
        } else {
            None
        };
        out.push(ModeLocalization { frequency: modes.frequencies[k], participation_ratio: pr, subcrystal_weights: sub, localized_in });
    }
    Ok(ModeShapingReport { subcrystals, modes: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular;

    fn chain(n: usize, ratio: f64) -> (TrapConfig, Vec<CrystalIon>) {
        let ion = IonSpecies::calcium40();
        let trap = TrapConfig::from_secular(&ion, ratio * angular(1e6), angular(1e6), angular(30e6)).unwrap();
        (trap, (0..n).map(|_| CrystalIon::ground(ion.clone())).collect())
    }

    #[test]
    fn two_ion_positions() {
        let (trap, ions) = chain(2, 5.0);
        let c = equilibrium_positions(&trap, &ions).unwrap();
        let z = c.positions[1][2] / c.length_scale;
        assert!((z - 0.25f64.cbrt()).abs() < 1e-9);
        assert!((c.positions[0][2] / c.length_scale + 0.25f64.cbrt()).abs() < 1e-9);
    }

    #[test]
    fn three_ion_axial_modes() {
        let (trap, ions) = chain(3, 5.0);
        let c = equilibrium_positions(&trap, &ions).unwrap();
        assert!((c.positions[2][2] / c.length_scale - 1.25f64.cbrt()).abs() < 1e-9);
        let m = normal_modes(&c).unwrap();
        let wz = angular(1e6);
        let axial: Vec<f64> = (0..9).filter(|&k| m.axis(k) == 2).map(|k| m.frequencies[k] / wz).collect();
        let expected = [1.0, 3f64.sqrt(), (29.0f64 / 5.0).sqrt()];
        for (a, e) in axial.iter().zip(expected) {
            assert!((a - e).abs() < 1e-6, "{axial:?}");
        }
    }

    #[test]
    fn single_ion_modes_are_secular() {
        let (trap, ions) = chain(1, 3.0);
        let c = equilibrium_positions(&trap, &ions).unwrap();
        let m = normal_modes(&c).unwrap();
        let w = secular_frequencies(&trap, &ions[0].species).unwrap();
        assert!((m.frequencies[0] / w.z - 1.0).abs() < 1e-12);
        assert!((m.frequencies[2] / w.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubly_charged_centre_changes_modes() {
        let (trap, mut ions) = chain(3, 4.0);
        ions[1].tag = ElectronicTag::DoublyCharged;
        let c = equilibrium_positions(&trap, &ions).unwrap();
        let m = normal_modes(&c).unwrap();
        let wz = angular(1e6);
        let com = (0..9).filter(|&k| m.axis(k) == 2).map(|k| m.frequencies[k]).next().unwrap();
        assert!((com / wz - 1.0).abs() > 1e-3);
        let mut radial: Vec<f64> = (0..9).filter(|&k| m.axis(k) == 0).map(|k| m.frequencies[k]).collect();
        radial.dedup_by(|a, b| (*a - *b).abs() < 1e-6 * *b);
        assert_eq!(radial.len(), 3);
    }

    #[test]
    fn zigzag_three_ions() {
        let ion = IonSpecies::calcium40();
        let a = zigzag_critical_anisotropy(3, &ion, angular(1e6), angular(30e6)).unwrap();
        assert!((a - 5.0 / 12.0).abs() < 1e-4, "{a}");
        assert!(matches!(zigzag_critical_anisotropy(2, &ion, angular(1e6), angular(30e6)), Err(CrystalError::NotApplicable(_))));
    }

    #[test]
    fn sidebands() {
        assert_eq!(sideband_rabi(0.1, 0, SidebandBranch::Red, 1.0), Err(CrystalError::NoLowerState));
        assert!((sideband_rabi(0.1, 0, SidebandBranch::Blue, 2.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(sideband_rabi(0.1, 0, SidebandBranch::Carrier, 2.0).unwrap(), 2.0);
        let b = sideband_rabi(0.1, 4, SidebandBranch::Blue, 1.0).unwrap();
        let r = sideband_rabi(0.1, 4, SidebandBranch::Red, 1.0).unwrap();
        assert!((b / r - (5.0f64 / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn franck_condon_values() {
        assert_eq!(franck_condon(0.0, 3, 3), 1.0);
        assert_eq!(franck_condon(0.0, 3, 2), 0.0);
        assert!((franck_condon(1.0, 0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        for from in [0u64, 2, 7] {
            let s: f64 = (0..200).map(|to| franck_condon(1.7, from, to)).sum();
            assert!((s - 1.0).abs() < 1e-10, "{from}: {s}");
        }
        let p = franck_condon(0.8, 0, 3);
        let direct = (-0.64f64).exp() * 0.8f64.powi(6) / 6.0;
        assert!((p - direct).abs() < 1e-14);
    }
}
