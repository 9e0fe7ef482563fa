//! Rydberg state structure of singly charged alkaline-earth ions: Rydberg–Ritz
//! energies, radial matrix elements, polarizabilities, quadrupole moments,
//! scaling laws and series fitting.

pub mod fit;
pub mod numerov;
pub mod scaling;

use crate::constants::{BOHR_RADIUS, E_CHARGE, ELECTRON_MASS, FINE_STRUCTURE, HBAR, RYDBERG_ENERGY};
use crate::numerics::special::{wigner_3j, wigner_6j};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub use fit::{fit_rydberg_series, SeriesFit, SeriesGuess, SeriesLine, SeriesParameterization};
pub use scaling::{scaled_property, PropertyTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RydError {
    #[error("invalid level: {0}")]
    InvalidLevel(String),
    #[error("no quantum-defect series for L={l}, J={j}")]
    MissingSeries { l: u32, j: f64 },
    #[error("level not bound: n* = {n_star}")]
    Unbound { n_star: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("unknown property tag `{0}`")]
    UnknownProperty(String),
    #[error("data file error: {0}")]
    DataFile(String),
    #[error("fit error: {0}")]
    Fit(#[from] crate::numerics::fit::FitError),
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),
}

/// |n, L, J, m_J⟩ with J and m_J stored doubled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RydbergLevel {
    pub n: u32,
    pub l: u32,
    pub twice_j: u32,
    pub twice_mj: i32,
}

impl RydbergLevel {
    pub fn new(n: u32, l: u32, j: f64, mj: f64) -> Result<Self, RydError> {
        let tj = (2.0 * j).round();
        let tm = (2.0 * mj).round();
        if (tj - 2.0 * j).abs() > 1e-9 || (tm - 2.0 * mj).abs() > 1e-9 {
            return Err(RydError::InvalidLevel(format!("J={j}, mJ={mj} not half-integer")));
        }
        let lvl = Self { n, l, twice_j: tj as u32, twice_mj: tm as i32 };
        lvl.validate()?;
        Ok(lvl)
    }

    pub fn validate(&self) -> Result<(), RydError> {
        if self.n <= self.l {
            return Err(RydError::InvalidLevel(format!("n={} must exceed L={}", self.n, self.l)));
        }
        if (self.twice_j as i64 - 2 * self.l as i64).abs() != 1 {
            return Err(RydError::InvalidLevel(format!("|J-L| must be 1/2 (L={}, 2J={})", self.l, self.twice_j)));
        }
        if self.twice_mj.unsigned_abs() > self.twice_j || (self.twice_mj + self.twice_j as i32) % 2 != 0 {
            return Err(RydError::InvalidLevel(format!("m_J out of range (2J={}, 2mJ={})", self.twice_j, self.twice_mj)));
        }
        Ok(())
    }

    pub fn j(&self) -> f64 {
        self.twice_j as f64 / 2.0
    }

    pub fn mj(&self) -> f64 {
        self.twice_mj as f64 / 2.0
    }

    /// nS₁/₂ with m_J = +1/2.
    pub fn s_half(n: u32) -> Self {
        Self { n, l: 0, twice_j: 1, twice_mj: 1 }
    }

    /// Same (n, L, J) with a different projection.
    pub fn with_mj(&self, mj: f64) -> Result<Self, RydError> {
        Self::new(self.n, self.l, self.j(), mj)
    }
}

/// Quantum-defect parameters of one (L, J) series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesDefects {
    pub mu0: f64,
    pub mu1: f64,
    /// ∂μ/∂E (J⁻¹).
    pub dmu_de: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub l: u32,
    pub twice_j: u32,
    pub defects: SeriesDefects,
}

/// Per-species Rydberg–Ritz model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumDefectModel {
    pub species: String,
    /// Double ionization limit I⁺⁺ relative to the ionic ground state (J).
    pub ionization_limit: f64,
    /// Mass-reduced Rydberg energy R* (J).
    pub reduced_rydberg: f64,
    /// Charge of the ionic core 𝒵.
    pub core_charge: f64,
    pub series: Vec<SeriesEntry>,
}

#[derive(Debug, Deserialize)]
struct DefectFile {
    species: String,
    ion_mass_amu: f64,
    ionization_limit_cm: f64,
    core_charge: f64,
    series: Vec<DefectFileSeries>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefectFileSeries {
    #[serde(rename = "L")]
    l: u32,
    #[serde(rename = "J")]
    j: f64,
    mu0: f64,
    mu1: f64,
    /// ∂μ/∂E in units of 1/R*.
    dmu_de_rydberg: f64,
}

const SR88_DEFECTS: &str = include_str!("../../data/quantum_defects/sr88.toml");
const CA40_DEFECTS: &str = include_str!("../../data/quantum_defects/ca40.toml");

impl QuantumDefectModel {
    /// Parses a quantum-defect data file.
    pub fn from_toml_str(text: &str) -> Result<Self, RydError> {
        let f: DefectFile = toml::from_str(text).map_err(|e| RydError::DataFile(e.to_string()))?;
        let me = ELECTRON_MASS;
        let m_core = f.ion_mass_amu * crate::constants::AMU - me;
        let reduced = RYDBERG_ENERGY * m_core / (m_core + me);
        let ionization_limit = f.ionization_limit_cm * 100.0 * crate::constants::H_PLANCK * 299_792_458.0;
        if !(ionization_limit > 0.0) {
            return Err(RydError::DataFile("ionization limit must be positive".into()));
        }
        let series = f
            .series
            .into_iter()
            .map(|s| {
                let tj = (2.0 * s.j).round() as u32;
                SeriesEntry { l: s.l, twice_j: tj, defects: SeriesDefects { mu0: s.mu0, mu1: s.mu1, dmu_de: s.dmu_de_rydberg / reduced } }
            })
            .collect();
        Ok(Self { species: f.species, ionization_limit, reduced_rydberg: reduced, core_charge: f.core_charge, series })
    }

    pub fn from_file(path: &Path) -> Result<Self, RydError> {
        let text = std::fs::read_to_string(path).map_err(|e| RydError::DataFile(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Shipped ⁸⁸Sr⁺ parameter set.
    pub fn strontium88() -> Self {
        Self::from_toml_str(SR88_DEFECTS).expect("bundled Sr+ data")
    }

    /// Shipped ⁴⁰Ca⁺ parameter set.
    pub fn calcium40() -> Self {
        Self::from_toml_str(CA40_DEFECTS).expect("bundled Ca+ data")
    }

    pub fn series(&self, l: u32, twice_j: u32) -> Result<&SeriesDefects, RydError> {
        self.series
            .iter()
            .find(|s| s.l == l && s.twice_j == twice_j)
            .map(|s| &s.defects)
            .ok_or(RydError::MissingSeries { l, j: twice_j as f64 / 2.0 })
    }

    /// Quantum defect of level n in a series.
    pub fn quantum_defect(&self, n: u32, l: u32, twice_j: u32) -> Result<f64, RydError> {
        let d = self.series(l, twice_j)?;
        Ok(defect_from(d, n as f64, self.reduced_rydberg))
    }

    /// Effective principal quantum number n* = n − μ.
    pub fn effective_n(&self, n: u32, l: u32, twice_j: u32) -> Result<f64, RydError> {
        let ns = n as f64 - self.quantum_defect(n, l, twice_j)?;
        if !(ns > 0.0) {
            return Err(RydError::Unbound { n_star: ns });
        }
        Ok(ns)
    }
}

fn defect_from(d: &SeriesDefects, n: f64, reduced_rydberg: f64) -> f64 {
    d.mu0 - d.dmu_de * reduced_rydberg / (n - d.mu1).powi(2)
}

/// Rydberg–Ritz energy for given parameters; shared by the model and the fitter.
pub fn ritz_energy(ionization_limit: f64, reduced_rydberg: f64, core_charge: f64, n_star: f64, j: f64) -> f64 {
    let z2 = core_charge * core_charge;
    ionization_limit - reduced_rydberg * z2 / (n_star * n_star)
        + reduced_rydberg * z2 * z2 * FINE_STRUCTURE * FINE_STRUCTURE / n_star.powi(3)
            * (3.0 / (4.0 * n_star) - 1.0 / (j + 0.5))
}

/// Level energy relative to the ionic ground state (J).
///
/// The defect expansion depends on n only, so the self-consistent loop below
/// terminates after the first update; the loop guards generalized models.
pub fn level_energy(model: &QuantumDefectModel, level: &RydbergLevel) -> Result<f64, RydError> {
    level.validate()?;
    let d = model.series(level.l, level.twice_j)?;
    let n = level.n as f64;
    let mut energy = f64::NAN;
    for _ in 0..100 {
        let mu = defect_from(d, n, model.reduced_rydberg);
        let ns = n - mu;
        if !(ns > 0.0) {
            return Err(RydError::Unbound { n_star: ns });
        }
        let e = ritz_energy(model.ionization_limit, model.reduced_rydberg, model.core_charge, ns, level.j());
        if (e - energy).abs() < crate::constants::H_PLANCK {
            return Ok(e);
        }
        energy = e;
    }
    Err(RydError::NoConvergence("level energy fixed point".into()))
}

fn wave(model: &QuantumDefectModel, level: &RydbergLevel) -> Result<numerov::RadialWave, RydError> {
    let ns = model.effective_n(level.n, level.l, level.twice_j)?;
    numerov::radial_wave(ns, level.l, model.core_charge, numerov::DEFAULT_STEP)
        .ok_or_else(|| RydError::NoConvergence(format!("Numerov integration failed for n*={ns}")))
}

/// ⟨a| r^p |b⟩ (m^p) from Numerov radial wavefunctions.
pub fn radial_matrix_element(model: &QuantumDefectModel, a: &RydbergLevel, b: &RydbergLevel, power: i32) -> Result<f64, RydError> {
    if !(power == 1 || power == 2) {
        return Err(RydError::InvalidLevel(format!("power {power} not supported")));
    }
    let wa = wave(model, a)?;
    let wb = wave(model, b)?;
    Ok(numerov::radial_integral(&wa, &wb, power) * BOHR_RADIUS.powi(power))
}

/// Angular factor ⟨l s j m_a| r_q |l' s j' m_b⟩ / ⟨r⟩ for spherical component q.
pub fn dipole_angular_factor(a: &RydbergLevel, b: &RydbergLevel, q: i32) -> f64 {
    let (la, lb) = (2 * a.l as i64, 2 * b.l as i64);
    let (ja, jb) = (a.twice_j as i64, b.twice_j as i64);
    let (ma, mb) = (a.twice_mj as i64, b.twice_mj as i64);
    let q2 = 2 * q as i64;
    let threej_m = wigner_3j(ja, 2, jb, -ma, q2, mb);
    if threej_m == 0.0 {
        return 0.0;
    }
    let phase_m = if ((ja - ma) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let sixj = wigner_6j(la, ja, 1, jb, lb, 2);
    let phase_j = if ((la + 1 + jb + 2) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let red_j = phase_j * (((ja + 1) * (jb + 1)) as f64).sqrt() * sixj;
    let threej_l = wigner_3j(la, 2, lb, 0, 0, 0);
    let phase_l = if a.l % 2 == 0 { 1.0 } else { -1.0 };
    let red_l = phase_l * (((la + 1) * (lb + 1)) as f64).sqrt() * threej_l;
    phase_m * threej_m * red_j * red_l
}

/// Transition dipole e⟨a|r_q|b⟩ (C m) including the angular factor.
pub fn transition_dipole(model: &QuantumDefectModel, a: &RydbergLevel, b: &RydbergLevel, q: i32) -> Result<f64, RydError> {
    let ang = dipole_angular_factor(a, b, q);
    if ang == 0.0 {
        return Ok(0.0);
    }
    Ok(E_CHARGE * ang * radial_matrix_element(model, a, b, 1)?)
}

/// Result of the second-order polarizability sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarizability {
    /// Static scalar-plus-tensor polarizability along z (C² m² J⁻¹).
    pub alpha: f64,
    /// Σ |⟨m|z|n⟩|² / (E_n − E_m) (m² J⁻¹).
    pub nu2: f64,
}

fn polarizability_at(model: &QuantumDefectModel, level: &RydbergLevel, cutoff: u32, center: &numerov::RadialWave, e_level: f64) -> Result<f64, RydError> {
    let mut nu2 = 0.0;
    let mut partners = Vec::new();
    for lp in [level.l as i64 - 1, level.l as i64 + 1] {
        if lp < 0 {
            continue;
        }
        let lp = lp as u32;
        for tjp in [2 * lp as i64 - 1, 2 * lp as i64 + 1] {
            if tjp < 1 || (tjp - level.twice_j as i64).abs() > 2 {
                continue;
            }
            partners.push((lp, tjp as u32));
        }
    }
    for (lp, tjp) in partners {
        if model.series(lp, tjp).is_err() {
            continue;
        }
        let lo = level.n.saturating_sub(cutoff).max(lp + 1);
        let hi = level.n + cutoff;
        for np in lo..=hi {
            let other = RydbergLevel { n: np, l: lp, twice_j: tjp, twice_mj: level.twice_mj };
            let ang = dipole_angular_factor(level, &other, 0);
            if ang == 0.0 {
                continue;
            }
            let Ok(ns) = model.effective_n(np, lp, tjp) else { continue };
            if ns < lp as f64 + 1.0 {
                continue;
            }
            let Some(w) = numerov::radial_wave(ns, lp, model.core_charge, numerov::DEFAULT_STEP) else {
                return Err(RydError::NoConvergence(format!("Numerov failed for n*={ns}")));
            };
            let r = numerov::radial_integral(center, &w, 1) * BOHR_RADIUS;
            let e_other = level_energy(model, &other)?;
            nu2 += (ang * r).powi(2) / (e_level - e_other);
        }
    }
    Ok(nu2)
}

/// Second-order dipole polarizability of `level` along the quantization axis,
/// summing dipole-coupled states within ±`basis_cutoff` in n.
pub fn polarizability_sum(model: &QuantumDefectModel, level: &RydbergLevel, basis_cutoff: u32) -> Result<Polarizability, RydError> {
    if basis_cutoff < 10 {
        return Err(RydError::InvalidLevel("basis cutoff must be at least 10".into()));
    }
    let center = wave(model, level)?;
    let e_level = level_energy(model, level)?;
    let nu2 = polarizability_at(model, level, basis_cutoff, &center, e_level)?;
    let nu2_wide = polarizability_at(model, level, basis_cutoff + 5, &center, e_level)?;
    if ((nu2_wide - nu2) / nu2).abs() > 0.01 {
        return Err(RydError::NoConvergence(format!("polarizability sum changed {:.2}% with cutoff +5", 100.0 * ((nu2_wide - nu2) / nu2).abs())));
    }
    Ok(Polarizability { alpha: -2.0 * E_CHARGE * E_CHARGE * nu2, nu2 })
}

/// Quadrupole moment Q_{L,J} = −e(2J−1)/(2J+2)·⟨r²⟩ (C m²).
pub fn quadrupole_moment(level: &RydbergLevel, radial_r2: f64) -> f64 {
    if level.twice_j < 2 {
        return 0.0;
    }
    let j = level.j();
    -E_CHARGE * (2.0 * j - 1.0) / (2.0 * j + 2.0) * radial_r2
}

/// Large-n D₃/₂ estimate 2e a₀² n² (5n² + 1 − 3L(L+1)) / (5(4𝒵+2)) (C m²).
pub fn quadrupole_moment_estimate(n: u32, l: u32, core_charge: f64) -> f64 {
    let nf = n as f64;
    let ll = (l * (l + 1)) as f64;
    2.0 * E_CHARGE * BOHR_RADIUS * BOHR_RADIUS * nf * nf * (5.0 * nf * nf + 1.0 - 3.0 * ll) / (5.0 * (4.0 * core_charge + 2.0))
}

/// First-order shift from the static quadrupole field (J).
pub fn static_quadrupole_shift(level: &RydbergLevel, q: f64, gamma: f64) -> f64 {
    if level.twice_j < 2 {
        return 0.0;
    }
    let j = level.j();
    let m = level.mj();
    gamma * q * (j * (j + 1.0) - 3.0 * m * m) / (j * (2.0 * j - 1.0))
}

/// Effective Rabi frequency of the RF-driven Δm_J = ±2 coupling (rad/s).
pub fn rf_coupling_rate(q: f64, gamma_prime: f64) -> f64 {
    -2.0 * q * gamma_prime / (5.0 * 3f64.sqrt() * HBAR)
}
