//! Physical constants (CODATA 2018, SI).

use std::f64::consts::PI;

/// Elementary charge (C).
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant (J s).
pub const H_PLANCK: f64 = 6.626_070_15e-34;
/// Bohr radius (m).
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;
/// Electron mass (kg).
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Rydberg energy R∞ h c (J).
pub const RYDBERG_ENERGY: f64 = 2.179_872_361_103_5e-18;
/// Fine-structure constant.
pub const FINE_STRUCTURE: f64 = 7.297_352_569_3e-3;
/// Hartree energy (J).
pub const HARTREE: f64 = 2.0 * RYDBERG_ENERGY;

/// Coulomb constant e²/(4πε₀) (J m).
pub fn coulomb_e2() -> f64 {
    E_CHARGE * E_CHARGE / (4.0 * PI * EPSILON_0)
}

/// Converts an ordinary frequency in Hz to an angular frequency.
pub fn angular(hz: f64) -> f64 {
    2.0 * PI * hz
}

/// Converts a polarizability quoted in MHz/(V/cm)² to C² m² J⁻¹.
///
/// The MHz figure is read as an angular shift per unit field squared, so
/// α_SI = x · 1e6 · ħ / (100 V/m per V/cm)². 96.93 MHz/(V/cm)² gives 1.02e-30.
pub fn polarizability_from_mhz_per_vcm2(x: f64) -> f64 {
    x * 1.0e6 * HBAR * 1.0e-4
}

/// Inverse of [`polarizability_from_mhz_per_vcm2`].
pub fn polarizability_to_mhz_per_vcm2(alpha: f64) -> f64 {
    alpha / (1.0e6 * HBAR * 1.0e-4)
}
