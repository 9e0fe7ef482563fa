//! Linear Paul trap: fields, pseudopotential, secular frequencies, stray-field
//! displacement and polarizability-induced frequency and energy shifts.

use crate::constants::{AMU, E_CHARGE, HBAR};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("trap unstable along {axis:?} (radicand {radicand:.3e} s^-2)")]
    Unstable { axis: Axis, radicand: f64 },
    #[error("strong-field Stark denominator vanishes (runaway regime)")]
    Singular,
    #[error("invalid trap parameter: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Ion species: mass and charge number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub mass: f64,
    pub charge_number: u8,
    pub label: String,
}

impl IonSpecies {
    pub fn new(label: &str, mass: f64, charge_number: u8) -> Result<Self, TrapError> {
        if !(mass > 0.0) {
            return Err(TrapError::Invalid("mass must be positive"));
        }
        if !(charge_number == 1 || charge_number == 2) {
            return Err(TrapError::Invalid("charge number must be 1 or 2"));
        }
        Ok(Self { mass, charge_number, label: label.to_string() })
    }

    pub fn calcium40() -> Self {
        Self { mass: 39.962_590_863 * AMU, charge_number: 1, label: "40Ca+".into() }
    }

    pub fn calcium40_doubly() -> Self {
        Self { mass: 39.962_590_863 * AMU, charge_number: 2, label: "40Ca2+".into() }
    }

    pub fn strontium88() -> Self {
        Self { mass: 87.905_612_5 * AMU, charge_number: 1, label: "88Sr+".into() }
    }

    pub fn charge(&self) -> f64 {
        self.charge_number as f64 * E_CHARGE
    }

    /// Same mass with a different charge number.
    pub fn with_charge(&self, charge_number: u8) -> Self {
        let mut s = self.clone();
        s.charge_number = charge_number;
        s
    }
}

/// Linear Paul trap parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// RF quadrupole gradient coefficient γ′ (V m⁻²).
    pub gamma_prime: f64,
    /// Static gradient coefficient γ (V m⁻²).
    pub gamma: f64,
    /// Radial asymmetry ε.
    pub epsilon: f64,
    /// RF drive angular frequency (rad/s).
    pub omega_rf: f64,
    /// RF phase imbalance (rad).
    pub phi_rf: f64,
    /// Static stray field (V/m).
    pub e_stray: [f64; 3],
    /// Residual RF field amplitude at the trap centre (V/m).
    pub e0: [f64; 3],
}

impl TrapConfig {
    pub fn new(gamma_prime: f64, gamma: f64, epsilon: f64, omega_rf: f64) -> Result<Self, TrapError> {
        let t = Self { gamma_prime, gamma, epsilon, omega_rf, phi_rf: 0.0, e_stray: [0.0; 3], e0: [0.0; 3] };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TrapError> {
        if !(self.omega_rf > 0.0) {
            return Err(TrapError::Invalid("omega_rf must be positive"));
        }
        if !(self.gamma_prime >= 0.0) {
            return Err(TrapError::Invalid("gamma_prime must be non-negative"));
        }
        Ok(())
    }

    /// Builds a symmetric trap (ε = 0) producing the requested secular
    /// frequencies for `ion`.
    pub fn from_secular(ion: &IonSpecies, omega_radial: f64, omega_axial: f64, omega_rf: f64) -> Result<Self, TrapError> {
        let q = ion.charge();
        let m = ion.mass;
        let gamma = m * omega_axial * omega_axial / (4.0 * q);
        let rf_part = omega_radial * omega_radial + 2.0 * q * gamma / m;
        if rf_part <= 0.0 {
            return Err(TrapError::Invalid("radial frequency unreachable"));
        }
        let gamma_prime = (rf_part * m * m * omega_rf * omega_rf / (2.0 * q * q)).sqrt();
        Self::new(gamma_prime, gamma, 0.0, omega_rf)
    }

    /// Electric potential of the trap electrodes at `pos` and time `t` (V).
    pub fn potential(&self, pos: [f64; 3], t: f64) -> f64 {
        let [x, y, z] = pos;
        self.gamma_prime * (x * x - y * y) * (self.omega_rf * t).cos()
            - self.gamma * ((1.0 + self.epsilon) * x * x + (1.0 - self.epsilon) * y * y - 2.0 * z * z)
    }
}

/// Secular angular frequencies (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecularFrequencies {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SecularFrequencies {
    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Squared secular frequencies before the square root; may be negative.
pub fn secular_radicands(trap: &TrapConfig, ion: &IonSpecies) -> [f64; 3] {
    let q = ion.charge();
    let m = ion.mass;
    let rf = 2.0 * q * q * trap.gamma_prime * trap.gamma_prime / (m * m * trap.omega_rf * trap.omega_rf);
    let st = 2.0 * q * trap.gamma / m;
    [rf - st * (1.0 + trap.epsilon), rf - st * (1.0 - trap.epsilon), 4.0 * q * trap.gamma / m]
}

fn checked_sqrt(r: [f64; 3]) -> Result<SecularFrequencies, TrapError> {
    for (axis, &v) in Axis::ALL.iter().zip(&r) {
        if !(v > 0.0) {
            return Err(TrapError::Unstable { axis: *axis, radicand: v });
        }
    }
    Ok(SecularFrequencies { x: r[0].sqrt(), y: r[1].sqrt(), z: r[2].sqrt() })
}

/// Secular frequencies of `ion` in `trap`.
pub fn secular_frequencies(trap: &TrapConfig, ion: &IonSpecies) -> Result<SecularFrequencies, TrapError> {
    checked_sqrt(secular_radicands(trap, ion))
}

/// Instantaneous electric field (V/m) at `pos` and time `t`.
pub fn trap_field(trap: &TrapConfig, pos: [f64; 3], t: f64) -> [f64; 3] {
    let [x, y, z] = pos;
    let c = (trap.omega_rf * t).cos();
    let s = (trap.omega_rf * t).sin();
    let gp = trap.gamma_prime;
    let g = trap.gamma;
    let e = trap.epsilon;
    [
        -2.0 * gp * x * c + 2.0 * g * (1.0 + e) * x + trap.e0[0] * trap.phi_rf * s + trap.e_stray[0],
        2.0 * gp * y * c + 2.0 * g * (1.0 - e) * y + trap.e0[1] * trap.phi_rf * s + trap.e_stray[1],
        -4.0 * g * z + trap.e0[2] * trap.phi_rf * s + trap.e_stray[2],
    ]
}

/// Pseudopotential energy (J): time-averaged RF kinetic term plus the static
/// quadrupole, relative to the trap centre.
pub fn pseudopotential_energy(trap: &TrapConfig, ion: &IonSpecies, pos: [f64; 3]) -> f64 {
    let q = ion.charge();
    let [x, y, z] = pos;
    let rf = q * q * trap.gamma_prime * trap.gamma_prime * (x * x + y * y) / (ion.mass * trap.omega_rf * trap.omega_rf);
    let st = -q * trap.gamma * ((1.0 + trap.epsilon) * x * x + (1.0 - trap.epsilon) * y * y - 2.0 * z * z);
    rf + st
}

/// Equilibrium shift along `axis` caused by the static stray field (m).
pub fn stray_displacement(trap: &TrapConfig, ion: &IonSpecies, axis: Axis) -> Result<f64, TrapError> {
    let w = secular_frequencies(trap, ion)?.get(axis);
    Ok(ion.charge() * trap.e_stray[axis.index()] / (ion.mass * w * w))
}

/// Magnitudes (Δω_x, Δω_y, Δω_z) of the polarizability-induced frequency shifts
/// for a second-order sum `nu2` (m² J⁻¹).
pub fn rydberg_frequency_shift(trap: &TrapConfig, ion: &IonSpecies, nu2: f64) -> [f64; 3] {
    let e2 = E_CHARGE * E_CHARGE;
    let a = nu2.abs() / ion.mass;
    let gp2 = trap.gamma_prime * trap.gamma_prime;
    let g2 = trap.gamma * trap.gamma;
    [
        ((4.0 * e2 * gp2 + 8.0 * e2 * g2 * (1.0 + trap.epsilon).powi(2)) * a).sqrt(),
        ((4.0 * e2 * gp2 + 8.0 * e2 * g2 * (1.0 - trap.epsilon).powi(2)) * a).sqrt(),
        (8.0 * e2 * g2 * a).sqrt(),
    ]
}

/// Composes a base frequency with a shift magnitude: ω′² = ω² + sign(ν²)·Δω².
pub fn compose_shift(omega: f64, shift: f64, nu2: f64) -> f64 {
    let s = if nu2 >= 0.0 { 1.0 } else { -1.0 };
    let r = omega * omega + s * shift * shift;
    if r > 0.0 {
        r.sqrt()
    } else {
        f64::NAN
    }
}

/// Secular frequencies of an ion in a Rydberg state with second-order sum `nu2`.
pub fn shifted_secular_frequencies(trap: &TrapConfig, ion: &IonSpecies, nu2: f64) -> Result<SecularFrequencies, TrapError> {
    let base = secular_radicands(trap, ion);
    let d = rydberg_frequency_shift(trap, ion, nu2);
    let s = if nu2 >= 0.0 { 1.0 } else { -1.0 };
    checked_sqrt([base[0] + s * d[0] * d[0], base[1] + s * d[1] * d[1], base[2] + s * d[2] * d[2]])
}

/// Weak-field Stark shift of the motional ladder (J).
pub fn stark_shift_weak(n_x: u64, n_y: u64, omega_ground: [f64; 2], omega_rydberg: [f64; 2]) -> f64 {
    (n_x as f64 + 0.5) * HBAR * (omega_rydberg[0] - omega_ground[0])
        + (n_y as f64 + 0.5) * HBAR * (omega_rydberg[1] - omega_ground[1])
}

/// Strong-field Stark shift: returns (ΔE in J, shifted X displacement in m).
pub fn stark_shift_strong(alpha: f64, trap: &TrapConfig, ion: &IonSpecies, x_d: f64, y_d: f64) -> Result<(f64, f64), TrapError> {
    let w = secular_frequencies(trap, ion)?.x;
    let denom = 1.0 - 2.0 * alpha * trap.gamma_prime * trap.gamma_prime / (ion.mass * w * w);
    if denom.abs() < 1e-12 {
        return Err(TrapError::Singular);
    }
    let de = -alpha * trap.gamma_prime * trap.gamma_prime * (x_d * x_d + y_d * y_d);
    Ok((de, x_d / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular;

    fn ca_trap() -> (TrapConfig, IonSpecies) {
        let ion = IonSpecies::calcium40();
        let t = TrapConfig::from_secular(&ion, angular(2.0e6), angular(1.0e6), angular(30.0e6)).unwrap();
        (t, ion)
    }

    #[test]
    fn static_only_is_unstable() {
        let ion = IonSpecies::calcium40();
        let t = TrapConfig::new(0.0, 1e6, 0.0, 1e8).unwrap();
        assert!(matches!(secular_frequencies(&t, &ion), Err(TrapError::Unstable { axis: Axis::X, .. })));
    }

    #[test]
    fn symmetric_trap_is_degenerate() {
        let (t, ion) = ca_trap();
        let w = secular_frequencies(&t, &ion).unwrap();
        assert_eq!(w.x, w.y);
        assert!((w.x / angular(2.0e6) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axial_inversion_round_trip() {
        let (t, ion) = ca_trap();
        let w = secular_frequencies(&t, &ion).unwrap();
        let target = angular(1.0e6);
        assert!((w.z / target - 1.0).abs() < 1e-12);
        let gamma = ion.mass * target * target / (4.0 * ion.charge());
        assert!((t.gamma / gamma - 1.0).abs() < 1e-12);
        let direct = 2.0 * (ion.charge() * t.gamma / ion.mass).sqrt();
        assert!((direct / w.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn field_vanishes_at_node() {
        let (t, _) = ca_trap();
        for k in 0..10 {
            let e = trap_field(&t, [0.0; 3], k as f64 * 1e-8);
            assert!(e.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn stray_only_field_is_constant() {
        let mut t = TrapConfig::new(0.0, 0.0, 0.0, 1e8).unwrap();
        t.e_stray = [1.0, -2.0, 3.0];
        assert_eq!(trap_field(&t, [1e-6, 2e-6, 3e-6], 0.37), [1.0, -2.0, 3.0]);
    }

    #[test]
    fn oscillating_part_averages_out() {
        let (t, _) = ca_trap();
        let pos = [3e-6, -2e-6, 1e-6];
        let n = 4096;
        let period = 2.0 * std::f64::consts::PI / t.omega_rf;
        let mut static_t = t.clone();
        static_t.gamma_prime = 0.0;
        let e_static = trap_field(&static_t, pos, 0.0);
        let mut avg = [0.0; 3];
        for k in 0..n {
            let e = trap_field(&t, pos, k as f64 * period / n as f64);
            for i in 0..3 {
                avg[i] += (e[i] - e_static[i]) / n as f64;
            }
        }
        let scale = 2.0 * t.gamma_prime * 3e-6;
        assert!(avg.iter().all(|v| v.abs() < 1e-10 * scale), "{avg:?}");
    }

    #[test]
    fn stray_displacement_cases() {
        let (mut t, ion) = ca_trap();
        t.e_stray = [0.0, 1.0, 0.0];
        assert_eq!(stray_displacement(&t, &ion, Axis::X).unwrap(), 0.0);
        t.e_stray = [1.0, 0.0, 0.0];
        let r1 = stray_displacement(&t, &ion, Axis::X).unwrap();
        let w = secular_frequencies(&t, &ion).unwrap().x;
        assert!((r1 - E_CHARGE / (ion.mass * w * w)).abs() < 1e-20);
        t.e_stray = [2.0, 0.0, 0.0];
        assert!((stray_displacement(&t, &ion, Axis::X).unwrap() / r1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn stray_displacement_minimizes_pseudopotential() {
        let (mut t, ion) = ca_trap();
        t.e_stray = [1.0, 0.0, 0.0];
        let expected = stray_displacement(&t, &ion, Axis::X).unwrap();
        let energy = |x: f64| pseudopotential_energy(&t, &ion, [x, 0.0, 0.0]) - ion.charge() * t.e_stray[0] * x;
        // golden-section search
        let (mut a, mut b) = (-10.0 * expected.abs(), 10.0 * expected.abs());
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if energy(c) < energy(d) {
                b = d;
            } else {
                a = c;
            }
        }
        assert!(((a + b) / 2.0 / expected - 1.0).abs() < 1e-6);
    }

    #[test]
    fn frequency_shift_structure() {
        let (t, ion) = ca_trap();
        assert_eq!(rydberg_frequency_shift(&t, &ion, 0.0), [0.0; 3]);
        let mut t0 = t.clone();
        t0.gamma = 0.0;
        let d = rydberg_frequency_shift(&t0, &ion, -1e-12);
        assert_eq!(d[2], 0.0);
        let d2 = rydberg_frequency_shift(&t0, &ion, -4e-12);
        assert!((d2[0] / d[0] - 2.0).abs() < 1e-12);
        let mut tr = t.clone();
        tr.gamma_prime = 100.0 * tr.gamma;
        let d = rydberg_frequency_shift(&tr, &ion, 1e-12);
        assert!((d[0] / d[2] - 5001f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn negative_nu2_lowers_frequency() {
        let (t, ion) = ca_trap();
        let base = secular_frequencies(&t, &ion).unwrap();
        let s = shifted_secular_frequencies(&t, &ion, -1e7).unwrap();
        assert!(s.x < base.x && s.z < base.z);
        let s = shifted_secular_frequencies(&t, &ion, 1e7).unwrap();
        assert!(s.x > base.x);
    }

    #[test]
    fn weak_stark_shift() {
        let w = [angular(1e6), angular(1e6)];
        assert_eq!(stark_shift_weak(3, 4, w, w), 0.0);
        let wr = [w[0] - angular(40.1e3), w[1]];
        let step = stark_shift_weak(6, 0, w, wr) - stark_shift_weak(5, 0, w, wr);
        assert!((step / HBAR + angular(40.1e3)).abs() < 1e-6);
    }

    #[test]
    fn strong_stark_shift() {
        let (t, ion) = ca_trap();
        let (de, xd) = stark_shift_strong(0.0, &t, &ion, 1e-7, 2e-7).unwrap();
        assert_eq!(de, 0.0);
        assert_eq!(xd, 1e-7);
        let (de1, _) = stark_shift_strong(1e-30, &t, &ion, 1e-7, 2e-7).unwrap();
        let (de2, _) = stark_shift_strong(1e-30, &t, &ion, 2e-7, 4e-7).unwrap();
        assert!(de1 < 0.0);
        assert!((de2 / de1 - 4.0).abs() < 1e-12);
        let w = secular_frequencies(&t, &ion).unwrap().x;
        let alpha_c = ion.mass * w * w / (2.0 * t.gamma_prime * t.gamma_prime);
        assert_eq!(stark_shift_strong(alpha_c, &t, &ion, 1e-7, 0.0), Err(TrapError::Singular));
    }
}
