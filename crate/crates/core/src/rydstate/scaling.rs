//! Power-law scaling of Rydberg properties with the principal quantum number.

use super::RydError;
use std::str::FromStr;

/// Rydberg properties with tabulated n and 𝒵 scaling exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropertyTag {
    BindingEnergy,
    LevelSpacing,
    FineStructure,
    OrbitalSize,
    QuadrupoleMoment,
    NaturalLifetime,
    BlackbodyLifetime,
    GroundDipole,
    RydbergDipole,
    Polarizability,
    DipoleDipole,
    VanDerWaals,
}

impl PropertyTag {
    pub const ALL: [PropertyTag; 12] = [
        PropertyTag::BindingEnergy,
        PropertyTag::LevelSpacing,
        PropertyTag::FineStructure,
        PropertyTag::OrbitalSize,
        PropertyTag::QuadrupoleMoment,
        PropertyTag::NaturalLifetime,
        PropertyTag::BlackbodyLifetime,
        PropertyTag::GroundDipole,
        PropertyTag::RydbergDipole,
        PropertyTag::Polarizability,
        PropertyTag::DipoleDipole,
        PropertyTag::VanDerWaals,
    ];

    /// Exponent of n.
    pub fn n_exponent(self) -> f64 {
        match self {
            PropertyTag::BindingEnergy => -2.0,
            PropertyTag::LevelSpacing => -3.0,
            PropertyTag::FineStructure => -3.0,
            PropertyTag::OrbitalSize => 2.0,
            PropertyTag::QuadrupoleMoment => 4.0,
            PropertyTag::NaturalLifetime => 3.0,
            PropertyTag::BlackbodyLifetime => 2.0,
            PropertyTag::GroundDipole => -1.5,
            PropertyTag::RydbergDipole => 2.0,
            PropertyTag::Polarizability => 7.0,
            PropertyTag::DipoleDipole => 4.0,
            PropertyTag::VanDerWaals => 11.0,
        }
    }

    /// Exponent of the core charge 𝒵.
    pub fn charge_exponent(self) -> f64 {
        match self {
            PropertyTag::BindingEnergy => 2.0,
            PropertyTag::LevelSpacing => 2.0,
            PropertyTag::FineStructure => 4.0,
            PropertyTag::OrbitalSize => -1.0,
            PropertyTag::QuadrupoleMoment => -2.0,
            PropertyTag::NaturalLifetime => -4.0,
            PropertyTag::BlackbodyLifetime => -4.0,
            PropertyTag::GroundDipole => -1.0,
            PropertyTag::RydbergDipole => -1.0,
            PropertyTag::Polarizability => -4.0,
            PropertyTag::DipoleDipole => -2.0,
            PropertyTag::VanDerWaals => -6.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PropertyTag::BindingEnergy => "binding_energy",
            PropertyTag::LevelSpacing => "level_spacing",
            PropertyTag::FineStructure => "fine_structure",
            PropertyTag::OrbitalSize => "orbital_size",
            PropertyTag::QuadrupoleMoment => "quadrupole_moment",
            PropertyTag::NaturalLifetime => "natural_lifetime",
            PropertyTag::BlackbodyLifetime => "blackbody_lifetime",
            PropertyTag::GroundDipole => "ground_dipole",
            PropertyTag::RydbergDipole => "rydberg_dipole",
            PropertyTag::Polarizability => "polarizability",
            PropertyTag::DipoleDipole => "dipole_dipole",
            PropertyTag::VanDerWaals => "van_der_waals",
        }
    }
}

impl FromStr for PropertyTag {
    type Err = RydError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PropertyTag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| RydError::UnknownProperty(s.to_string()))
    }
}

/// Scales `value_ref` from `n_ref` to `n_target`. With `defect = Some(μ)` the
/// effective quantum numbers n − μ are used.
pub fn scaled_property(tag: PropertyTag, n_ref: f64, value_ref: f64, n_target: f64, defect: Option<f64>) -> f64 {
    let mu = defect.unwrap_or(0.0);
    value_ref * ((n_target - mu) / (n_ref - mu)).powf(tag.n_exponent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifetime_example() {
        let t = scaled_property(PropertyTag::NaturalLifetime, 50.0, 192e-6, 36.0, None);
        assert!((t / 71.66e-6 - 1.0).abs() < 1e-3);
        assert!((t / 65e-6 - 1.0).abs() < 0.25);
    }

    #[test]
    fn identity_and_round_trip() {
        for tag in PropertyTag::ALL {
            assert_eq!(scaled_property(tag, 50.0, 3.0, 50.0, None), 3.0);
            let there = scaled_property(tag, 50.0, 3.0, 63.0, Some(2.3));
            let back = scaled_property(tag, 63.0, there, 50.0, Some(2.3));
            assert!((back / 3.0 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn van_der_waals_exponent() {
        let r = scaled_property("van_der_waals".parse().unwrap(), 50.0, 1.0, 60.0, None);
        assert!((r - 1.2f64.powi(11)).abs() < 1e-12);
        assert!(matches!("size".parse::<PropertyTag>(), Err(RydError::UnknownProperty(_))));
    }
}
