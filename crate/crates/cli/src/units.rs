//! Unit-suffixed quantities. This is the only place units are interpreted;
//! everything past the parser is SI with angular frequencies in rad/s.

use rydion::constants::{polarizability_from_mhz_per_vcm2, E_CHARGE, H_PLANCK, HBAR};
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Dimensionless,
    /// Angular frequency or rate (rad/s).
    Frequency,
    Time,
    Length,
    /// Electric field (V/m).
    Field,
    /// Field gradient (V/m²).
    Gradient,
    /// Static polarizability (C² m² J⁻¹).
    Polarizability,
    Energy,
    Angle,
    /// Wavenumber of a light field (1/m).
    Wavevector,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Dimensionless => "dimensionless number",
            Dimension::Frequency => "frequency",
            Dimension::Time => "time",
            Dimension::Length => "length",
            Dimension::Field => "electric field",
            Dimension::Gradient => "field gradient",
            Dimension::Polarizability => "polarizability",
            Dimension::Energy => "energy",
            Dimension::Angle => "angle",
            Dimension::Wavevector => "wavevector",
        };
        f.write_str(name)
    }
}

const TWO_PI: f64 = 2.0 * PI;
/// h c per cm⁻¹ (J).
const PER_CM: f64 = H_PLANCK * 299_792_458.0 * 100.0;
/// Token converted through the spectroscopic helper rather than a factor.
const MHZ_PER_VCM2: &str = "MHz/(V/cm)^2";

/// Token, dimension and SI factor. Hz-family tokens are ordinary frequencies
/// and pick up 2π; for energies they mean h·ν.
const UNITS: &[(&str, Dimension, f64)] = &[
    ("1", Dimension::Dimensionless, 1.0),
    ("%", Dimension::Dimensionless, 0.01),
    ("Hz", Dimension::Frequency, TWO_PI),
    ("kHz", Dimension::Frequency, TWO_PI * 1e3),
    ("MHz", Dimension::Frequency, TWO_PI * 1e6),
    ("GHz", Dimension::Frequency, TWO_PI * 1e9),
    ("rad/s", Dimension::Frequency, 1.0),
    ("krad/s", Dimension::Frequency, 1e3),
    ("Mrad/s", Dimension::Frequency, 1e6),
    ("1/s", Dimension::Frequency, 1.0),
    ("1/ms", Dimension::Frequency, 1e3),
    ("1/us", Dimension::Frequency, 1e6),
    ("1/ns", Dimension::Frequency, 1e9),
    ("s", Dimension::Time, 1.0),
    ("ms", Dimension::Time, 1e-3),
    ("us", Dimension::Time, 1e-6),
    ("µs", Dimension::Time, 1e-6),
    ("ns", Dimension::Time, 1e-9),
    ("ps", Dimension::Time, 1e-12),
    ("m", Dimension::Length, 1.0),
    ("mm", Dimension::Length, 1e-3),
    ("um", Dimension::Length, 1e-6),
    ("µm", Dimension::Length, 1e-6),
    ("nm", Dimension::Length, 1e-9),
    ("V/m", Dimension::Field, 1.0),
    ("V/cm", Dimension::Field, 100.0),
    ("mV/cm", Dimension::Field, 0.1),
    ("kV/m", Dimension::Field, 1e3),
    ("V/m^2", Dimension::Gradient, 1.0),
    ("V/cm^2", Dimension::Gradient, 1e4),
    ("V/mm^2", Dimension::Gradient, 1e6),
    ("C^2m^2/J", Dimension::Polarizability, 1.0),
    (MHZ_PER_VCM2, Dimension::Polarizability, 1.0),
    ("J", Dimension::Energy, 1.0),
    ("eV", Dimension::Energy, E_CHARGE),
    ("meV", Dimension::Energy, 1e-3 * E_CHARGE),
    ("cm^-1", Dimension::Energy, PER_CM),
    ("1/cm", Dimension::Energy, PER_CM),
    ("h*kHz", Dimension::Energy, H_PLANCK * 1e3),
    ("h*MHz", Dimension::Energy, H_PLANCK * 1e6),
    ("h*GHz", Dimension::Energy, H_PLANCK * 1e9),
    ("hbar/us", Dimension::Energy, HBAR * 1e6),
    ("rad", Dimension::Angle, 1.0),
    ("deg", Dimension::Angle, PI / 180.0),
    ("pi", Dimension::Angle, PI),
    ("1/m", Dimension::Wavevector, 1.0),
    ("1/um", Dimension::Wavevector, 1e6),
    ("1/nm", Dimension::Wavevector, 1e9),
];

fn lookup(token: &str) -> Option<(Dimension, f64)> {
    UNITS.iter().find(|(t, _, _)| *t == token).map(|(_, d, f)| (*d, *f))
}

/// Converts a value written in `unit` into SI.
fn to_si(value: f64, unit: &str, factor: f64) -> f64 {
    if unit == MHZ_PER_VCM2 {
        polarizability_from_mhz_per_vcm2(value)
    } else {
        value * factor
    }
}

/// A number with its unit token as written.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    /// Splits "4.9 MHz" into value and token; bare numbers carry the token "1".
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let split = text.find(|c: char| c.is_whitespace()).unwrap_or(text.len());
        let (number, unit) = text.split_at(split);
        let value: f64 = number.parse().map_err(|_| format!("`{text}` does not start with a number"))?;
        if !value.is_finite() {
            return Err(format!("`{text}` is not finite"));
        }
        let unit = unit.trim();
        let unit = if unit.is_empty() { "1" } else { unit };
        if lookup(unit).is_none() {
            return Err(format!("unknown unit `{unit}`"));
        }
        Ok(Quantity { value, unit: unit.to_string() })
    }

    pub fn dimension(&self) -> Dimension {
        lookup(&self.unit).map(|(d, _)| d).unwrap_or(Dimension::Dimensionless)
    }

    /// SI value, checking the dimension.
    pub fn si(&self, expected: Dimension) -> Result<f64, String> {
        let (dim, factor) = lookup(&self.unit).ok_or_else(|| format!("unknown unit `{}`", self.unit))?;
        if dim != expected {
            return Err(format!("expected a {expected}, got `{}` ({dim})", self.unit));
        }
        Ok(to_si(self.value, &self.unit, factor))
    }
}

/// Parses `text` as a quantity of dimension `expected` and returns SI.
pub fn parse_si(text: &str, expected: Dimension) -> Result<f64, String> {
    Quantity::parse(text)?.si(expected)
}

/// Expresses an SI value in `unit` for output.
pub fn in_unit(value: f64, unit: &str) -> f64 {
    match lookup(unit) {
        Some(_) if unit == MHZ_PER_VCM2 => rydion::constants::polarizability_to_mhz_per_vcm2(value),
        Some((_, f)) => value / f,
        None => panic!("output unit `{unit}` is not registered"),
    }
}
