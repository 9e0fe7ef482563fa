//! Scenario files and the parameter reader that tracks which keys were used.

use crate::units::{Dimension, Quantity};
use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;
use toml::{Table, Value};

/// A problem in the scenario, located by its dotted key path.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data file missing: {}", .0.display())]
    DataFileMissing(PathBuf),
    #[error("{kind} scenario failed: {message}")]
    Module { kind: Kind, message: String },
    #[error("cannot access {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::DataFileMissing(_) => 2,
            CliError::Module { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn module(kind: Kind, err: impl fmt::Display) -> Self {
        CliError::Module { kind, message: err.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Spectrum,
    Modes,
    Rabi,
    AutlerTownes,
    Stirap,
    GeometricGate,
    Blockade,
    KickGate,
    Transport,
    Plaquette,
    SeriesFit,
    LineFit,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Spectrum,
        Kind::Modes,
        Kind::Rabi,
        Kind::AutlerTownes,
        Kind::Stirap,
        Kind::GeometricGate,
        Kind::Blockade,
        Kind::KickGate,
        Kind::Transport,
        Kind::Plaquette,
        Kind::SeriesFit,
        Kind::LineFit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::Modes => "modes",
            Kind::Rabi => "rabi",
            Kind::AutlerTownes => "autler_townes",
            Kind::Stirap => "stirap",
            Kind::GeometricGate => "geometric_gate",
            Kind::Blockade => "blockade",
            Kind::KickGate => "kick_gate",
            Kind::Transport => "transport",
            Kind::Plaquette => "plaquette",
            Kind::SeriesFit => "series_fit",
            Kind::LineFit => "line_fit",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown kind `{s}`; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Delimited,
    Structured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Dotted path below `parameters`.
    pub parameter: String,
    /// Grid values as written, each a TOML value to substitute.
    pub values: Vec<Value>,
    /// Summary column to fit with a decaying exponential.
    pub fit: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: Kind,
    pub seed: u64,
    pub parameters: Table,
    pub sweep: Option<SweepSpec>,
    pub stem: String,
    pub format: Format,
    /// Directory that relative data paths resolve against.
    pub base_dir: PathBuf,
}

const MAX_GRID: usize = 100_000;

impl Scenario {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("<file>", e.message().trim().to_string()))?;
        let top = Reader::new(&root, "");
        let kind: Kind = top.text("kind")?.parse().map_err(|m: String| ConfigError::new("kind", m))?;
        let seed = top.count_or("seed", 0)? as u64;
        let parameters = match root.get("parameters") {
            Some(Value::Table(t)) => {
                top.mark("parameters");
                t.clone()
            }
            Some(_) => return Err(ConfigError::new("parameters", "must be a table")),
            None => Table::new(),
        };
        let stem = top.text_or("output.path", kind.name())?;
        if stem.is_empty() || stem.contains(['/', '\\']) {
            return Err(ConfigError::new("output.path", "must be a plain file stem"));
        }
        let format = match top.choice("output.format", &["delimited", "structured"], "delimited")? {
            "structured" => Format::Structured,
            _ => Format::Delimited,
        };
        let sweep = if top.has("sweep") { Some(parse_sweep(&top)?) } else { None };
        top.finish()?;
        Ok(Scenario { kind, seed, parameters, sweep, stem, format, base_dir: base_dir.to_path_buf() })
    }

    pub fn reader(&self) -> Reader<'_> {
        Reader::with_base(&self.parameters, "parameters", &self.base_dir)
    }

    /// Copy with the value at a dotted path below `parameters` replaced.
    pub fn with_value(&self, path: &str, value: Value) -> Result<Scenario, ConfigError> {
        let mut out = self.clone();
        let full = format!("parameters.{path}");
        let mut table = &mut out.parameters;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            if i + 1 == keys.len() {
                match table.get_mut(*key) {
                    Some(slot) if !slot.is_table() => *slot = value.clone(),
                    Some(_) => return Err(ConfigError::new(full, "sweep parameter must name a value, not a table")),
                    None => return Err(ConfigError::new(full, "sweep parameter does not resolve to a key in the scenario")),
                }
            } else {
                table = match table.get_mut(*key) {
                    Some(Value::Table(t)) => t,
                    _ => return Err(ConfigError::new(full, "sweep parameter does not resolve to a key in the scenario")),
                };
            }
        }
        Ok(out)
    }
}

fn parse_sweep(top: &Reader) -> Result<SweepSpec, ConfigError> {
    let parameter = top.text("sweep.parameter")?;
    let parameter = parameter.strip_prefix("parameters.").unwrap_or(&parameter).to_string();
    let values = match (top.lookup("sweep.values"), top.lookup("sweep.range")) {
        (Some(_), Some(_)) => return Err(ConfigError::new("sweep", "give either `values` or `range`, not both")),
        (Some(Value::Array(items)), None) => {
            top.mark("sweep.values");
            for (i, v) in items.iter().enumerate() {
                grid_number(v).map_err(|m| ConfigError::new(format!("sweep.values[{i}]"), m))?;
            }
            items.clone()
        }
        (Some(_), None) => return Err(ConfigError::new("sweep.values", "must be an array")),
        (None, Some(_)) => {
            let start = Quantity::parse(&top.text("sweep.range.start")?).map_err(|m| ConfigError::new("sweep.range.start", m))?;
            let stop = Quantity::parse(&top.text("sweep.range.stop")?).map_err(|m| ConfigError::new("sweep.range.stop", m))?;
            if start.unit != stop.unit {
                return Err(ConfigError::new("sweep.range", "start and stop must use the same unit"));
            }
            let points = top.count("sweep.range.points")?;
            if points > MAX_GRID {
                return Err(ConfigError::new("sweep.range.points", format!("at most {MAX_GRID} points")));
            }
            let step = if points > 1 { (stop.value - start.value) / (points - 1) as f64 } else { 0.0 };
            (0..points).map(|i| Value::String(format!("{} {}", start.value + step * i as f64, start.unit))).collect()
        }
        (None, None) => return Err(ConfigError::new("sweep", "needs `values` or `range`")),
    };
    let fit = top.opt_text("sweep.fit")?;
    Ok(SweepSpec { parameter, values, fit })
}

/// Numeric part and unit token of a grid value.
pub fn grid_number(v: &Value) -> Result<(f64, String), String> {
    match v {
        Value::String(s) => Quantity::parse(s).map(|q| (q.value, q.unit)),
        Value::Integer(i) => Ok((*i as f64, "1".into())),
        Value::Float(f) if f.is_finite() => Ok((*f, "1".into())),
        _ => Err("grid values must be finite numbers or unit strings".into()),
    }
}

/// Reads keys from a TOML table and reports the ones nobody asked for.
pub struct Reader<'a> {
    root: &'a Table,
    prefix: &'a str,
    base_dir: Option<&'a Path>,
    used: RefCell<BTreeSet<String>>,
    data_files: RefCell<Vec<PathBuf>>,
}

impl<'a> Reader<'a> {
    pub fn new(root: &'a Table, prefix: &'a str) -> Self {
        Reader { root, prefix, base_dir: None, used: RefCell::new(BTreeSet::new()), data_files: RefCell::new(Vec::new()) }
    }

    pub fn with_base(root: &'a Table, prefix: &'a str, base_dir: &'a Path) -> Self {
        Reader { base_dir: Some(base_dir), ..Reader::new(root, prefix) }
    }

    fn full(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::new(self.full(key), message)
    }

    fn lookup(&self, key: &str) -> Option<&'a Value> {
        let mut parts = key.split('.');
        let mut value = self.root.get(parts.next()?)?;
        for p in parts {
            value = value.as_table()?.get(p)?;
        }
        Some(value)
    }

    fn mark(&self, key: &str) {
        self.used.borrow_mut().insert(key.to_string());
    }

    pub fn has(&self, key: &str) -> bool {
        self.lookup(key).is_some()
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        let v = self.lookup(key)?;
        self.mark(key);
        Some(v)
    }

    fn require(&self, key: &str) -> Result<&'a Value, ConfigError> {
        self.get(key).ok_or_else(|| self.error(key, "required key is missing"))
    }

    fn to_quantity(&self, key: &str, value: &Value, dim: Dimension) -> Result<f64, ConfigError> {
        match value {
            Value::String(s) => Quantity::parse(s).and_then(|q| q.si(dim)).map_err(|m| self.error(key, m)),
            Value::Integer(i) if dim == Dimension::Dimensionless => Ok(*i as f64),
            Value::Float(f) if dim == Dimension::Dimensionless && f.is_finite() => Ok(*f),
            Value::Integer(_) | Value::Float(_) => Err(self.error(key, format!("a {dim} needs a unit, e.g. \"{}\"", example_unit(dim)))),
            _ => Err(self.error(key, format!("expected a {dim}"))),
        }
    }

    pub fn quantity(&self, key: &str, dim: Dimension) -> Result<f64, ConfigError> {
        let v = self.require(key)?;
        self.to_quantity(key, v, dim)
    }

    pub fn opt_quantity(&self, key: &str, dim: Dimension) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|v| self.to_quantity(key, v, dim)).transpose()
    }

    pub fn quantity_or(&self, key: &str, dim: Dimension, default: f64) -> Result<f64, ConfigError> {
        Ok(self.opt_quantity(key, dim)?.unwrap_or(default))
    }

    /// An array of quantities, or a single quantity repeated `len` times.
    pub fn quantity_list(&self, key: &str, dim: Dimension, len: usize) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => {
                if items.len() != len {
                    return Err(self.error(key, format!("expected {len} entries, found {}", items.len())));
                }
                items.iter().enumerate().map(|(i, v)| self.to_quantity(&format!("{key}[{i}]"), v, dim)).collect::<Result<_, _>>().map(Some)
            }
            Some(v) => Ok(Some(vec![self.to_quantity(key, v, dim)?; len])),
        }
    }

    /// Any-length array of quantities.
    pub fn quantity_array(&self, key: &str, dim: Dimension) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items.iter().enumerate().map(|(i, v)| self.to_quantity(&format!("{key}[{i}]"), v, dim)).collect::<Result<_, _>>().map(Some),
            Some(_) => Err(self.error(key, "expected an array")),
        }
    }

    pub fn count(&self, key: &str) -> Result<usize, ConfigError> {
        match self.require(key)? {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(self.error(key, "expected a non-negative integer")),
        }
    }

    pub fn count_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        if self.has(key) {
            self.count(key)
        } else {
            Ok(default)
        }
    }

    pub fn indices(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(self.error(key, "expected an array of non-negative integers")),
                })
                .collect(),
            Some(_) => Err(self.error(key, "expected an array of non-negative integers")),
        }
    }

    pub fn flag_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.error(key, "expected true or false")),
        }
    }

    pub fn text(&self, key: &str) -> Result<String, ConfigError> {
        match self.require(key)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.error(key, "expected a string")),
        }
    }

    pub fn opt_text(&self, key: &str) -> Result<Option<String>, ConfigError> {
        if self.has(key) {
            self.text(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn text_or(&self, key: &str, default: &str) -> Result<String, ConfigError> {
        Ok(self.opt_text(key)?.unwrap_or_else(|| default.to_string()))
    }

    /// One of `options`, returned as the matching static string.
    pub fn choice(&self, key: &str, options: &[&'static str], default: &'static str) -> Result<&'static str, ConfigError> {
        match self.opt_text(key)? {
            None => Ok(default),
            Some(s) => options.iter().copied().find(|o| *o == s).ok_or_else(|| self.error(key, format!("`{s}` is not one of {}", options.join(", ")))),
        }
    }

    /// Data file path resolved against the scenario directory; must exist.
    pub fn data_file(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        let Some(name) = self.opt_text(key)? else {
            return Ok(None);
        };
        let path = match self.base_dir {
            Some(dir) if Path::new(&name).is_relative() => dir.join(&name),
            _ => PathBuf::from(&name),
        };
        if !path.is_file() {
            return Err(CliError::DataFileMissing(path));
        }
        self.data_files.borrow_mut().push(path.clone());
        Ok(Some(path))
    }

    pub fn data_files(&self) -> Vec<PathBuf> {
        self.data_files.borrow().clone()
    }

    /// Fails on the first key that was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let mut stack: Vec<(String, &Table)> = vec![(String::new(), self.root)];
        while let Some((path, table)) = stack.pop() {
            for (k, v) in table {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                if used.contains(&key) {
                    continue;
                }
                match v {
                    Value::Table(t) if used.iter().any(|u| u.starts_with(&format!("{key}."))) => stack.push((key, t)),
                    _ => return Err(self.error(&key, "unknown key")),
                }
            }
        }
        Ok(())
    }
}

fn example_unit(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Dimensionless => "1",
        Dimension::Frequency => "1 MHz",
        Dimension::Time => "2 us",
        Dimension::Length => "4 um",
        Dimension::Field => "24 V/m",
        Dimension::Gradient => "1e7 V/m^2",
        Dimension::Polarizability => "800 MHz/(V/cm)^2",
        Dimension::Energy => "1 cm^-1",
        Dimension::Angle => "1 pi",
        Dimension::Wavevector => "2.2e7 1/m",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(text: &str) -> Result<Scenario, ConfigError> {
        Scenario::parse(text, Path::new("."))
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let e = scenario("kind = \"modes\"\ncolour = 3\n").unwrap_err();
        assert_eq!(e.path, "colour");
    }

    #[test]
    fn unknown_parameter_is_named_with_its_path() {
        let s = scenario("kind = \"modes\"\n[parameters.trap]\naxial = \"1 MHz\"\naxail = \"1 MHz\"\n").unwrap();
        let r = s.reader();
        r.quantity("trap.axial", Dimension::Frequency).unwrap();
        let e = r.finish().unwrap_err();
        assert_eq!(e.path, "parameters.trap.axail");
        assert!(e.to_string().contains("unknown key"));
    }

    #[test]
    fn untouched_table_is_reported_whole() {
        let s = scenario("kind = \"modes\"\n[parameters.extra]\na = 1\n").unwrap();
        assert_eq!(s.reader().finish().unwrap_err().path, "parameters.extra");
    }

    #[test]
    fn numbers_without_units_are_rejected_for_dimensioned_keys() {
        let s = scenario("kind = \"modes\"\n[parameters]\naxial = 1e6\n").unwrap();
        let e = s.reader().quantity("axial", Dimension::Frequency).unwrap_err();
        assert!(e.message.contains("needs a unit"));
    }

    #[test]
    fn bad_kind_lists_the_options() {
        let e = scenario("kind = \"laser\"\n").unwrap_err();
        assert_eq!(e.path, "kind");
        assert!(e.message.contains("geometric_gate"));
    }

    #[test]
    fn range_grid_is_expanded_in_its_unit() {
        let s = scenario("kind = \"stirap\"\n[parameters]\nwait = \"0 us\"\n[sweep]\nparameter = \"wait\"\nrange = { start = \"0 us\", stop = \"10 us\", points = 3 }\n").unwrap();
        let sw = s.sweep.unwrap();
        assert_eq!(sw.values, vec![Value::String("0 us".into()), Value::String("5 us".into()), Value::String("10 us".into())]);
    }

    #[test]
    fn substitution_requires_an_existing_key() {
        let s = scenario("kind = \"stirap\"\n[parameters]\nwait = \"0 us\"\n").unwrap();
        assert!(s.with_value("wiat", Value::String("1 us".into())).is_err());
        let t = s.with_value("wait", Value::String("1 us".into())).unwrap();
        assert_eq!(t.reader().quantity("wait", Dimension::Time).unwrap(), 1e-6);
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::from(ConfigError::new("a", "b")).exit_code(), 2);
        assert_eq!(CliError::DataFileMissing("x".into()).exit_code(), 2);
        assert_eq!(CliError::module(Kind::Rabi, "diverged").exit_code(), 3);
    }
}
