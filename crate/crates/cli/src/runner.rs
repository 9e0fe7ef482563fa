//! `run`, `sweep` and `fit` on top of the scenario runners.

use crate::config::{grid_number, CliError, ConfigError, Format, Kind, Scenario, SweepSpec};
use crate::output::{column, format_number, write_delimited, write_outcome, Outcome, Provenance, Table};
use crate::scenarios;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use toml::{Table as TomlTable, Value};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A parsed scenario with the hash of the text it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub input_sha256: String,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| ConfigError::new("<scenario>", format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| ConfigError::new("<scenario>", "file is not UTF-8"))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = Scenario::parse(&text, base)?;
    Ok(Loaded { scenario, input_sha256: sha256_hex(&bytes) })
}

/// Scenario for `rydion fit <kind> <data-file>` with `key=value` overrides.
pub fn fit_scenario(kind: &str, data: &Path, sets: &[String]) -> Result<Loaded, CliError> {
    let kind = match kind {
        "series" | "series_fit" => Kind::SeriesFit,
        "line" | "line_fit" => Kind::LineFit,
        other => return Err(ConfigError::new("kind", format!("`{other}` cannot be fitted; use `series` or `line`")).into()),
    };
    let mut root = TomlTable::new();
    root.insert("kind".into(), Value::String(kind.name().into()));
    let mut params = TomlTable::new();
    params.insert("data".into(), Value::String(data.to_string_lossy().into_owned()));
    for set in sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| ConfigError::new(set.clone(), "overrides are written key=value"))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}").parse::<TomlTable>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()));
        insert_dotted(&mut params, key, value).map_err(|m| ConfigError::new(format!("parameters.{key}"), m))?;
    }
    root.insert("parameters".into(), Value::Table(params));
    let text = toml::to_string(&root).expect("table serializes");
    let scenario = Scenario::parse(&text, Path::new("."))?;
    Ok(Loaded { scenario, input_sha256: sha256_hex(text.as_bytes()) })
}

fn insert_dotted(table: &mut TomlTable, key: &str, value: Value) -> Result<(), String> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => match table.entry(head.to_string()).or_insert_with(|| Value::Table(TomlTable::new())) {
            Value::Table(t) => insert_dotted(t, rest, value),
            _ => Err(format!("`{head}` is already a value")),
        },
    }
}

/// Runs one scenario on generator stream `stream` of `seed`.
fn execute(scenario: &Scenario, seed: u64, stream: u64) -> Result<(Outcome, Vec<PathBuf>), CliError> {
    let reader = scenario.reader();
    let job = scenarios::prepare(scenario.kind, &reader)?;
    reader.finish()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let outcome = job(&mut rng)?;
    Ok((outcome, reader.data_files()))
}

fn data_hashes(files: &[PathBuf]) -> Result<Vec<(String, String)>, CliError> {
    files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|source| CliError::Io { path: p.clone(), source })?;
            Ok((p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(), sha256_hex(&bytes)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

pub fn run(loaded: &Loaded, seed: Option<u64>, out_dir: &Path) -> Result<RunReport, CliError> {
    let s = &loaded.scenario;
    let seed = seed.unwrap_or(s.seed);
    let (outcome, data) = execute(s, seed, 0)?;
    let provenance = Provenance::new(s.kind, loaded.input_sha256.clone(), data_hashes(&data)?, seed);
    let files = write_outcome(out_dir, &s.stem, s.format, &provenance, &outcome)?;
    Ok(RunReport { outcome, files })
}

/// Exponential decay fitted to one summary column against the swept value.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub column: String,
    pub amplitude: f64,
    /// Decay constant in the unit of the swept parameter.
    pub decay_constant: f64,
    pub decay_constant_sigma: f64,
    pub unit: String,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub table: Table,
    pub errors: Vec<String>,
    pub fit: Option<DecayFit>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    parameter: &'a str,
    unit: &'a str,
    points: usize,
    failed_points: usize,
    fit: &'a Option<DecayFit>,
    warnings: &'a [String],
    table_files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<&'a Table>,
    errors: Vec<PointError<'a>>,
}

#[derive(Serialize)]
struct PointError<'a> {
    point: usize,
    message: &'a str,
}

fn resolves(scenario: &Scenario, path: &str) -> bool {
    let mut parts = path.split('.');
    let Some(mut value) = parts.next().and_then(|k| scenario.parameters.get(k)) else {
        return false;
    };
    for p in parts {
        match value.as_table().and_then(|t| t.get(p)) {
            Some(v) => value = v,
            None => return false,
        }
    }
    !value.is_table()
}

/// One row per grid point with every summary scalar. Failed points are NaN rows
/// and their messages go to the sweep summary.
pub fn sweep(loaded: &Loaded, spec: Option<SweepSpec>, seed: Option<u64>, out_dir: &Path) -> Result<SweepReport, CliError> {
    let s = &loaded.scenario;
    let seed = seed.unwrap_or(s.seed);
    let spec = spec.or_else(|| s.sweep.clone()).ok_or_else(|| ConfigError::new("sweep", "no [sweep] section and no --parameter/--values given"))?;
    let full = format!("parameters.{}", spec.parameter);
    if !resolves(s, &spec.parameter) {
        return Err(ConfigError::new(full, "sweep parameter does not resolve to a value in the scenario").into());
    }
    let mut numbers = Vec::with_capacity(spec.values.len());
    let mut unit: Option<String> = None;
    for (i, v) in spec.values.iter().enumerate() {
        let (x, u) = grid_number(v).map_err(|m| ConfigError::new(format!("sweep.values[{i}]"), m))?;
        match &unit {
            Some(prev) if *prev != u => return Err(ConfigError::new(format!("sweep.values[{i}]"), format!("unit `{u}` differs from `{prev}`")).into()),
            _ => unit = Some(u),
        }
        numbers.push(x);
    }
    let unit = unit.unwrap_or_else(|| "1".into());

    let results: Vec<Result<(Outcome, Vec<PathBuf>), CliError>> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let point = s.with_value(&spec.parameter, v.clone())?;
            execute(&point, seed, i as u64)
        })
        .collect();

    // every scalar seen at any point, in order of first appearance
    let mut template: Vec<crate::output::Scalar> = Vec::new();
    for (o, _) in results.iter().filter_map(|r| r.as_ref().ok()) {
        for sc in &o.scalars {
            if !template.iter().any(|t| t.name == sc.name) {
                template.push(sc.clone());
            }
        }
    }
    let mut columns = vec![column("point", "1"), column(spec.parameter.clone(), &unit)];
    columns.extend(template.iter().map(|sc| column(sc.name.clone(), &sc.unit)));
    let mut table = Table::with_columns("sweep", columns);
    let mut errors = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    let mut data = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let mut row = vec![i as f64, numbers[i]];
        match r {
            Ok((o, files)) => {
                row.extend(template.iter().map(|sc| o.get(&sc.name).unwrap_or(f64::NAN)));
                errors.push(String::new());
                warnings.extend(o.warnings.iter().map(|w| format!("point {i}: {w}")));
                data.extend(files.iter().cloned());
            }
            Err(e) => {
                row.extend(template.iter().map(|_| f64::NAN));
                errors.push(e.to_string());
            }
        }
        table.rows.push(row);
    }
    data.sort();
    data.dedup();

    let fit = match &spec.fit {
        None => None,
        Some(name) => {
            let y = table.column(name).ok_or_else(|| ConfigError::new("sweep.fit", format!("`{name}` is not a summary column of this kind")))?;
            let (x, y): (Vec<f64>, Vec<f64>) = numbers.iter().zip(&y).filter(|(_, v)| v.is_finite()).map(|(a, b)| (*a, *b)).unzip();
            match rydion::dynamics::fit_exponential_decay(&x, &y) {
                Ok((amplitude, tau, sigma)) => Some(DecayFit { column: name.clone(), amplitude, decay_constant: tau, decay_constant_sigma: sigma, unit: unit.clone() }),
                Err(e) => {
                    warnings.push(format!("exponential fit of `{name}` failed: {e}"));
                    None
                }
            }
        }
    };

    let provenance = Provenance::new(s.kind, loaded.input_sha256.clone(), data_hashes(&data)?, seed);
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io { path: out_dir.into(), source })?;
    let mut files = Vec::new();
    if s.format == Format::Delimited {
        let path = out_dir.join(format!("{}.sweep.csv", s.stem));
        write_delimited(&path, &provenance, &table)?;
        files.push(path);
    }
    let summary = SweepSummary {
        provenance: &provenance,
        parameter: &spec.parameter,
        unit: &unit,
        points: numbers.len(),
        failed_points: errors.iter().filter(|e| !e.is_empty()).count(),
        fit: &fit,
        warnings: &warnings,
        table_files: files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        table: (s.format == Format::Structured).then_some(&table),
        errors: errors.iter().enumerate().filter(|(_, e)| !e.is_empty()).map(|(point, e)| PointError { point, message: e }).collect(),
    };
    let path = out_dir.join(format!("{}.sweep.summary.json", s.stem));
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
    files.push(path);
    Ok(SweepReport { table, errors, fit, warnings, files })
}

/// Terminal rendering of an outcome.
pub fn describe(kind: Kind, outcome: &Outcome) -> String {
    let mut text = String::new();
    for line in &outcome.lines {
        text.push_str(&format!("{kind}: {line}\n"));
    }
    for s in &outcome.scalars {
        text.push_str(&format!("  {} = {} {}\n", s.name, format_number(s.value), s.unit));
    }
    for w in &outcome.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text
}
