//! Result tables, summaries and their on-disk formats.

use crate::config::{CliError, Format, Kind};
use crate::units::in_unit;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

/// Rows are stored in the column units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[(&str, &str)]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|(n, u)| Column { name: n.to_string(), unit: u.to_string() }).collect(), rows: Vec::new() }
    }

    pub fn with_columns(name: &str, columns: Vec<Column>) -> Self {
        Table { name: name.into(), columns, rows: Vec::new() }
    }

    /// Appends a row given in SI.
    pub fn push(&mut self, si: &[f64]) {
        assert_eq!(si.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(si.iter().zip(&self.columns).map(|(v, c)| in_unit(*v, &c.unit)).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c.name == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn column(name: impl Into<String>, unit: &str) -> Column {
    Column { name: name.into(), unit: unit.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scalar {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

/// Everything a scenario produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Outcome {
    pub scalars: Vec<Scalar>,
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
    pub tables: Vec<Table>,
}

impl Outcome {
    /// Records an SI scalar shown in `unit`.
    pub fn scalar(&mut self, name: &str, si: f64, unit: &str) {
        self.scalars.push(Scalar { name: name.into(), value: in_unit(si, unit), unit: unit.into() });
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|s| s.name == name).map(|s| s.value)
    }
}

/// Provenance stamped on every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub kind: String,
    pub input_sha256: String,
    pub data_sha256: Vec<(String, String)>,
    pub seed: u64,
    pub versions: Versions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Versions {
    pub rydion: &'static str,
    #[serde(rename = "rydion-cli")]
    pub rydion_cli: &'static str,
}

pub const VERSIONS: Versions = Versions { rydion: rydion::VERSION, rydion_cli: env!("CARGO_PKG_VERSION") };

impl Provenance {
    pub fn new(kind: Kind, input_sha256: String, data_sha256: Vec<(String, String)>, seed: u64) -> Self {
        Provenance { kind: kind.name().into(), input_sha256, data_sha256, seed, versions: VERSIONS }
    }

    fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("rydion-cli {} (rydion {})", self.versions.rydion_cli, self.versions.rydion),
            format!("kind: {}", self.kind),
            format!("input-sha256: {}", self.input_sha256),
        ];
        lines.extend(self.data_sha256.iter().map(|(f, h)| format!("data-sha256: {h} {f}")));
        lines.push(format!("seed: {}", self.seed));
        lines
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    scalars: &'a [Scalar],
    lines: &'a [String],
    warnings: &'a [String],
    table_files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tables: Option<&'a [Table]>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Delimited table: '#' metadata lines, a '#' column header with units, comma rows.
pub fn write_delimited(path: &Path, provenance: &Provenance, table: &Table) -> Result<(), CliError> {
    let mut out = Vec::new();
    for line in provenance.header_lines() {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "# table: {}", table.name).unwrap();
    let header: Vec<String> = table.columns.iter().map(|c| format!("{} [{}]", c.name, c.unit)).collect();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(&header).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    let header_line = String::from_utf8(w.into_inner().unwrap()).unwrap();
    write!(out, "# {header_line}").unwrap();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in &table.rows {
        let record: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        w.write_record(&record).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: path.into(), source: e.into_error() })?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Shortest representation that round-trips.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

/// Writes the tables and the summary; returns the files written.
pub fn write_outcome(dir: &Path, stem: &str, format: Format, provenance: &Provenance, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    if format == Format::Delimited {
        for (i, table) in outcome.tables.iter().enumerate() {
            let name = if i == 0 { format!("{stem}.csv") } else { format!("{stem}.{}.csv", table.name) };
            let path = dir.join(&name);
            write_delimited(&path, provenance, table)?;
            files.push(path);
        }
    }
    let summary = Summary {
        provenance,
        scalars: &outcome.scalars,
        lines: &outcome.lines,
        warnings: &outcome.warnings,
        table_files: files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        tables: (format == Format::Structured).then_some(&outcome.tables[..]),
    };
    let path = dir.join(format!("{stem}.summary.json"));
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    files.push(path);
    Ok(files)
}

/// Columns of a delimited file: names with units, and rows of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct DelimitedData {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl DelimitedData {
    pub fn find(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Reads a table written by [`write_delimited`] or by hand in the same layout.
/// The last '#' line before the first data row is the column header.
pub fn read_delimited(text: &str) -> Result<DelimitedData, String> {
    let header = text
        .lines()
        .take_while(|l| l.trim_start().starts_with('#') || l.trim().is_empty())
        .filter(|l| l.trim_start().starts_with('#'))
        .last()
        .ok_or("no '#' column header")?;
    let header = header.trim_start().trim_start_matches('#');
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(header.as_bytes());
    let names = reader.records().next().ok_or("empty column header")?.map_err(|e| e.to_string())?;
    let columns = names
        .iter()
        .map(|h| match (h.find('['), h.rfind(']')) {
            (Some(a), Some(b)) if b > a => Ok(column(h[..a].trim(), h[a + 1..b].trim())),
            _ => Err(format!("column `{h}` has no [unit] token")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != columns.len() {
            return Err(format!("row {} has {} fields, header has {}", i + 1, record.len(), columns.len()));
        }
        rows.push(record.iter().map(|f| f.parse::<f64>().map_err(|_| format!("row {}: `{f}` is not a number", i + 1))).collect::<Result<_, _>>()?);
    }
    Ok(DelimitedData { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimited_round_trip_keeps_units_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("main", &[("time", "us"), ("population", "1")]);
        t.push(&[1.5e-6, 0.25]);
        t.push(&[3e-6, 1.0 / 3.0]);
        let p = Provenance::new(Kind::Rabi, "abc".into(), vec![], 4);
        let path = dir.path().join("t.csv");
        write_delimited(&path, &p, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("# time [us],population [1]\n"));
        assert!(text.contains("# seed: 4"));
        let back = read_delimited(&text).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows, t.rows);
    }

    #[test]
    fn missing_unit_token_is_an_error() {
        assert!(read_delimited("# n,energy\n1,2\n").unwrap_err().contains("no [unit]"));
    }
}
