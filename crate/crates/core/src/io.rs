//! File formats: counts tables, decay samples, reports and run manifests.
//!
//! CSV outputs start with a `#` comment block carrying provenance, then a
//! single header line. Floats use Rust's shortest round-trip formatting, so
//! identical values always give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::decoherence::DecaySample;
use crate::entanglement::AngleSettings;
use crate::error::{Error, Result};
use crate::mc::CountsTable;

/// Key/value lines written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: &str, seed: Option<u64>) -> Self {
        Provenance {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("command".to_string(), self.command.clone()),
            ("config_hash".to_string(), self.config_hash.clone()),
        ];
        if let Some(s) = self.seed {
            out.push(("seed".to_string(), s.to_string()));
        }
        out.extend(self.extra.iter().cloned());
        out
    }

    pub fn comment_block(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.lines() {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

pub const COUNTS_HEADER: [&str; 12] = [
    "t_seconds",
    "theta_s_rad",
    "theta_as_rad",
    "theta_s_deg",
    "theta_as_deg",
    "n_pulses",
    "n_d1",
    "n_d2",
    "c13",
    "c24",
    "c14",
    "c23",
];

fn opt_float(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn counts_to_csv(tables: &[CountsTable], prov: &Provenance) -> String {
    let mut s = prov.comment_block();
    s.push_str(&COUNTS_HEADER.join(","));
    s.push('\n');
    for t in tables {
        let a = t.settings;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            opt_float(t.storage_time),
            a.theta_s,
            a.theta_as,
            a.theta_s.to_degrees(),
            a.theta_as.to_degrees(),
            t.n_pulses,
            t.n_d1,
            t.n_d2,
            t.c13,
            t.c24,
            t.c14,
            t.c23
        );
    }
    s
}

fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn parse_f64(path: &Path, row: usize, col: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            schema(
                path,
                format!("row {row}, column '{col}': '{raw}' is not a finite number"),
            )
        })
}

fn parse_u64(path: &Path, row: usize, col: &str, raw: &str) -> Result<u64> {
    raw.parse::<u64>().map_err(|_| {
        schema(
            path,
            format!("row {row}, column '{col}': '{raw}' is not a non-negative integer"),
        )
    })
}

/// Parses counts-table CSV text. `path` is only used in messages.
pub fn parse_counts_csv(text: &str, path: &Path) -> Result<Vec<CountsTable>> {
    let mut records = reader(text).into_records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| schema(path, e.to_string()))?,
        None => return Err(schema(path, "empty file, expected a header line")),
    };
    let names: Vec<&str> = header.iter().collect();
    for n in &names {
        if !COUNTS_HEADER.contains(n) {
            return Err(schema(path, format!("unknown column '{n}'")));
        }
    }
    let index = |name: &str| names.iter().position(|n| *n == name);
    let required = [
        "theta_s_rad",
        "theta_as_rad",
        "n_pulses",
        "n_d1",
        "n_d2",
        "c13",
        "c24",
        "c14",
        "c23",
    ];
    let mut cols = [0usize; 9];
    for (slot, name) in cols.iter_mut().zip(required) {
        *slot = index(name).ok_or_else(|| schema(path, format!("missing column '{name}'")))?;
    }
    let t_col = index("t_seconds");

    let mut tables = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(schema(
                path,
                format!(
                    "row {row}: expected {} fields, found {}",
                    names.len(),
                    rec.len()
                ),
            ));
        }
        let f = |k: usize| parse_f64(path, row, required[k], &rec[cols[k]]);
        let u = |k: usize| parse_u64(path, row, required[k], &rec[cols[k]]);
        let storage_time = match t_col.map(|c| &rec[c]) {
            None | Some("") => None,
            Some(raw) => Some(parse_f64(path, row, "t_seconds", raw)?),
        };
        let table = CountsTable {
            settings: AngleSettings::new(f(0)?, f(1)?),
            storage_time,
            n_pulses: u(2)?,
            n_d1: u(3)?,
            n_d2: u(4)?,
            c13: u(5)?,
            c24: u(6)?,
            c14: u(7)?,
            c23: u(8)?,
        };
        table
            .validate()
            .map_err(|e| schema(path, format!("row {row}: {e}")))?;
        tables.push(table);
    }
    if tables.is_empty() {
        return Err(schema(path, "no data rows"));
    }
    Ok(tables)
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<CountsTable>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_counts_csv(&text, path)
}

/// Parses `t_seconds,R[,sigma]` rows; the header line is optional.
pub fn parse_decay_csv(text: &str, path: &Path) -> Result<Vec<DecaySample>> {
    let mut out = Vec::new();
    let mut width = None;
    for (i, rec) in reader(text).into_records().enumerate() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            let names: Vec<&str> = rec.iter().collect();
            let expected: &[&[&str]] = &[&["t_seconds", "R"], &["t_seconds", "R", "sigma"]];
            if !expected.contains(&names.as_slice()) {
                return Err(schema(
                    path,
                    format!(
                        "header must be 't_seconds,R' or 't_seconds,R,sigma', got '{}'",
                        names.join(",")
                    ),
                ));
            }
            width = Some(names.len());
            continue;
        }
        let row = out.len() + 1;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w || !(2..=3).contains(&w) {
            return Err(schema(
                path,
                format!(
                    "row {row}: expected {w} fields (2 or 3), found {}",
                    rec.len()
                ),
            ));
        }
        let t = parse_f64(path, row, "t_seconds", &rec[0])?;
        let r = parse_f64(path, row, "R", &rec[1])?;
        out.push(if w == 3 {
            DecaySample::with_sigma(t, r, parse_f64(path, row, "sigma", &rec[2])?)
        } else {
            DecaySample::new(t, r)
        });
    }
    Ok(out)
}

pub fn read_decay_csv(path: &Path) -> Result<Vec<DecaySample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_decay_csv(&text, path)
}

pub fn decay_to_csv(samples: &[DecaySample], prov: &Provenance) -> String {
    let with_sigma = samples.iter().all(|s| s.sigma.is_some()) && !samples.is_empty();
    let mut s = prov.comment_block();
    s.push_str(if with_sigma {
        "t_seconds,R,sigma\n"
    } else {
        "t_seconds,R\n"
    });
    for d in samples {
        match (with_sigma, d.sigma) {
            (true, Some(sig)) => writeln!(s, "{},{},{}", d.t, d.r, sig),
            _ => writeln!(s, "{},{}", d.t, d.r),
        }
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Kv,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Kv => "kv",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Text(String),
    Missing(String),
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
            Value::Missing(why) => write!(f, "unavailable ({why})"),
        }
    }
}

/// Named quantities with optional error bars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<(String, Value, Option<f64>)>,
}

impl Report {
    pub fn num(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.rows.push((name.into(), Value::Num(v), None));
        self
    }

    pub fn with_sigma(&mut self, name: impl Into<String>, v: f64, sigma: f64) -> &mut Self {
        self.rows.push((name.into(), Value::Num(v), Some(sigma)));
        self
    }

    pub fn int(&mut self, name: impl Into<String>, v: u64) -> &mut Self {
        self.rows.push((name.into(), Value::Int(v), None));
        self
    }

    pub fn text(&mut self, name: impl Into<String>, v: impl Into<String>) -> &mut Self {
        self.rows.push((name.into(), Value::Text(v.into()), None));
        self
    }

    pub fn missing(&mut self, name: impl Into<String>, why: impl Into<String>) -> &mut Self {
        self.rows
            .push((name.into(), Value::Missing(why.into()), None));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.rows.iter().find(|r| r.0 == name).map(|r| &r.1)
    }

    pub fn render(&self, format: Format, prov: &Provenance) -> String {
        let mut s = prov.comment_block();
        match format {
            Format::Kv => {
                for (name, v, sigma) in &self.rows {
                    let _ = writeln!(s, "{name} = {v}");
                    if let Some(sig) = sigma {
                        let _ = writeln!(s, "{name}_sigma = {sig}");
                    }
                }
            }
            Format::Csv => {
                s.push_str("quantity,value,sigma\n");
                for (name, v, sigma) in &self.rows {
                    let v = match v {
                        Value::Missing(_) => String::new(),
                        other => other.to_string(),
                    };
                    let _ = writeln!(s, "{name},{v},{}", opt_float(*sigma));
                }
            }
        }
        s
    }
}

/// Record of one CLI invocation, written as `manifest.toml` next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub output_dir: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are plain strings and integers")
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> CountsTable {
        CountsTable {
            settings: AngleSettings::from_degrees(22.5, 0.0),
            storage_time: Some(2.3e-4),
            n_pulses: 1_000_000,
            n_d1: 800,
            n_d2: 790,
            c13: 100,
            c24: 95,
            c14: 7,
            c23: 9,
        }
    }

    fn prov() -> Provenance {
        Provenance::new("simulate", "ab12", Some(7)).with("link_divisor", "power_of_two")
    }

    #[test]
    fn counts_round_trip() {
        let text = counts_to_csv(&[table(), table().scaled(2)], &prov());
        assert!(text.starts_with("# command: simulate\n# config_hash: ab12\n# seed: 7\n"));
        let back = parse_counts_csv(&text, Path::new("x.csv")).unwrap();
        assert_eq!(back, vec![table(), table().scaled(2)]);
    }

    #[test]
    fn counts_without_time_column() {
        let text =
            "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14,c23\n0,0,10,2,2,1,1,0,0\n";
        let t = &parse_counts_csv(text, Path::new("lab.csv")).unwrap()[0];
        assert_eq!(t.storage_time, None);
        assert_eq!(t.n_pulses, 10);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let p = Path::new("bad.csv");
        let missing = "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14\n0,0,1,0,0,0,0,0\n";
        let e = parse_counts_csv(missing, p).unwrap_err();
        assert!(e.to_string().contains("'c23'"), "{e}");
        assert_eq!(e.exit_code(), 2);

        let bad =
            "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14,c23\n0,0,1,x,0,0,0,0,0\n";
        let e = parse_counts_csv(bad, p).unwrap_err();
        assert!(e.to_string().contains("'n_d1'"), "{e}");

        let neg =
            "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14,c23\n0,0,1,-1,0,0,0,0,0\n";
        assert!(parse_counts_csv(neg, p)
            .unwrap_err()
            .to_string()
            .contains("'n_d1'"));

        let extra = "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14,c23,zz\n";
        assert!(parse_counts_csv(extra, p)
            .unwrap_err()
            .to_string()
            .contains("'zz'"));

        assert!(parse_counts_csv("", p).is_err());
    }

    #[test]
    fn inconsistent_counts_are_schema_errors() {
        let text =
            "theta_s_rad,theta_as_rad,n_pulses,n_d1,n_d2,c13,c24,c14,c23\n0,0,1,5,0,0,0,0,0\n";
        assert!(matches!(
            parse_counts_csv(text, Path::new("x")),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn decay_csv_variants() {
        let p = Path::new("d.csv");
        let s = parse_decay_csv("t_seconds,R\n0,0.77\n2.3e-4,0.667\n", p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].sigma, None);
        let s = parse_decay_csv("0,0.77,0.01\n1e-3,0.3,0.02\n", p).unwrap();
        assert_eq!(s[1].sigma, Some(0.02));
        assert!(parse_decay_csv("t,R\n0,1\n", p).is_err());
        assert!(parse_decay_csv("0,0.77\n1e-3,0.3,0.02\n", p).is_err());
        let e = parse_decay_csv("t_seconds,R\n0,abc\n", p).unwrap_err();
        assert!(e.to_string().contains("'R'"));

        let samples = vec![
            DecaySample::with_sigma(0.0, 0.77, 0.01),
            DecaySample::with_sigma(1e-3, 0.3, 0.02),
        ];
        let text = decay_to_csv(&samples, &prov());
        assert_eq!(parse_decay_csv(&text, p).unwrap(), samples);
    }

    #[test]
    fn report_formats() {
        let mut r = Report::default();
        r.with_sigma("S", 2.5, 0.05)
            .num("V", 0.88)
            .missing("F", "need 4 settings");
        let kv = r.render(Format::Kv, &Provenance::new("estimate", "h", None));
        assert!(
            kv.contains("S = 2.5\nS_sigma = 0.05\nV = 0.88\nF = unavailable (need 4 settings)\n")
        );
        let csv = r.render(Format::Csv, &Provenance::new("estimate", "h", None));
        assert!(csv.ends_with("quantity,value,sigma\nS,2.5,0.05\nV,0.88,\nF,,\n"));
    }

    #[test]
    fn manifest_serializes() {
        let m = RunManifest {
            command: "budget".into(),
            config_path: "c.toml".into(),
            config_hash: "ff".into(),
            seed: None,
            output_dir: "out".into(),
            outputs: vec!["budget.kv".into()],
        };
        let t = m.to_toml();
        assert!(t.contains("command = \"budget\""));
        assert!(!t.contains("seed"));
    }
}
