//! File formats: designs (JSON and CSV), criterion reports, run logs and
//! polytope descriptions. Cohorts are 1-based in every file.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::criteria::CriterionReport;
use crate::design::{Design, DesignKind, ModelSpec, Rational, RationalMatrix};
use crate::error::{DesignError, Result};
use crate::optimizer::IterationLog;
use crate::polytope::{e_optimal_class, DesignPolytope, LinearEquality};

/// One parsed weight: exact when written as an integer, decimal or fraction,
/// alongside the nearest double to the text.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Exact(Rational, f64),
    Float(f64),
}

impl Cell {
    fn value(self) -> f64 {
        match self {
            Cell::Exact(_, f) | Cell::Float(f) => f,
        }
    }
}

/// Parses `"1/8"`, `"0.0219"`, `"-3"` or `"1e-3"` (the last only inexactly).
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || DesignError::Parse(format!("cannot read '{text}' as an exact number"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i128 = num.trim().parse().map_err(|_| bad())?;
        let den: i128 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(DesignError::Parse(format!("zero denominator in '{text}'")));
        }
        return Ok(Rational::new(num, den));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
        || frac.len() > 30
    {
        return Err(bad());
    }
    let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let value = Rational::new(digits, 10i128.pow(frac.len() as u32));
    Ok(if neg { -value } else { value })
}

fn parse_cell_text(text: &str) -> Result<Cell> {
    match parse_rational(text) {
        Ok(r) => {
            let f = text
                .trim()
                .parse::<f64>()
                .ok()
                .or_else(|| r.to_f64())
                .unwrap_or(f64::NAN);
            Ok(Cell::Exact(r, f))
        }
        Err(e) => text.trim().parse::<f64>().map(Cell::Float).map_err(|_| e),
    }
}

fn parse_cell_json(v: &Value) -> Result<Cell> {
    match v {
        Value::String(s) => parse_cell_text(s),
        Value::Number(num) => match num.as_i64() {
            Some(i) => Ok(Cell::Exact(Rational::from_integer(i as i128), i as f64)),
            None => num
                .as_f64()
                .map(Cell::Float)
                .ok_or_else(|| DesignError::Parse(format!("unreadable number {num}"))),
        },
        other => Err(DesignError::Parse(format!(
            "weight must be a number or string, got {other}"
        ))),
    }
}

fn build_design(spec: ModelSpec, cells: Vec<Vec<Cell>>) -> Result<Design> {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    if rows != spec.n() + 1 || cells.iter().any(|r| r.len() != spec.t()) {
        return Err(DesignError::Parse(format!(
            "expected {} rows of {} weights, got {rows} rows of {cols}",
            spec.n() + 1,
            spec.t()
        )));
    }
    let exact: Option<RationalMatrix> = cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| match c {
                    Cell::Exact(r, _) => Some(*r),
                    Cell::Float(_) => None,
                })
                .collect()
        })
        .collect();
    let floats_matrix = || DMatrix::from_fn(rows, cols, |i, k| cells[i][k].value());
    let floats = || Design::new(spec, floats_matrix());
    match exact {
        Some(exact) => Design::from_parts(spec, floats_matrix(), exact).or_else(|_| floats()),
        None => floats(),
    }
}

fn format_rational(r: &Rational) -> String {
    if r.denom() == &1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Row-major text of every weight: fractions when exact, shortest
/// round-trip decimals otherwise.
fn weight_strings(d: &Design) -> Vec<Vec<String>> {
    let w = d.weights();
    (0..w.nrows())
        .map(|i| {
            (0..w.ncols())
                .map(|k| match d.exact_weights() {
                    Some(e) => format_rational(&e[i][k]),
                    None => format!("{}", w[(i, k)]),
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct DesignFileOut {
    n: usize,
    kind: DesignKind,
    weights: Vec<Vec<Value>>,
}

#[derive(Deserialize)]
struct DesignFileIn {
    n: usize,
    kind: DesignKind,
    weights: Vec<Vec<Value>>,
}

pub fn design_to_json(d: &Design) -> String {
    let weights = match d.exact_weights() {
        Some(_) => weight_strings(d)
            .into_iter()
            .map(|row| row.into_iter().map(Value::String).collect())
            .collect(),
        None => d
            .weights()
            .row_iter()
            .map(|row| row.iter().map(|&x| Value::from(x)).collect())
            .collect(),
    };
    let out = DesignFileOut {
        n: d.n(),
        kind: d.kind(),
        weights,
    };
    serde_json::to_string_pretty(&out).expect("design serializes") + "\n"
}

pub fn design_from_json(text: &str) -> Result<Design> {
    let file: DesignFileIn =
        serde_json::from_str(text).map_err(|e| DesignError::Parse(e.to_string()))?;
    let spec = ModelSpec::new(file.n, file.kind)?;
    let cells = file
        .weights
        .iter()
        .map(|row| row.iter().map(parse_cell_json).collect())
        .collect::<Result<_>>()?;
    build_design(spec, cells)
}

/// Table layout: header `i\k,1,...,t`, one row per treatment.
pub fn design_to_csv(d: &Design) -> String {
    let mut out = String::from("i\\k");
    for k in 1..=d.t() {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    for (i, row) in weight_strings(d).into_iter().enumerate() {
        let _ = writeln!(out, "{i},{}", row.join(","));
    }
    out
}

/// Reads the CSV layout; the kind follows from the shape.
pub fn design_from_csv(text: &str) -> Result<Design> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let t = reader
        .headers()
        .map_err(|e| DesignError::Parse(e.to_string()))?
        .len()
        .checked_sub(1)
        .filter(|&t| t > 0)
        .ok_or_else(|| DesignError::Parse("CSV header has no cohort columns".to_string()))?;
    let mut cells = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DesignError::Parse(e.to_string()))?;
        if record.len() != t + 1 {
            return Err(DesignError::Parse(format!(
                "row {row_no} has {} fields, expected {}",
                record.len(),
                t + 1
            )));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| DesignError::Parse(format!("bad treatment label '{}'", &record[0])))?;
        if label != row_no {
            return Err(DesignError::Parse(format!(
                "treatment rows must be 0..n in order, found {label} at row {row_no}"
            )));
        }
        cells.push(
            record
                .iter()
                .skip(1)
                .map(parse_cell_text)
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let n = cells.len().saturating_sub(1);
    let kind = if t == n {
        DesignKind::Standard
    } else if t == n + 1 {
        DesignKind::Extended
    } else {
        return Err(DesignError::Parse(format!(
            "{} treatments and {t} cohorts match neither design kind",
            cells.len()
        )));
    };
    build_design(ModelSpec::new(n, kind)?, cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// `.csv` means CSV, everything else JSON.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(DesignError::Parse(format!("unknown format '{other}'"))),
        }
    }
}

pub fn design_to_string(d: &Design, format: Format) -> String {
    match format {
        Format::Json => design_to_json(d),
        Format::Csv => design_to_csv(d),
    }
}

pub fn design_from_str(text: &str, format: Format) -> Result<Design> {
    match format {
        Format::Json => design_from_json(text),
        Format::Csv => design_from_csv(text),
    }
}

pub fn read_design(path: &Path) -> Result<Design> {
    design_from_str(&std::fs::read_to_string(path)?, Format::from_path(path))
}

pub fn criterion_report_to_json(r: &CriterionReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

/// Header for [`criterion_report_csv_row`] with `stages` LV columns.
pub fn criterion_report_csv_header(stages: usize) -> String {
    let mut h = String::from("e,a,d,mv,avg_contrast");
    for k in 1..=stages {
        let _ = write!(h, ",lv{k}");
    }
    h
}

/// One line; LV cells are empty when some stage is inestimable.
pub fn criterion_report_csv_row(r: &CriterionReport, stages: usize) -> String {
    let mut line = format!("{},{},{},{},{}", r.e, r.a, r.d, r.mv, r.avg_contrast);
    for k in 0..stages {
        line.push(',');
        if let Some(v) = r.lv.as_ref().and_then(|lv| lv.get(k)) {
            let _ = write!(line, "{v}");
        }
    }
    line
}

pub fn run_log_to_csv(log: &[IterationLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if log.is_empty() {
        let _ = w.write_record(["iteration", "objective", "gap", "step", "kind"]);
    }
    for entry in log {
        w.serialize(entry).expect("log entry serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolytopeClass {
    #[default]
    Base,
    EOptimal,
}

/// `Σ coef · ξ(i,k) = rhs` with 1-based cohort `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualitySpec {
    pub cells: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

/// Polytope description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSpec {
    pub n: usize,
    pub kind: DesignKind,
    #[serde(default)]
    pub class: PolytopeClass,
    #[serde(default)]
    pub equalities: Vec<EqualitySpec>,
}

impl PolytopeSpec {
    pub fn build(&self) -> Result<DesignPolytope> {
        let spec = ModelSpec::new(self.n, self.kind)?;
        let mut p = match self.class {
            PolytopeClass::Base => DesignPolytope::base(spec),
            PolytopeClass::EOptimal => e_optimal_class(spec),
        };
        for eq in &self.equalities {
            let cells = eq
                .cells
                .iter()
                .map(|&(i, k, c)| {
                    k.checked_sub(1).map(|k0| (i, k0, c)).ok_or_else(|| {
                        DesignError::InvalidParameter("cohorts are numbered from 1".to_string())
                    })
                })
                .collect::<Result<_>>()?;
            p = p.with_equality(LinearEquality { cells, rhs: eq.rhs })?;
        }
        Ok(p)
    }
}

pub fn polytope_spec_from_json(text: &str) -> Result<PolytopeSpec> {
    serde_json::from_str(text).map_err(|e| DesignError::Parse(e.to_string()))
}
