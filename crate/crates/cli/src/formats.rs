//! On-disk formats: samples, constraint specs, loss specs, endpoint models,
//! traces, and canonical JSON.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};

use ordcrowd::{ConstraintSet, LossSpec, NormalParams, SimTrace};

/// A problem with the user's input, reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

macro_rules! usage {
    ($($arg:tt)*) => {
        anyhow::Error::new($crate::formats::Usage(format!($($arg)*)))
    };
}
pub(crate) use usage;

/// `chain:n`, `none:n`, or a path to a headerless CSV of coefficient rows
/// (one row per constraint `row · mu <= 0`).
pub fn parse_constraints(spec: &str) -> Result<ConstraintSet> {
    let count = |s: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| usage!("bad variable count in constraint spec `{spec}`"))
    };
    if let Some(n) = spec.strip_prefix("chain:") {
        return Ok(ConstraintSet::chain(count(n)?));
    }
    if let Some(n) = spec.strip_prefix("none:") {
        return Ok(ConstraintSet::unconstrained(count(n)?));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage!("constraint spec `{spec}` is neither chain:n, none:n nor a file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {spec}"))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| usage!("{spec}: {e}"))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| usage!("{spec}:{}: coefficients must be finite numbers", i + 1))?;
        rows.push(row);
    }
    let Some(n) = rows.first().map(Vec::len) else {
        return Err(usage!("{spec}: no constraint rows"));
    };
    ConstraintSet::new(n, rows).map_err(|e| usage!("{spec}: {e}"))
}

/// `threshold:<tau>`, `absolute` or `squared`.
pub fn parse_loss(spec: &str) -> Result<LossSpec> {
    let loss = match spec {
        "absolute" => LossSpec::Absolute,
        "squared" => LossSpec::Squared,
        _ => {
            let tau = spec
                .strip_prefix("threshold:")
                .and_then(|t| t.trim().parse::<f64>().ok())
                .ok_or_else(|| usage!("loss spec `{spec}` is not threshold:<tau>, absolute or squared"))?;
            LossSpec::threshold(tau)
        }
    };
    loss.validate().map_err(|e| usage!("{e}"))?;
    Ok(loss)
}

#[derive(Debug, Deserialize)]
struct SampleRecord {
    variable: usize,
    value: f64,
}

/// Reads a `variable,value` CSV with 1-based variables into per-variable
/// sample lists (0-based). A header-only file is a valid empty state.
pub fn read_samples(path: &Path, n_vars: usize) -> Result<Vec<Vec<f64>>> {
    let shown = path.display();
    let text = fs::read_to_string(path).map_err(|e| usage!("{shown}: {e}"))?;
    if text.trim().is_empty() {
        return Err(usage!("{shown}: empty file; expected header `variable,value`"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| usage!("{shown}: {e}"))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["variable", "value"] {
        return Err(usage!("{shown}:1: header must be `variable,value`"));
    }
    let mut samples = vec![Vec::new(); n_vars];
    for rec in reader.deserialize::<SampleRecord>() {
        let rec = rec.map_err(|e| usage!("{shown}: {e}"))?;
        if rec.variable == 0 || rec.variable > n_vars {
            return Err(usage!(
                "{shown}: variable {} outside 1..={n_vars}",
                rec.variable
            ));
        }
        if !rec.value.is_finite() {
            return Err(usage!("{shown}: non-finite value for variable {}", rec.variable));
        }
        samples[rec.variable - 1].push(rec.value);
    }
    Ok(samples)
}

/// Two endpoint models from an `index,mean,variance` CSV (1-based indices).
pub fn read_endpoint_models(path: &Path) -> Result<[(usize, NormalParams); 2]> {
    #[derive(Deserialize)]
    struct Row {
        index: usize,
        mean: f64,
        variance: f64,
    }
    let shown = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage!("{shown}: {e}"))?;
    let headers = reader.headers().map_err(|e| usage!("{shown}: {e}"))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "mean", "variance"] {
        return Err(usage!("{shown}:1: header must be `index,mean,variance`"));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<Row>() {
        let r = rec.map_err(|e| usage!("{shown}: {e}"))?;
        let model = NormalParams::new(r.mean, r.variance).map_err(|e| usage!("{shown}: {e}"))?;
        rows.push((r.index, model));
    }
    let [a, b] = rows[..] else {
        bail!(usage!("{shown}: expected exactly two endpoint rows, found {}", rows.len()));
    };
    let (left, right) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    if left.0 == 0 || left.0 == right.0 {
        return Err(usage!("{shown}: endpoint indices must be distinct and 1-based"));
    }
    Ok([left, right])
}

/// Rounds to 12 significant digits; the shortest representation of the
/// result then re-parses to the same bits, so output round-trips.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// A JSON number, or a string for non-finite values.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(round12(x))
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// Re-rounds every float so values that did not pass through [`num`] are
/// canonical too. Keys are already sorted (`serde_json::Map` is ordered).
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().expect("f64 number")),
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect::<Map<_, _>>()),
        other => other,
    }
}

pub fn to_json_string(v: Value) -> String {
    let mut s = serde_json::to_string_pretty(&canonical(v)).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Shortest round-trip text of a float, with an exponent at extreme scales.
fn float_field(x: f64) -> String {
    match serde_json::Number::from_f64(x) {
        Some(n) => n.to_string(),
        None => format!("{x}"),
    }
}

/// Writes one trace as CSV. Variables are 1-based; floats use the shortest
/// round-trip representation.
pub fn write_trace(path: &Path, trace: &SimTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["step", "variable", "answer", "true_loss", "estimated_error", "prediction_json"])?;
    for row in &trace.rows {
        let prediction = serde_json::to_string(&row.prediction)?;
        w.write_record([
            row.step.to_string(),
            (row.variable + 1).to_string(),
            float_field(row.answer),
            row.true_loss.map(float_field).unwrap_or_default(),
            float_field(row.estimated_error),
            prediction,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
