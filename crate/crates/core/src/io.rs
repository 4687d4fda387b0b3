//! JSON input formats: measure files and matrix files.
//!
//! Measure file:
//! `{"n": 2, "mode": "float" | "exact", "atoms": [{"x": [1, 0, "1/2"], "w": "1/3"}, ...]}`.
//! Entries are JSON numbers or rational strings `"p/q"`. In exact mode a JSON
//! number is read as the exact decimal it prints as.
//!
//! Matrix file: `{"m": [[...], [...]]}`.

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exact::{parse_rational, to_f64};
use crate::measures::AtomicMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Float,
    Exact,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    x: Vec<Value>,
    w: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    n: usize,
    #[serde(default)]
    mode: Mode,
    atoms: Vec<RawAtom>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    m: Vec<Vec<Value>>,
}

fn rational(v: &Value) -> Result<BigRational> {
    match v {
        Value::Number(n) => parse_rational(&n.to_string()),
        Value::String(s) => parse_rational(s),
        other => Err(Error::Parse(format!("expected a number or \"p/q\" string, found {other}"))),
    }
}

fn real(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Parse(format!("number {n} is not representable"))),
        Value::String(s) => Ok(to_f64(&parse_rational(s)?)),
        other => Err(Error::Parse(format!("expected a number or \"p/q\" string, found {other}"))),
    }
}

/// Parses a measure file. `force_exact` overrides the file's mode.
pub fn parse_measure(text: &str, force_exact: bool) -> Result<AtomicMeasure> {
    let raw: RawMeasure = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if raw.n < 1 {
        return Err(Error::InvalidMeasure("n must be at least 1".into()));
    }
    if raw.atoms.is_empty() {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    let n1 = raw.n + 1;
    for a in &raw.atoms {
        if a.x.len() != n1 {
            return Err(Error::DimensionMismatch { expected: n1, got: a.x.len() });
        }
    }
    if force_exact || raw.mode == Mode::Exact {
        let atoms = raw
            .atoms
            .iter()
            .map(|a| Ok((a.x.iter().map(rational).collect::<Result<Vec<_>>>()?, rational(&a.w)?)))
            .collect::<Result<Vec<_>>>()?;
        AtomicMeasure::from_rational(n1, atoms)
    } else {
        let atoms = raw
            .atoms
            .iter()
            .map(|a| Ok((DVector::from_vec(a.x.iter().map(real).collect::<Result<Vec<_>>>()?), real(&a.w)?)))
            .collect::<Result<Vec<_>>>()?;
        AtomicMeasure::new(n1, atoms)
    }
}

/// Parses a matrix file into a dense square matrix.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let raw: RawMatrix = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let rows = raw.m.len();
    if rows == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    if let Some(r) = raw.m.iter().find(|r| r.len() != rows) {
        return Err(Error::InvalidMatrix(format!("row of length {} in a {rows}x{rows} matrix", r.len())));
    }
    let entries: Vec<f64> = raw.m.iter().flatten().map(real).collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(rows, rows, &entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_measure() {
        let nu = parse_measure(r#"{"n": 1, "mode": "float", "atoms": [{"x": [1, 0], "w": 0.5}, {"x": [0, "2/3"], "w": "1/2"}]}"#, false)
            .unwrap();
        assert_eq!(nu.n_plus_1(), 2);
        assert_eq!(nu.len(), 2);
        assert!(!nu.is_exact());
        assert_eq!(nu.atoms()[1].point.coords()[1], 1.0);
    }

    #[test]
    fn exact_measure() {
        let text = r#"{"n": 2, "mode": "exact", "atoms": [{"x": [1, 0, 0], "w": 0.25}, {"x": [0, 1, 0], "w": "1/4"}, {"x": [0, 0, 1], "w": "1/2"}]}"#;
        let nu = parse_measure(text, false).unwrap();
        assert!(nu.is_exact());
        let forced = parse_measure(&text.replace("exact", "float"), true).unwrap();
        assert!(forced.is_exact());
        let bad = r#"{"n": 1, "mode": "exact", "atoms": [{"x": [1, 0], "w": 0.3}, {"x": [0, 1], "w": 0.6}]}"#;
        assert!(matches!(parse_measure(bad, false), Err(Error::InvalidMeasure(_))));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_measure("{", false), Err(Error::Parse(_))));
        assert!(matches!(parse_measure(r#"{"n": 1, "atoms": []}"#, false), Err(Error::InvalidMeasure(_))));
        assert!(matches!(
            parse_measure(r#"{"n": 2, "atoms": [{"x": [1, 0], "w": 1}]}"#, false),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(parse_measure(r#"{"n": 1, "atoms": [{"x": [1, true], "w": 1}]}"#, false), Err(Error::Parse(_))));
        assert!(matches!(parse_measure(r#"{"n": 1, "mode": "fuzzy", "atoms": []}"#, false), Err(Error::Parse(_))));
    }

    #[test]
    fn matrices() {
        let m = parse_matrix(r#"{"m": [[1, "1/2"], [0.5, -1]]}"#).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -1.0]));
        assert!(parse_matrix(r#"{"m": [[1, 2]]}"#).is_err());
        assert!(parse_matrix(r#"{"m": []}"#).is_err());
    }
}
