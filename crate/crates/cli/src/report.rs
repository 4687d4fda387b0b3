//! Byte-deterministic JSON: keys sorted, floats written with 17 significant digits.

use nalgebra::DMatrix;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect())).collect())
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

pub fn opt(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

pub struct RunReport {
    pub command: &'static str,
    pub input_digest: String,
    pub result: Value,
    pub diagnostics: Value,
    pub anchors: Value,
}

impl RunReport {
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), Value::String(self.command.into()));
        m.insert("input_digest".into(), Value::String(self.input_digest.clone()));
        m.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        m.insert("result".into(), self.result.clone());
        m.insert("diagnostics".into(), self.diagnostics.clone());
        m.insert("anchors".into(), self.anchors.clone());
        Value::Object(m)
    }
}

pub fn canonical(v: &Value) -> String {
    let mut out = String::new();
    write(v, &mut out);
    out
}

fn write(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) if !n.is_f64() => out.push_str(&i.to_string()),
            (_, Some(u)) if !n.is_f64() => out.push_str(&u.to_string()),
            _ => out.push_str(&float(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write(&map[k], out);
            }
            out.push('}');
        }
    }
}

fn float(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    // -0 and 0 print alike.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}
