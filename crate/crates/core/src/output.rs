//! Deterministic serialization: JSON with sorted keys and 17 significant
//! digits, CSV with `# key=value` metadata.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{fmt17, FourierField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::config("format", format!("expected json or csv, got `{other}`"))),
        }
    }
}

fn number(n: &serde_json::Number, out: &mut String) {
    if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else {
        out.push_str(&fmt17(n.as_f64().expect("finite number")));
    }
}

fn emit(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => number(n, out),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(|i| !i.is_array() && !i.is_object()) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit(item, indent, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(indent + 2, out);
                emit(item, indent + 2, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(indent + 2, out);
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                emit(&map[k.as_str()], indent + 2, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push('}');
        }
    }
}

/// Pretty JSON with sorted keys; floats as `{:.16e}`, non-finite as `null`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    let mut out = String::new();
    emit(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

/// Hex sha256 of the canonical JSON form.
pub fn json_sha256<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_json_string(value)?.as_bytes())))
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for k in keys {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, &map[k.as_str()], rows);
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), item, rows);
            }
        }
        other => {
            let mut s = String::new();
            match other {
                Value::String(t) => s.push_str(t),
                _ => emit(other, 0, &mut s),
            }
            rows.push((prefix.to_string(), s));
        }
    }
}

/// `key,value` rows of a serialized report, keys as dotted paths.
pub fn to_flat_csv<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    let mut rows = Vec::new();
    flatten("", &v, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, val) in rows {
        let quoted = if val.contains(',') || val.contains('"') {
            format!("\"{}\"", val.replace('"', "\"\""))
        } else {
            val
        };
        let _ = writeln!(out, "{k},{quoted}");
    }
    Ok(out)
}

pub fn render<T: Serialize>(value: &T, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json_string(value),
        Format::Csv => to_flat_csv(value),
    }
}

pub fn field_csv(field: &FourierField) -> String {
    let mut buf = Vec::new();
    field.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// One row per snapshot, then the footer as `# `-prefixed JSON.
pub fn trajectory_csv<T: Serialize>(columns: &[&str], rows: &[Vec<f64>], footer: &T) -> Result<String> {
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    for line in to_json_string(footer)?.lines() {
        let _ = writeln!(out, "# {line}");
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_results<T: Serialize>(value: &T, path: &Path, format: Format) -> Result<()> {
    write_text(path, &render(value, format)?)
}
