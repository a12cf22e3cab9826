use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL: &str = "polar-imp";

/// Layers `defaults < config file < flags`; `null` flags are unset.
pub fn merge(defaults: Value, config: Option<&Path>, flags: &impl Serialize) -> Result<Value, CliError> {
    let mut out = match defaults {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => out.extend(m),
            Ok(_) => return Err(CliError::usage(format!("config {} is not a JSON object", path.display()))),
            Err(e) => return Err(CliError::usage(format!("config {}: {e}", path.display()))),
        }
    }
    if let Value::Object(m) = serde_json::to_value(flags).expect("flags serialize") {
        out.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    Ok(Value::Object(out))
}

pub fn resolve<T: DeserializeOwned>(merged: Value) -> Result<T, CliError> {
    serde_json::from_value(merged).map_err(|e| CliError::usage(format!("configuration: {e}")))
}

pub fn provenance(command: &str, config: &impl Serialize, seed: u64, extra: Value) -> Value {
    let mut p = json!({
        "tool": TOOL,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut p, extra) {
        m.extend(e);
    }
    p
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

/// `#`-comment header lines for CSV outputs.
pub fn csv_comments(provenance: &Value) -> Vec<String> {
    let Value::Object(m) = provenance else { return Vec::new() };
    m.iter()
        .map(|(k, v)| match v {
            Value::String(s) => format!("{k}: {s}"),
            other => format!("{k}: {other}"),
        })
        .collect()
}
