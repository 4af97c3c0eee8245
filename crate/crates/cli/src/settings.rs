//! Config file loading and `--set` overrides.

use std::path::Path;

use egosynth_core::pipeline::PipelineConfig;
use serde_json::{Map, Value};

use crate::CliError;

/// Names the default config file when `--config` is absent.
pub const CONFIG_ENV: &str = "EGOSYNTH_CONFIG";

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `--set`: JSON when it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to `root`. Every key along the path must already exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let mut node = root;
    for key in path.split('.') {
        let obj: &mut Map<String, Value> = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("--set {path}: {key:?} is below a non-object field")))?;
        node = obj
            .get_mut(key)
            .ok_or_else(|| CliError::Usage(format!("--set {path}: unknown field {key:?}")))?;
    }
    *node = parse_value(raw);
    Ok(())
}

/// Defaults, then the config file (if any), then each `--set` in order.
pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<PipelineConfig, CliError> {
    let mut value = serde_json::to_value(PipelineConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let over: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut value, over);
    }
    for s in sets {
        apply_override(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
