//! Merging of `--config` files with inline flags.
//!
//! Every subcommand's argument struct serializes to a flat JSON object. A
//! config file is an object over the same keys; inline flags win over the
//! file wherever they are set, and keys the subcommand does not know are
//! rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn is_unset(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Bool(b) => !b,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

pub fn merge<T: Serialize + DeserializeOwned>(inline: &T, config: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(inline).map_err(internal)?).map_err(internal)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let file: Map<String, Value> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: expected a JSON object: {e}", path.display())))?;
    merge_values(inline, file)
}

pub fn merge_values<T: Serialize + DeserializeOwned>(inline: &T, file: Map<String, Value>) -> Result<T, CliError> {
    let Value::Object(mut merged) = serde_json::to_value(inline).map_err(internal)? else {
        return Err(CliError::Internal("arguments did not serialize to an object".into()));
    };
    for (key, value) in file {
        match merged.get_mut(&key) {
            None => return Err(CliError::Config(format!("unknown config key `{key}`"))),
            Some(slot) if is_unset(slot) => *slot = value,
            Some(_) => {}
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

fn internal(e: serde_json::Error) -> CliError {
    CliError::Internal(e.to_string())
}
