//! `--config` files.
//!
//! A config is a JSON object keyed by flag name (`max-chars` and `max_chars`
//! both work). Top-level keys apply to every command that has the flag; an
//! object under a command name (`"infer": {...}`) applies to that command
//! only and wins over the top level. A flag given on the command line or
//! through its environment variable always wins over the file.

use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub fn load(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(e.to_string()).at(path))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::input("config must be a JSON object").at(path)),
        Err(e) => Err(CliError::input(e.to_string()).at(path)),
    }
}

fn entries<'a>(config: &'a Map<String, Value>, section: &str) -> Vec<(String, &'a Value)> {
    let mut out: Vec<(String, &Value)> = config
        .iter()
        .filter(|(_, v)| !v.is_object())
        .map(|(k, v)| (k.replace('-', "_"), v))
        .collect();
    if let Some(Value::Object(sec)) = config.get(section) {
        out.extend(sec.iter().map(|(k, v)| (k.replace('-', "_"), v)));
    }
    out
}

fn from_command_line(matches: &ArgMatches, id: &str) -> bool {
    matches!(
        matches.try_get_raw(id).ok().and_then(|_| matches.value_source(id)),
        Some(ValueSource::CommandLine | ValueSource::EnvVariable)
    )
}

/// Fills `args` from `config` wherever the flag was not given explicitly.
pub fn merge<T: Serialize + DeserializeOwned>(
    args: &T,
    matches: &ArgMatches,
    config: &Map<String, Value>,
    section: &str,
) -> Result<T, CliError> {
    let mut value = serde_json::to_value(args)?;
    let obj = value.as_object_mut().expect("argument structs serialize to objects");
    for (key, v) in entries(config, section) {
        if !obj.contains_key(&key) {
            log::debug!("config key {key:?} does not apply to {section}");
            continue;
        }
        if !from_command_line(matches, &key) {
            obj.insert(key, v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::input(format!("config for {section}: {e}")))
}
