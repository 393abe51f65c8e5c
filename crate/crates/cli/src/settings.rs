//! Effective parameters of a command: flag, then config file, then default.
//!
//! The config file is either flat `key = value` lines (`#` starts a
//! comment) or a JSON object such as a previous run's `config_echo.json`.
//! Every resolved value is recorded so the echo can reproduce the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub struct Settings {
    command: &'static str,
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    echo: Map<String, Value>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    if text.trim_start().starts_with('{') {
        let obj: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| format!("invalid JSON config: {e}"))?;
        for (k, v) in obj {
            let v = match v {
                Value::Null => continue,
                Value::String(s) => s,
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            out.insert(normalize(&k), v);
        }
        return Ok(out);
    }
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        out.insert(normalize(k), v.trim().to_owned());
    }
    Ok(out)
}

impl Settings {
    pub fn load(command: &'static str, path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                parse_text(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => BTreeMap::new(),
        };
        if let Some(c) = file.remove("command") {
            if c != command {
                return Err(CliError::Input(format!(
                    "config is for command {c:?}, not {command:?}"
                )));
            }
        }
        let mut echo = Map::new();
        echo.insert("command".into(), Value::from(command));
        Ok(Settings {
            command,
            file,
            used: BTreeSet::new(),
            echo,
        })
    }

    fn file_value<T>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_owned());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::Input(format!("config key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("setting serializes");
        self.echo.insert(key.to_owned(), v);
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file);
        self.record(key, &v);
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.optional(key, flag)?.ok_or_else(|| {
            CliError::Input(format!(
                "{}: missing required setting {} (flag --{} or config key)",
                self.command,
                key,
                key.replace('_', "-")
            ))
        })
    }

    /// Comma-separated list.
    pub fn list<T>(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: &str,
    ) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let file = self.file_value::<String>(key)?;
        let raw = flag.or(file).unwrap_or_else(|| default.to_owned());
        let items: Vec<T> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Input(format!("{key}: cannot parse {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        self.record(key, &items);
        Ok(items)
    }

    /// Reject config keys that no setting consumed.
    pub fn finish(self) -> Result<Map<String, Value>, CliError> {
        let unknown: Vec<&String> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::Input(format!(
                "{}: unknown config keys: {}",
                self.command,
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(self.echo)
    }
}
