//! Flat `key = value` parameters: defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// One documented parameter of a subcommand.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn p(key: &'static str, default: &'static str, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, help }
}

/// Resolved parameters of one invocation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn defaults(schema: &[ParamSpec]) -> Self {
        Self {
            values: schema
                .iter()
                .map(|s| (s.key.to_string(), s.default.to_string()))
                .collect(),
        }
    }

    /// Sets `key`, rejecting keys outside the schema.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.into();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown parameter `{key}`"))),
        }
    }

    /// Overlays a config file: one `key = value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.load_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn load_str(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("parameter `{key}` is not in the schema"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        parse(key, self.raw(key))
    }

    /// `None` for an empty value or `none`.
    pub fn opt<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "none" => Ok(None),
            v => parse(key, v).map(Some),
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list<T>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| parse(key, v))
            .collect()
    }
}

fn parse<T>(key: &str, v: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::Usage(format!("invalid value `{v}` for `{key}`: {e}")))
}
