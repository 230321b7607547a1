//! Platform configuration files: schema, parsing, and directory loading.
//!
//! A configuration directory holds one JSON file per platform variant. Files
//! are considered in byte-wise lexicographic filename order, which makes the
//! first-match selection rule reproducible across machines and boots. The
//! file named [`DEFAULT_CONFIG_FILENAME`] is held out of that ordering and
//! used as the fallback when nothing matches.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Reserved filename for the fallback configuration.
pub const DEFAULT_CONFIG_FILENAME: &str = "plat_config_default.json";

/// Errors raised while loading configuration files or directories.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// The file or directory could not be read.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// The file is not well-formed JSON.
    #[error("{path}: invalid JSON: {detail}")]
    Parse { path: PathBuf, detail: String },
    /// The file is valid JSON but violates the configuration schema.
    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    /// A default configuration was requested by name but no file defines it.
    #[error("no configuration named {name:?} to use as the default")]
    DefaultNotFound { name: String },
}

impl ConfigError {
    fn from_json(path: &Path, err: serde_json::Error) -> Self {
        let detail = err.to_string();
        match err.classify() {
            serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
                ConfigError::Parse { path: path.to_owned(), detail }
            }
            serde_json::error::Category::Io => {
                ConfigError::Io { path: path.to_owned(), source: io::Error::other(detail) }
            }
            serde_json::error::Category::Data => {
                ConfigError::Schema { path: path.to_owned(), detail }
            }
        }
    }
}

/// Combination rule for a set of boolean outcomes.
///
/// At the configuration level it combines check results; inside a check it
/// combines per-object comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchRule {
    /// Every outcome must hold, and there must be at least one to observe.
    #[default]
    MatchAll,
    /// At least one outcome must hold.
    MatchOne,
}

impl fmt::Display for MatchRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchRule::MatchAll => "MatchAll",
            MatchRule::MatchOne => "MatchOne",
        })
    }
}

/// A single `KEY=VALUE` action variable.
///
/// Keys follow the shell identifier grammar `[A-Za-z_][A-Za-z0-9_]*` and may
/// not be `NAME`, which the manager reserves for the matched platform name.
/// Values may not contain line breaks; everything else, including further
/// `=` characters, belongs to the value verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EnvAssignment {
    key: String,
    value: String,
}

/// Key reserved for the platform name line the manager writes itself.
pub const RESERVED_ENV_KEY: &str = "NAME";

impl EnvAssignment {
    /// Parses and validates a `KEY=VALUE` string.
    pub fn parse(raw: &str) -> Result<Self, String> {
        let Some((key, value)) = raw.split_once('=') else {
            return Err(format!("variable {raw:?} is missing '='"));
        };
        if !is_valid_env_key(key) {
            return Err(format!("variable key {key:?} is not of the form [A-Za-z_][A-Za-z0-9_]*"));
        }
        if key == RESERVED_ENV_KEY {
            return Err(format!("variable key {RESERVED_ENV_KEY:?} is reserved"));
        }
        if value.contains(['\n', '\r']) {
            return Err(format!("variable {key} has a line break in its value"));
        }
        Ok(EnvAssignment { key: key.to_owned(), value: value.to_owned() })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

/// True when `key` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_valid_env_key(key: &str) -> bool {
    let mut chars = key.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for EnvAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.key, self.value)
    }
}

impl TryFrom<String> for EnvAssignment {
    type Error = String;

    fn try_from(raw: String) -> Result<Self, Self::Error> {
        EnvAssignment::parse(&raw)
    }
}

impl From<EnvAssignment> for String {
    fn from(assignment: EnvAssignment) -> String {
        assignment.to_string()
    }
}

/// One identity check against bus properties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    /// How per-object comparison results combine into the check result.
    pub rule: MatchRule,
    /// Object paths to query. Empty means "discover every object that
    /// implements the interface".
    pub objects: Vec<String>,
    /// Interface that carries the property.
    pub interface: String,
    /// Property name to read.
    pub property: String,
    /// Expected value, canonicalized to a string at load time.
    #[serde(deserialize_with = "deserialize_expected_value")]
    pub value: String,
}

/// Canonicalizes a JSON scalar the way observed bus values are canonicalized:
/// strings verbatim, integers in base 10, booleans as `true`/`false`.
fn deserialize_expected_value<'de, D>(deserializer: D) -> Result<String, D::Error>
where
    D: Deserializer<'de>,
{
    let value = serde_json::Value::deserialize(deserializer)?;
    match value {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(D::Error::custom(format!(
            "expected value must be a string, number, or boolean, got {other}"
        ))),
    }
}

/// A group of environment variables exported when the configuration matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionGroup {
    pub variables: Vec<EnvAssignment>,
}

/// One platform configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    /// Platform name, written as the `NAME=` line of the environment file.
    #[serde(rename = "Name")]
    pub name: String,
    /// How check results combine. Omitted in most files; defaults to
    /// requiring every check to pass.
    #[serde(default)]
    pub rule: MatchRule,
    /// Identity checks. An empty list matches unconditionally.
    #[serde(rename = "Checks")]
    pub checks: Vec<Check>,
    /// Variables exported when this configuration is selected.
    #[serde(rename = "Actions")]
    pub actions: Vec<ActionGroup>,
    /// File the configuration was loaded from. Not part of the JSON schema.
    #[serde(skip)]
    pub source_file: PathBuf,
}

impl PlatformConfig {
    /// A configuration with no checks matches every machine.
    pub fn is_unconditional(&self) -> bool {
        self.checks.is_empty()
    }

    fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let schema_err = |detail: String| ConfigError::Schema { path: path.to_owned(), detail };
        if self.name.is_empty() {
            return Err(schema_err("Name must not be empty".to_owned()));
        }
        if self.name.contains(['\n', '\r']) {
            return Err(schema_err("Name must not contain line breaks".to_owned()));
        }
        for (index, check) in self.checks.iter().enumerate() {
            if check.interface.is_empty() {
                return Err(schema_err(format!("Checks[{index}]: interface must not be empty")));
            }
            if check.property.is_empty() {
                return Err(schema_err(format!("Checks[{index}]: property must not be empty")));
            }
        }
        Ok(())
    }
}

/// Loads and validates a single configuration file.
pub fn load_config(path: &Path) -> Result<PlatformConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    let mut config: PlatformConfig =
        serde_json::from_str(&text).map_err(|err| ConfigError::from_json(path, err))?;
    config.source_file = path.to_owned();
    config.validate(path)?;
    Ok(config)
}

/// Lists the `*.json` files of a directory in byte-wise lexicographic
/// filename order: the ordering rule for configuration directories, shared
/// by fleet fixture directories. The extension match is case-sensitive and
/// non-files are ignored.
pub fn list_json_files(dir: &Path) -> Result<Vec<PathBuf>, ConfigError> {
    let entries =
        fs::read_dir(dir).map_err(|source| ConfigError::Io { path: dir.to_owned(), source })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| ConfigError::Io { path: dir.to_owned(), source })?;
        let path = entry.path();
        if path.extension().is_some_and(|ext| ext == "json") && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// An ordered configuration directory plus its optional default fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigDirectory {
    /// Candidate configurations in filename order, default excluded.
    pub configs: Vec<PlatformConfig>,
    /// Fallback used when no candidate matches.
    pub default_config: Option<PlatformConfig>,
}

impl ConfigDirectory {
    /// Iterates candidates in order, then the default if present.
    pub fn all_configs(&self) -> impl Iterator<Item = &PlatformConfig> {
        self.configs.iter().chain(self.default_config.as_ref())
    }

    /// Finds a configuration by platform name, candidates first.
    pub fn find_by_name(&self, name: &str) -> Option<&PlatformConfig> {
        self.all_configs().find(|config| config.name == name)
    }
}

/// Loads every configuration in `dir`, failing on the first unreadable or
/// invalid file.
///
/// By default the file named [`DEFAULT_CONFIG_FILENAME`] becomes the fallback
/// configuration. Passing `default_name` instead designates the first loaded
/// configuration whose `Name` equals it, and requires that it exists.
pub fn load_directory(
    dir: &Path,
    default_name: Option<&str>,
) -> Result<ConfigDirectory, ConfigError> {
    let mut configs = Vec::new();
    for path in list_json_files(dir)? {
        configs.push(load_config(&path)?);
    }
    let default_config = match default_name {
        Some(name) => {
            let index = configs
                .iter()
                .position(|config| config.name == name)
                .ok_or_else(|| ConfigError::DefaultNotFound { name: name.to_owned() })?;
            Some(configs.remove(index))
        }
        None => {
            let index = configs.iter().position(|config| {
                config.source_file.file_name().is_some_and(|f| f == DEFAULT_CONFIG_FILENAME)
            });
            index.map(|i| configs.remove(i))
        }
    };
    Ok(ConfigDirectory { configs, default_config })
}
