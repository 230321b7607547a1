//! Machine-readable run reports.
//!
//! A report captures one selection pass end to end: which configurations
//! were considered in which order, what every evaluated check observed, and
//! what was ultimately written. Apart from the timestamp the report is a
//! pure function of the run inputs, so fleet tooling can diff reports across
//! boots and firmware versions.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PlatformConfig;
use crate::matcher::{
    CheckStatus, ConfigEvaluation, ConfigOutcome, MatchKind, RecognizedFruServices,
};

/// Hex-encoded SHA-256, used to fingerprint environment file contents.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where `--report` sends the JSON document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportDest {
    /// `--report -`. Standard error, because standard output belongs to
    /// subcommands that print tables.
    Stderr,
    File(PathBuf),
}

/// Top-level report document.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// `detect` or `skip-checks`.
    pub mode: String,
    /// UTC time of the run; the only non-deterministic field.
    pub timestamp: String,
    pub config_dir: String,
    pub env_file: String,
    /// `bus` or `fixture`.
    pub provider: String,
    pub recognized_services: Vec<String>,
    pub outcome: OutcomeReport,
    /// Every configuration in evaluation order, then the default if any.
    pub configs: Vec<ConfigReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    /// `matched`, `default-fallback`, `no-match`, or `reused` (skip-checks
    /// fast path).
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_file: Option<String>,
    /// Digest of the environment file contents this run produced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigReport {
    pub name: String,
    pub source_file: String,
    pub rule: String,
    /// `passed`, `failed`, `unevaluated`, or `fallback`.
    pub result: String,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub evaluated: bool,
    pub rule: String,
    pub interface: String,
    pub property: String,
    pub expected: String,
    /// Object paths the check used (discovered or listed). Empty when the
    /// check went unevaluated.
    pub objects: Vec<String>,
    pub observations: Vec<ObservationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservationReport {
    pub service: String,
    pub object_path: String,
    /// Rendered value; absence renders as `<no such object>` or
    /// `<no such property>`.
    pub value: String,
    pub matched: bool,
}

/// Static facts about the run the report describes.
#[derive(Debug, Clone, Copy)]
pub struct ReportContext<'a> {
    pub mode: &'a str,
    pub provider: &'a str,
    pub config_dir: &'a Path,
    pub env_file: &'a Path,
    pub recognized: &'a RecognizedFruServices,
}

pub fn kind_str(kind: MatchKind) -> &'static str {
    match kind {
        MatchKind::Matched => "matched",
        MatchKind::DefaultFallback => "default-fallback",
        MatchKind::NoMatch => "no-match",
    }
}

fn outcome_str(outcome: ConfigOutcome) -> &'static str {
    match outcome {
        ConfigOutcome::Passed => "passed",
        ConfigOutcome::Failed => "failed",
        ConfigOutcome::Unevaluated => "unevaluated",
        ConfigOutcome::Fallback => "fallback",
    }
}

fn config_report(evaluation: &ConfigEvaluation) -> ConfigReport {
    let checks = evaluation
        .checks
        .iter()
        .map(|status| match status {
            CheckStatus::Evaluated(eval) => CheckReport {
                evaluated: true,
                rule: eval.check.rule.to_string(),
                interface: eval.check.interface.clone(),
                property: eval.check.property.clone(),
                expected: eval.check.value.clone(),
                objects: eval.objects.clone(),
                observations: eval
                    .observations
                    .iter()
                    .map(|o| ObservationReport {
                        service: o.service.clone(),
                        object_path: o.object_path.clone(),
                        value: o.value.render(),
                        matched: match &o.value {
                            crate::matcher::ObservedValue::Value(v) => {
                                v.matches_expected(&eval.check.value)
                            }
                            _ => false,
                        },
                    })
                    .collect(),
                passed: Some(eval.passed),
            },
            CheckStatus::Unevaluated(check) => CheckReport {
                evaluated: false,
                rule: check.rule.to_string(),
                interface: check.interface.clone(),
                property: check.property.clone(),
                expected: check.value.clone(),
                objects: Vec::new(),
                observations: Vec::new(),
                passed: None,
            },
        })
        .collect();
    ConfigReport {
        name: evaluation.name.clone(),
        source_file: evaluation.source_file.display().to_string(),
        rule: evaluation.rule.to_string(),
        result: outcome_str(evaluation.outcome).to_owned(),
        checks,
    }
}

/// Assembles a report. `kind` is the outcome kind string, `selected` the
/// chosen configuration if any, and `env_sha256` the digest of the rendered
/// environment file contents when one was produced.
pub fn build_report(
    ctx: &ReportContext<'_>,
    evaluations: &[ConfigEvaluation],
    kind: &str,
    selected: Option<&PlatformConfig>,
    env_sha256: Option<String>,
) -> RunReport {
    RunReport {
        mode: ctx.mode.to_owned(),
        timestamp: Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        config_dir: ctx.config_dir.display().to_string(),
        env_file: ctx.env_file.display().to_string(),
        provider: ctx.provider.to_owned(),
        recognized_services: ctx.recognized.iter().map(str::to_owned).collect(),
        outcome: OutcomeReport {
            kind: kind.to_owned(),
            name: selected.map(|c| c.name.clone()),
            source_file: selected.map(|c| c.source_file.display().to_string()),
            env_sha256,
        },
        configs: evaluations.iter().map(config_report).collect(),
    }
}

/// Writes the report as pretty-printed JSON. Reporting is best-effort
/// observability; callers log failures but do not change the exit code.
pub fn emit_report(report: &RunReport, dest: &ReportDest) -> io::Result<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    match dest {
        ReportDest::Stderr => io::stderr().lock().write_all(json.as_bytes()),
        ReportDest::File(path) => std::fs::write(path, json),
    }
}
