//! Check evaluation and first-match platform selection.
//!
//! A run evaluates configurations in directory order and stops at the first
//! one whose checks pass. Individual checks compare observed property values
//! against an expected value and combine per-object results with the check's
//! rule; a configuration combines its check results with its own rule.
//!
//! Absence is data here: an object or property that is missing makes that
//! observation a non-match, while a transport failure aborts the whole run
//! rather than risk selecting the wrong platform on partial information.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::config::{Check, ConfigDirectory, MatchRule, PlatformConfig};
use crate::provider::{PropertyProvider, PropertyValue, ProviderError};

/// Service names whose objects count as hardware identity sources.
///
/// Discovery returns every owner of an interface; only owners on this list
/// are queried, so unrelated services exposing look-alike interfaces cannot
/// influence selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecognizedFruServices {
    services: Vec<String>,
}

impl Default for RecognizedFruServices {
    fn default() -> Self {
        RecognizedFruServices {
            services: vec![
                "com.Nvidia.FruManager".to_owned(),
                "xyz.openbmc_project.FruDevice".to_owned(),
            ],
        }
    }
}

impl RecognizedFruServices {
    /// Builds a non-empty, deduplicated service list, preserving order.
    pub fn new(services: Vec<String>) -> Result<Self, String> {
        if services.is_empty() {
            return Err("the recognized service list must not be empty".to_owned());
        }
        if services.iter().any(|s| s.is_empty()) {
            return Err("recognized service names must not be empty".to_owned());
        }
        let mut deduped: Vec<String> = Vec::with_capacity(services.len());
        for service in services {
            if !deduped.contains(&service) {
                deduped.push(service);
            }
        }
        Ok(RecognizedFruServices { services: deduped })
    }

    pub fn contains(&self, service: &str) -> bool {
        self.services.iter().any(|s| s == service)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.services.iter().map(String::as_str)
    }
}

/// What one property query produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObservedValue {
    /// The property exists; whether it matches is a separate question.
    Value(PropertyValue),
    /// The service does not expose the object path.
    NoSuchObject,
    /// The object exists but lacks the interface or property.
    NoSuchProperty,
}

impl ObservedValue {
    fn matches(&self, expected: &str) -> bool {
        match self {
            ObservedValue::Value(value) => value.matches_expected(expected),
            ObservedValue::NoSuchObject | ObservedValue::NoSuchProperty => false,
        }
    }

    /// Rendering for logs and reports.
    pub fn render(&self) -> String {
        match self {
            ObservedValue::Value(value) => value.display_string(),
            ObservedValue::NoSuchObject => "<no such object>".to_owned(),
            ObservedValue::NoSuchProperty => "<no such property>".to_owned(),
        }
    }
}

/// One (service, object) query and its result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub service: String,
    pub object_path: String,
    pub value: ObservedValue,
}

/// The full record of evaluating one check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckEvaluation {
    pub check: Check,
    /// Object paths the check actually used: the discovered set for an empty
    /// `objects` list, the listed paths otherwise.
    pub objects: Vec<String>,
    pub observations: Vec<Observation>,
    pub passed: bool,
}

/// A check within a configuration evaluation; short-circuiting leaves later
/// checks unevaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Evaluated(CheckEvaluation),
    Unevaluated(Check),
}

/// How a configuration fared during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigOutcome {
    Passed,
    Failed,
    /// Not looked at because an earlier configuration already matched.
    Unevaluated,
    /// Selected as the default fallback; its checks are never evaluated.
    Fallback,
}

/// Selection record for one configuration, in evaluation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEvaluation {
    pub name: String,
    pub source_file: PathBuf,
    pub rule: MatchRule,
    pub outcome: ConfigOutcome,
    pub checks: Vec<CheckStatus>,
}

impl ConfigEvaluation {
    fn without_checks(config: &PlatformConfig, outcome: ConfigOutcome) -> Self {
        ConfigEvaluation {
            name: config.name.clone(),
            source_file: config.source_file.clone(),
            rule: config.rule,
            outcome,
            checks: config.checks.iter().cloned().map(CheckStatus::Unevaluated).collect(),
        }
    }
}

/// Why a configuration was (or was not) selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    /// A candidate's checks passed.
    Matched,
    /// No candidate matched; the default configuration applies.
    DefaultFallback,
    /// No candidate matched and there is no default.
    NoMatch,
}

/// The result of a full selection pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub kind: MatchKind,
    /// The selected configuration, absent only for [`MatchKind::NoMatch`].
    pub config: Option<PlatformConfig>,
    /// One entry per configuration, candidates in directory order, then the
    /// default if one exists.
    pub evaluations: Vec<ConfigEvaluation>,
}

impl MatchOutcome {
    pub fn selected_name(&self) -> Option<&str> {
        self.config.as_ref().map(|c| c.name.as_str())
    }
}

/// Combines per-object match results under a rule.
///
/// `MatchAll` over zero observations is false: a check that observed nothing
/// has not established anything about the machine, and treating it as a pass
/// would let configurations match on absent hardware.
fn rule_passed(rule: MatchRule, matched: &[bool]) -> bool {
    match rule {
        MatchRule::MatchAll => !matched.is_empty() && matched.iter().all(|&m| m),
        MatchRule::MatchOne => matched.iter().any(|&m| m),
    }
}

/// The (service, object path) pairs a check will query.
fn resolve_targets(
    check: &Check,
    provider: &dyn PropertyProvider,
    recognized: &RecognizedFruServices,
) -> Result<Vec<(String, String)>, ProviderError> {
    let entries = provider.get_subtree(&check.interface)?;
    // Ownership map restricted to recognized services that really implement
    // the interface on the path.
    let mut owners_by_path: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for entry in &entries {
        for owner in &entry.owners {
            if recognized.contains(&owner.service)
                && owner.interfaces.iter().any(|i| i == &check.interface)
            {
                owners_by_path.entry(&entry.object_path).or_default().push(&owner.service);
            }
        }
    }

    if check.objects.is_empty() {
        // Discovery: every recognized owner of the interface, in a canonical
        // order independent of how the transport returned them.
        let mut targets: Vec<(String, String)> = owners_by_path
            .iter()
            .flat_map(|(path, services)| {
                services.iter().map(|service| (service.to_string(), path.to_string()))
            })
            .collect();
        targets.sort();
        targets.dedup();
        Ok(targets)
    } else {
        // Listed paths keep their declaration order. A path no recognized
        // service owns is still queried everywhere so the report shows each
        // service answering "no such object".
        let mut targets = Vec::new();
        for path in &check.objects {
            match owners_by_path.get(path.as_str()) {
                Some(services) => {
                    let mut services = services.clone();
                    services.sort();
                    services.dedup();
                    targets.extend(services.into_iter().map(|s| (s.to_owned(), path.clone())));
                }
                None => {
                    targets.extend(recognized.iter().map(|s| (s.to_owned(), path.clone())));
                }
            }
        }
        Ok(targets)
    }
}

/// Evaluates one check: resolves targets, reads each property, and combines
/// the comparisons under the check's rule.
///
/// Missing objects and properties become non-matching observations; only
/// transport failures propagate.
pub fn evaluate_check(
    check: &Check,
    provider: &dyn PropertyProvider,
    recognized: &RecognizedFruServices,
) -> Result<CheckEvaluation, ProviderError> {
    let targets = resolve_targets(check, provider, recognized)?;

    let objects = if check.objects.is_empty() {
        let mut paths: Vec<String> = targets.iter().map(|(_, path)| path.clone()).collect();
        paths.sort();
        paths.dedup();
        paths
    } else {
        check.objects.clone()
    };

    let mut observations = Vec::with_capacity(targets.len());
    for (service, object_path) in targets {
        let value = match provider.get_property(
            &service,
            &object_path,
            &check.interface,
            &check.property,
        ) {
            Ok(value) => ObservedValue::Value(value),
            Err(ProviderError::NoSuchObject(_)) => ObservedValue::NoSuchObject,
            Err(ProviderError::NoSuchProperty(_)) => ObservedValue::NoSuchProperty,
            Err(err @ ProviderError::Transport(_)) => return Err(err),
        };
        observations.push(Observation { service, object_path, value });
    }

    let matched: Vec<bool> = observations.iter().map(|o| o.value.matches(&check.value)).collect();
    let passed = rule_passed(check.rule, &matched);
    Ok(CheckEvaluation { check: check.clone(), objects, observations, passed })
}

/// Evaluates a configuration's checks under its rule, short-circuiting as
/// soon as the outcome is decided.
///
/// A configuration with no checks passes under either rule: it asserts
/// nothing, so nothing can fail. (This differs deliberately from the
/// check-level rule over zero observations, where an empty observation set
/// means the asserted hardware was not found.)
pub fn evaluate_config(
    config: &PlatformConfig,
    provider: &dyn PropertyProvider,
    recognized: &RecognizedFruServices,
) -> Result<(bool, Vec<CheckStatus>), ProviderError> {
    let mut statuses: Vec<CheckStatus> = Vec::with_capacity(config.checks.len());
    let mut decided: Option<bool> = if config.checks.is_empty() { Some(true) } else { None };
    for check in &config.checks {
        if decided.is_some() {
            statuses.push(CheckStatus::Unevaluated(check.clone()));
            continue;
        }
        let evaluation = evaluate_check(check, provider, recognized)?;
        let passed = evaluation.passed;
        statuses.push(CheckStatus::Evaluated(evaluation));
        decided = match (config.rule, passed) {
            (MatchRule::MatchAll, false) => Some(false),
            (MatchRule::MatchOne, true) => Some(true),
            _ => None,
        };
    }
    let passed = decided.unwrap_or(match config.rule {
        // Undecided after all checks: MatchAll saw no failure, MatchOne saw
        // no success.
        MatchRule::MatchAll => true,
        MatchRule::MatchOne => false,
    });
    Ok((passed, statuses))
}

/// Runs first-match selection over a configuration directory.
///
/// Candidates are evaluated in directory order; the first match wins and
/// everything after it is recorded as unevaluated. If nothing matches, the
/// default configuration (when present) is selected without evaluating its
/// checks.
pub fn select_platform(
    directory: &ConfigDirectory,
    provider: &dyn PropertyProvider,
    recognized: &RecognizedFruServices,
) -> Result<MatchOutcome, ProviderError> {
    let mut evaluations = Vec::with_capacity(directory.configs.len() + 1);
    let mut winner: Option<&PlatformConfig> = None;
    for config in &directory.configs {
        if winner.is_some() {
            evaluations.push(ConfigEvaluation::without_checks(config, ConfigOutcome::Unevaluated));
            continue;
        }
        let (passed, checks) = evaluate_config(config, provider, recognized)?;
        evaluations.push(ConfigEvaluation {
            name: config.name.clone(),
            source_file: config.source_file.clone(),
            rule: config.rule,
            outcome: if passed { ConfigOutcome::Passed } else { ConfigOutcome::Failed },
            checks,
        });
        if passed {
            winner = Some(config);
        }
    }

    if let Some(default) = &directory.default_config {
        let outcome =
            if winner.is_none() { ConfigOutcome::Fallback } else { ConfigOutcome::Unevaluated };
        evaluations.push(ConfigEvaluation::without_checks(default, outcome));
    }

    Ok(match winner {
        Some(config) => {
            MatchOutcome { kind: MatchKind::Matched, config: Some(config.clone()), evaluations }
        }
        None => match &directory.default_config {
            Some(default) => MatchOutcome {
                kind: MatchKind::DefaultFallback,
                config: Some(default.clone()),
                evaluations,
            },
            None => MatchOutcome { kind: MatchKind::NoMatch, config: None, evaluations },
        },
    })
}
