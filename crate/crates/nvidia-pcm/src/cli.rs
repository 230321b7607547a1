//! Command-line interface, run orchestration, and exit codes.
//!
//! The binary has one primary mode (detect and write the environment file)
//! plus a fast path (`--skip-checks`), an offline linter (`validate`), and
//! an offline what-if runner (`simulate`). All human-facing output goes to
//! standard error as single-line `key=value` records; standard output is
//! reserved for the `simulate` table.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bus::BusProvider;
use crate::config::{
    list_json_files, load_config, load_directory, ConfigDirectory, PlatformConfig,
    DEFAULT_CONFIG_FILENAME,
};
use crate::envfile::{read_env_name, render_env_file, write_env_file, DEFAULT_ENV_FILE};
use crate::fixture::FixtureProvider;
use crate::matcher::{
    select_platform, CheckStatus, ConfigEvaluation, ConfigOutcome, MatchKind, MatchOutcome,
    RecognizedFruServices,
};
use crate::provider::{PropertyProvider, SubtreeCache};
use crate::report::{build_report, emit_report, kind_str, sha256_hex, ReportContext, ReportDest};

/// Where platform configuration files live unless `--config-dir` says
/// otherwise.
pub const DEFAULT_CONFIG_DIR: &str = "/usr/share/nvidia-pcm/platform-configuration-files";

/// Process exit codes. Success covers both a real match and the default
/// fallback; everything else distinguishes failure families so service
/// units and fleet tooling can react differently.
pub mod exit_code {
    /// A platform was selected and the environment file was written.
    pub const SUCCESS: i32 = 0;
    /// No configuration matched and there is no default.
    pub const NO_MATCH: i32 = 2;
    /// The message bus was unreachable or unreliable.
    pub const TRANSPORT: i32 = 3;
    /// Configuration files, fixtures, or command-line usage were invalid.
    pub const CONFIG: i32 = 4;
    /// The environment file could not be written.
    pub const ENV_WRITE: i32 = 5;
    /// `validate` found a shadowing hazard (and no outright errors).
    pub const SHADOWING: i32 = 6;
}

#[derive(Debug, Parser)]
#[command(
    name = "nvidia-pcm",
    version,
    about = "Detects the platform variant and exports its configuration as an environment file"
)]
pub struct Cli {
    /// Reuse the platform recorded in the environment file when possible,
    /// skipping all bus queries.
    #[arg(long)]
    pub skip_checks: bool,

    /// Directory of platform configuration files.
    #[arg(long, value_name = "DIR", default_value = DEFAULT_CONFIG_DIR)]
    pub config_dir: PathBuf,

    /// Environment file to write.
    #[arg(long, value_name = "FILE", default_value = DEFAULT_ENV_FILE)]
    pub env_file: PathBuf,

    /// Answer bus queries from a fixture file instead of the system bus.
    #[arg(long, value_name = "FILE")]
    pub fixture: Option<PathBuf>,

    /// Service name to accept as a hardware identity source. Repeatable;
    /// defaults to the built-in FRU service list.
    #[arg(long = "recognized-service", value_name = "SERVICE")]
    pub recognized_service: Vec<String>,

    /// Write a JSON run report to PATH, or to standard error for "-".
    #[arg(long, value_name = "PATH")]
    pub report: Option<String>,

    /// Use the configuration with this Name as the default fallback instead
    /// of the one from the reserved filename.
    #[arg(long, value_name = "NAME")]
    pub default_name: Option<String>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the configuration directory for errors and shadowing hazards.
    Validate,
    /// Select a platform for every fixture in a directory and print a table.
    Simulate {
        /// Directory of machine fixture files (*.json).
        fleet_dir: PathBuf,
    },
}

/// Everything a run needs, resolved from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_dir: PathBuf,
    pub env_file: PathBuf,
    pub fixture: Option<PathBuf>,
    pub recognized: RecognizedFruServices,
    pub report: Option<ReportDest>,
    pub default_name: Option<String>,
}

impl RunOptions {
    fn provider_kind(&self) -> &'static str {
        if self.fixture.is_some() {
            "fixture"
        } else {
            "bus"
        }
    }
}

/// What the invocation asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Invocation {
    Detect,
    SkipChecks,
    Validate,
    Simulate(PathBuf),
}

/// Resolves parsed arguments into run options, rejecting meaningless
/// combinations.
pub fn plan(cli: Cli) -> Result<(RunOptions, Invocation), String> {
    let invocation = match (cli.skip_checks, cli.command) {
        (false, None) => Invocation::Detect,
        (true, None) => Invocation::SkipChecks,
        (false, Some(Command::Validate)) => Invocation::Validate,
        (false, Some(Command::Simulate { fleet_dir })) => Invocation::Simulate(fleet_dir),
        (true, Some(_)) => {
            return Err("--skip-checks only applies to detection, not to subcommands".to_owned())
        }
    };
    let recognized = if cli.recognized_service.is_empty() {
        RecognizedFruServices::default()
    } else {
        RecognizedFruServices::new(cli.recognized_service)?
    };
    let report = cli.report.map(|raw| {
        if raw == "-" {
            ReportDest::Stderr
        } else {
            ReportDest::File(PathBuf::from(raw))
        }
    });
    Ok((
        RunOptions {
            config_dir: cli.config_dir,
            env_file: cli.env_file,
            fixture: cli.fixture,
            recognized,
            report,
            default_name: cli.default_name,
        },
        invocation,
    ))
}

/// Entry point behind `main`: plans the invocation and dispatches.
pub fn run(cli: Cli) -> i32 {
    let (options, invocation) = match plan(cli) {
        Ok(planned) => planned,
        Err(detail) => {
            log_line("error", "usage-error", &[("detail", &detail)]);
            return exit_code::CONFIG;
        }
    };
    match invocation {
        Invocation::Detect => match build_provider(&options) {
            Ok(provider) => run_detect(&options, &provider),
            Err(code) => code,
        },
        Invocation::SkipChecks => run_skip_checks(&options),
        Invocation::Validate => run_validate(&options),
        Invocation::Simulate(fleet_dir) => run_simulate(&options, &fleet_dir),
    }
}

/// Builds the provider the options call for, wrapped in the per-run subtree
/// cache. Fixture problems are configuration errors; failing to reach the
/// bus is a transport error.
fn build_provider(options: &RunOptions) -> Result<Box<dyn PropertyProvider>, i32> {
    let inner: Box<dyn PropertyProvider> = match &options.fixture {
        Some(path) => match FixtureProvider::load(path) {
            Ok(provider) => Box::new(provider),
            Err(err) => {
                log_line("error", "fixture-load-failed", &[("detail", &err.to_string())]);
                return Err(exit_code::CONFIG);
            }
        },
        None => match BusProvider::system() {
            Ok(provider) => Box::new(provider),
            Err(err) => {
                log_line("error", "bus-connect-failed", &[("detail", &err.to_string())]);
                return Err(exit_code::TRANSPORT);
            }
        },
    };
    Ok(Box::new(SubtreeCache::new(inner)))
}

/// Full detection: load configurations, evaluate them against the provider,
/// write the environment file.
pub fn run_detect(options: &RunOptions, provider: &dyn PropertyProvider) -> i32 {
    let directory = match load_directory(&options.config_dir, options.default_name.as_deref()) {
        Ok(directory) => directory,
        Err(err) => {
            log_line("error", "config-load-failed", &[("detail", &err.to_string())]);
            return exit_code::CONFIG;
        }
    };
    let outcome = match select_platform(&directory, provider, &options.recognized) {
        Ok(outcome) => outcome,
        Err(err) => {
            log_line("error", "bus-transport-failed", &[("detail", &err.to_string())]);
            return exit_code::TRANSPORT;
        }
    };
    publish_selection(options, "detect", &outcome)
}

/// Writes the environment file for a completed selection and emits the
/// report. Shared by detection and the simulate-free paths.
fn publish_selection(options: &RunOptions, mode: &str, outcome: &MatchOutcome) -> i32 {
    if outcome.kind == MatchKind::NoMatch {
        log_line(
            "error",
            "no-platform-matched",
            &[
                ("config_dir", &options.config_dir.display().to_string()),
                ("hint", "no configuration matched and there is no default"),
            ],
        );
        emit_report_if_requested(options, mode, &outcome.evaluations, "no-match", None, None);
        return exit_code::NO_MATCH;
    }

    let config = outcome.config.as_ref().expect("a selected outcome carries its config");
    let provenance = kind_str(outcome.kind);
    log_line(
        if outcome.kind == MatchKind::DefaultFallback { "warning" } else { "info" },
        "platform-selected",
        &[
            ("name", &config.name),
            ("source", &config.source_file.display().to_string()),
            ("provenance", provenance),
        ],
    );

    let contents = render_env_file(&config.name, &config.actions);
    let digest = sha256_hex(contents.as_bytes());
    let write_result = write_env_file(&config.name, &config.actions, &options.env_file);
    match &write_result {
        Ok(()) => log_line(
            "info",
            "env-file-written",
            &[("path", &options.env_file.display().to_string()), ("sha256", &digest)],
        ),
        Err(err) => log_line("error", "env-file-write-failed", &[("detail", &err.to_string())]),
    }
    emit_report_if_requested(
        options,
        mode,
        &outcome.evaluations,
        provenance,
        Some(config),
        Some(digest),
    );
    if write_result.is_ok() {
        exit_code::SUCCESS
    } else {
        exit_code::ENV_WRITE
    }
}

/// `--skip-checks`: reuse the previously detected platform if the recorded
/// name still resolves to a configuration; otherwise fall back to a full
/// detection.
pub fn run_skip_checks(options: &RunOptions) -> i32 {
    match skip_fast_path(options) {
        Ok(code) => code,
        Err(reason) => {
            log_line("info", "skip-checks-fallback", &[("reason", &reason)]);
            match build_provider(options) {
                Ok(provider) => run_detect(options, &provider),
                Err(code) => code,
            }
        }
    }
}

/// The queryless path. `Err` carries the reason detection is needed after
/// all; `Ok` is a final exit code.
fn skip_fast_path(options: &RunOptions) -> Result<i32, String> {
    let name = match read_env_name(&options.env_file) {
        Ok(Some(name)) => name,
        Ok(None) => return Err("no-previous-platform".to_owned()),
        Err(_) => return Err("env-file-unreadable".to_owned()),
    };
    let directory = match load_directory(&options.config_dir, options.default_name.as_deref()) {
        Ok(directory) => directory,
        Err(err) => {
            // A broken configuration directory is fatal in every mode; a
            // detection pass could not recover from it either.
            log_line("error", "config-load-failed", &[("detail", &err.to_string())]);
            return Ok(exit_code::CONFIG);
        }
    };
    let Some(config) = directory.find_by_name(&name) else {
        return Err("previous-platform-unknown".to_owned());
    };

    let contents = render_env_file(&config.name, &config.actions);
    let digest = sha256_hex(contents.as_bytes());
    if let Err(err) = write_env_file(&config.name, &config.actions, &options.env_file) {
        log_line("error", "env-file-write-failed", &[("detail", &err.to_string())]);
        return Ok(exit_code::ENV_WRITE);
    }
    log_line(
        "info",
        "platform-reused",
        &[
            ("name", &config.name),
            ("source", &config.source_file.display().to_string()),
            ("path", &options.env_file.display().to_string()),
            ("sha256", &digest),
        ],
    );
    let evaluations = directory_unevaluated(&directory);
    emit_report_if_requested(
        options,
        "skip-checks",
        &evaluations,
        "reused",
        Some(config),
        Some(digest),
    );
    Ok(exit_code::SUCCESS)
}

fn emit_report_if_requested(
    options: &RunOptions,
    mode: &str,
    evaluations: &[ConfigEvaluation],
    kind: &str,
    selected: Option<&PlatformConfig>,
    env_sha256: Option<String>,
) {
    let Some(dest) = &options.report else { return };
    let ctx = ReportContext {
        mode,
        provider: options.provider_kind(),
        config_dir: &options.config_dir,
        env_file: &options.env_file,
        recognized: &options.recognized,
    };
    let report = build_report(&ctx, evaluations, kind, selected, env_sha256);
    if let Err(err) = emit_report(&report, dest) {
        log_line("warning", "report-write-failed", &[("detail", &err.to_string())]);
    }
}

/// Severity of a `validate` finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// The directory cannot be trusted; detection would misbehave.
    Error,
    /// Legal but almost certainly not what the operator meant.
    Hazard,
    /// Worth knowing; not wrong.
    Info,
}

/// One `validate` observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    fn error(message: String) -> Self {
        Finding { severity: Severity::Error, message }
    }

    fn hazard(message: String) -> Self {
        Finding { severity: Severity::Hazard, message }
    }

    fn info(message: String) -> Self {
        Finding { severity: Severity::Info, message }
    }
}

fn describe(config: &PlatformConfig) -> String {
    let file = config
        .source_file
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| config.source_file.display().to_string());
    format!("{:?} ({file})", config.name)
}

/// Lints a configuration directory. Unlike loading, validation reads every
/// file even after a failure so one run reports everything.
pub fn validate_directory(
    dir: &Path,
    default_name: Option<&str>,
) -> Result<Vec<Finding>, crate::config::ConfigError> {
    let files = list_json_files(dir)?;
    let mut findings = Vec::new();
    let mut loaded: Vec<PlatformConfig> = Vec::new();
    for path in &files {
        match load_config(path) {
            Ok(config) => loaded.push(config),
            Err(err) => findings.push(Finding::error(err.to_string())),
        }
    }

    let default_index = match default_name {
        Some(name) => {
            let index = loaded.iter().position(|c| c.name == name);
            if index.is_none() {
                findings.push(Finding::error(format!(
                    "--default-name {name:?} matches no configuration"
                )));
            }
            index
        }
        None => {
            let index = loaded.iter().position(|c| {
                c.source_file.file_name().is_some_and(|f| f == DEFAULT_CONFIG_FILENAME)
            });
            if index.is_none() {
                findings.push(Finding::info(format!(
                    "no default configuration ({DEFAULT_CONFIG_FILENAME}); a machine matching \
                     nothing will get no environment file"
                )));
            }
            index
        }
    };

    for (i, a) in loaded.iter().enumerate() {
        for b in &loaded[i + 1..] {
            if a.name == b.name {
                findings.push(Finding::error(format!(
                    "duplicate platform name: {} and {}",
                    describe(a),
                    describe(b)
                )));
            }
        }
    }

    for config in &loaded {
        let mut seen = BTreeSet::new();
        let mut repeated = BTreeSet::new();
        for group in &config.actions {
            for variable in &group.variables {
                if !seen.insert(variable.key()) {
                    repeated.insert(variable.key());
                }
            }
        }
        for key in repeated {
            findings
                .push(Finding::error(format!("{} assigns {key} more than once", describe(config))));
        }
    }

    let candidates: Vec<&PlatformConfig> = loaded
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != default_index)
        .map(|(_, c)| c)
        .collect();
    if let Some(first) = candidates.iter().position(|c| c.is_unconditional()) {
        for shadowed in &candidates[first + 1..] {
            findings.push(Finding::hazard(format!(
                "{} can never match: {} has no checks and matches everything first",
                describe(shadowed),
                describe(candidates[first])
            )));
        }
    }

    Ok(findings)
}

/// `validate`: lint the directory and fold findings into an exit code.
/// Errors trump hazards; hazards trump a clean pass.
pub fn run_validate(options: &RunOptions) -> i32 {
    let findings = match validate_directory(&options.config_dir, options.default_name.as_deref()) {
        Ok(findings) => findings,
        Err(err) => {
            log_line("error", "config-load-failed", &[("detail", &err.to_string())]);
            return exit_code::CONFIG;
        }
    };
    let mut errors = 0u32;
    let mut hazards = 0u32;
    for finding in &findings {
        let level = match finding.severity {
            Severity::Error => {
                errors += 1;
                "error"
            }
            Severity::Hazard => {
                hazards += 1;
                "warning"
            }
            Severity::Info => "info",
        };
        log_line(level, "validate-finding", &[("detail", &finding.message)]);
    }
    log_line(
        "info",
        "validate-summary",
        &[
            ("config_dir", &options.config_dir.display().to_string()),
            ("errors", &errors.to_string()),
            ("hazards", &hazards.to_string()),
        ],
    );
    if errors > 0 {
        exit_code::CONFIG
    } else if hazards > 0 {
        exit_code::SHADOWING
    } else {
        exit_code::SUCCESS
    }
}

struct SimulationRow {
    fixture: String,
    platform: String,
    provenance: String,
    digest: String,
}

/// Renders the simulate table: tab-separated, one row per fixture. Cells
/// have tabs flattened so the table stays parseable.
fn simulation_table(rows: &[SimulationRow]) -> String {
    let cell = |s: &str| s.replace('\t', " ");
    let mut out = String::from("FIXTURE\tPLATFORM\tPROVENANCE\tDIGEST\n");
    for row in rows {
        out.push_str(&cell(&row.fixture));
        out.push('\t');
        out.push_str(&cell(&row.platform));
        out.push('\t');
        out.push_str(&cell(&row.provenance));
        out.push('\t');
        out.push_str(&cell(&row.digest));
        out.push('\n');
    }
    out
}

/// `simulate`: run selection for every fixture in a directory against one
/// configuration directory, without writing anything. Exit is success only
/// when every fixture resolves to a platform.
pub fn run_simulate(options: &RunOptions, fleet_dir: &Path) -> i32 {
    let directory = match load_directory(&options.config_dir, options.default_name.as_deref()) {
        Ok(directory) => directory,
        Err(err) => {
            log_line("error", "config-load-failed", &[("detail", &err.to_string())]);
            return exit_code::CONFIG;
        }
    };
    let fixtures = match list_json_files(fleet_dir) {
        Ok(fixtures) => fixtures,
        Err(err) => {
            log_line("error", "fleet-dir-unreadable", &[("detail", &err.to_string())]);
            return exit_code::CONFIG;
        }
    };
    if fixtures.is_empty() {
        log_line("warning", "empty-fleet", &[("fleet_dir", &fleet_dir.display().to_string())]);
    }

    let mut rows = Vec::with_capacity(fixtures.len());
    let mut unresolved = 0u32;
    for path in &fixtures {
        let provider = match FixtureProvider::load(path) {
            Ok(provider) => provider,
            Err(err) => {
                log_line("error", "fixture-load-failed", &[("detail", &err.to_string())]);
                return exit_code::CONFIG;
            }
        };
        let cached = SubtreeCache::new(provider);
        let outcome = match select_platform(&directory, &cached, &options.recognized) {
            Ok(outcome) => outcome,
            Err(err) => {
                log_line("error", "bus-transport-failed", &[("detail", &err.to_string())]);
                return exit_code::TRANSPORT;
            }
        };
        let fixture_name = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push(match &outcome.config {
            Some(config) => SimulationRow {
                fixture: fixture_name,
                platform: config.name.clone(),
                provenance: kind_str(outcome.kind).to_owned(),
                digest: sha256_hex(render_env_file(&config.name, &config.actions).as_bytes()),
            },
            None => {
                unresolved += 1;
                SimulationRow {
                    fixture: fixture_name,
                    platform: "-".to_owned(),
                    provenance: kind_str(outcome.kind).to_owned(),
                    digest: "-".to_owned(),
                }
            }
        });
    }

    print!("{}", simulation_table(&rows));
    log_line(
        "info",
        "simulate-summary",
        &[("fixtures", &rows.len().to_string()), ("unresolved", &unresolved.to_string())],
    );
    if unresolved == 0 {
        exit_code::SUCCESS
    } else {
        exit_code::NO_MATCH
    }
}

/// Values that survive as bare tokens in `key=value` logs; everything else
/// gets Rust string quoting, which escapes quotes and control characters.
fn needs_quoting(value: &str) -> bool {
    value.is_empty() || !value.chars().all(|c| c.is_ascii_alphanumeric() || "_.-/:@,+".contains(c))
}

fn log_line(level: &str, event: &str, fields: &[(&str, &str)]) {
    let mut line = String::new();
    line.push_str("level=");
    line.push_str(level);
    line.push_str(" event=");
    line.push_str(event);
    for (key, value) in fields {
        line.push(' ');
        line.push_str(key);
        line.push('=');
        if needs_quoting(value) {
            line.push_str(&format!("{value:?}"));
        } else {
            line.push_str(value);
        }
    }
    eprintln!("{line}");
}

/// Builds the evaluation list a report shows for selection outcomes; shared
/// with tests that compare detect and skip-checks behavior.
pub fn directory_unevaluated(directory: &ConfigDirectory) -> Vec<ConfigEvaluation> {
    directory
        .all_configs()
        .map(|c| ConfigEvaluation {
            name: c.name.clone(),
            source_file: c.source_file.clone(),
            rule: c.rule,
            outcome: ConfigOutcome::Unevaluated,
            checks: c.checks.iter().cloned().map(CheckStatus::Unevaluated).collect(),
        })
        .collect()
}
