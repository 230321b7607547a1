//! Shared machinery for the integration and acceptance tests: running the
//! binary, generating random scenarios, and an independent selection oracle
//! that re-derives first-match semantics directly from raw JSON documents,
//! without touching the library's matcher.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const RECOGNIZED: [&str; 2] = ["com.Nvidia.FruManager", "xyz.openbmc_project.FruDevice"];
pub const DEFAULT_FILENAME: &str = "plat_config_default.json";

pub fn pcm_binary() -> &'static str {
    env!("CARGO_BIN_EXE_nvidia-pcm")
}

pub fn run_pcm(args: &[&str]) -> Output {
    Command::new(pcm_binary()).args(args).output().expect("spawning the nvidia-pcm binary")
}

pub fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("binary terminated by signal")
}

pub fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn stdout_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// One generated test case: a configuration directory as (filename, JSON)
/// pairs and a machine fixture document.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config_files: Vec<(String, Value)>,
    pub fixture: Value,
}

impl Scenario {
    pub fn write_configs(&self, dir: &Path) {
        for (filename, config) in &self.config_files {
            std::fs::write(dir.join(filename), serde_json::to_string_pretty(config).unwrap())
                .unwrap();
        }
    }

    pub fn write_fixture(&self, path: &Path) {
        std::fs::write(path, serde_json::to_string_pretty(&self.fixture).unwrap()).unwrap();
    }
}

const PATHS: [&str; 3] = ["/fru/bmc", "/fru/board", "/fru/riser"];
const INTERFACES: [&str; 2] = ["ifc.alpha", "ifc.beta"];
const PROPERTIES: [&str; 3] = ["MODEL", "PRODUCT", "REV"];

fn value_pool() -> Vec<Value> {
    vec![json!("A"), json!("B"), json!("C 2"), json!(4), json!(true), json!(1.5)]
}

fn random_fixture(rng: &mut ChaCha8Rng) -> Value {
    let values = value_pool();
    let mut services = Map::new();
    for service in ["com.Nvidia.FruManager", "xyz.openbmc_project.FruDevice", "org.unrecognized"] {
        if !rng.random_bool(0.75) {
            continue;
        }
        let mut objects = Map::new();
        for path in PATHS {
            if !rng.random_bool(0.55) {
                continue;
            }
            let mut interfaces = Map::new();
            for interface in INTERFACES {
                if !rng.random_bool(0.65) {
                    continue;
                }
                let mut properties = Map::new();
                for property in PROPERTIES {
                    if rng.random_bool(0.7) {
                        properties.insert(property.to_owned(), values.choose(rng).unwrap().clone());
                    }
                }
                interfaces.insert(interface.to_owned(), Value::Object(properties));
            }
            if !interfaces.is_empty() {
                objects.insert(path.to_owned(), Value::Object(interfaces));
            }
        }
        services.insert(service.to_owned(), Value::Object(objects));
    }
    json!({ "services": services })
}

fn random_check(rng: &mut ChaCha8Rng) -> Value {
    let values = value_pool();
    let objects: Vec<String> = if rng.random_bool(0.5) {
        Vec::new()
    } else {
        let mut pool: Vec<&str> = PATHS.to_vec();
        pool.push("/fru/ghost");
        let count = rng.random_range(1..=2);
        (0..count).map(|_| pool.choose(rng).unwrap().to_string()).collect()
    };
    json!({
        "rule": if rng.random_bool(0.5) { "MatchAll" } else { "MatchOne" },
        "objects": objects,
        "interface": INTERFACES.choose(rng).unwrap(),
        "property": PROPERTIES.choose(rng).unwrap(),
        "value": values.choose(rng).unwrap().clone(),
    })
}

fn random_config(rng: &mut ChaCha8Rng, index: usize) -> Value {
    let check_count = rng.random_range(0..=3);
    let checks: Vec<Value> = (0..check_count).map(|_| random_check(rng)).collect();
    let variables: Vec<String> = (0..rng.random_range(0..=3))
        .map(|j| format!("SETTING_{index}_{j}=/usr/share/platform-{index}/part-{j}.json"))
        .collect();
    let mut config = json!({
        "Name": format!("Platform {index}"),
        "Checks": checks,
        "Actions": [{ "variables": variables }],
    });
    if rng.random_bool(0.4) {
        config.as_object_mut().unwrap().insert(
            "rule".to_owned(),
            json!(if rng.random_bool(0.5) { "MatchOne" } else { "MatchAll" }),
        );
    }
    config
}

/// Generates a random configuration directory plus fixture. Filenames get a
/// random letter prefix so directory order and creation order disagree.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let config_count = rng.random_range(0..=4);
    let mut config_files: Vec<(String, Value)> = (0..config_count)
        .map(|i| {
            let letter = char::from(b'a' + rng.random_range(0..26u8));
            (format!("plat_config_{letter}{i}.json"), random_config(rng, i))
        })
        .collect();
    if rng.random_bool(0.5) {
        config_files.push((
            DEFAULT_FILENAME.to_owned(),
            json!({
                "Name": "Default Platform",
                "Checks": [],
                "Actions": [{ "variables": ["TIER=default"] }],
            }),
        ));
    }
    config_files.shuffle(rng);
    Scenario { config_files, fixture: random_fixture(rng) }
}

/// What the oracle thinks the run should select.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSelection {
    Matched(String),
    Fallback(String),
    NoMatch,
}

impl OracleSelection {
    pub fn name(&self) -> Option<&str> {
        match self {
            OracleSelection::Matched(name) | OracleSelection::Fallback(name) => Some(name),
            OracleSelection::NoMatch => None,
        }
    }
}

/// Canonical form of a configured expected value: any JSON scalar.
fn canonical_expected(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Canonical form of an observed value: strings, integers, and booleans
/// only. Anything else never matches.
fn canonical_observed(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(i.to_string())
            } else {
                n.as_u64().map(|u| u.to_string())
            }
        }
        _ => None,
    }
}

fn fixture_lookup<'a>(
    fixture: &'a Value,
    service: &str,
    path: &str,
    interface: &str,
) -> Option<&'a Map<String, Value>> {
    fixture.get("services")?.get(service)?.get(path)?.get(interface)?.as_object()
}

fn oracle_check_passes(check: &Value, fixture: &Value) -> bool {
    let rule = check["rule"].as_str().unwrap();
    let objects: Vec<&str> =
        check["objects"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let interface = check["interface"].as_str().unwrap();
    let property = check["property"].as_str().unwrap();
    let expected = canonical_expected(&check["value"]);

    let mut observations: Vec<Option<String>> = Vec::new();
    if objects.is_empty() {
        // Discovery: every object under a recognized service that implements
        // the interface.
        for service in RECOGNIZED {
            let Some(service_objects) =
                fixture.get("services").and_then(|s| s.get(service)).and_then(|v| v.as_object())
            else {
                continue;
            };
            for (path, _) in service_objects {
                if let Some(properties) = fixture_lookup(fixture, service, path, interface) {
                    observations.push(properties.get(property).and_then(canonical_observed));
                }
            }
        }
    } else {
        for path in objects {
            let owners: Vec<&str> = RECOGNIZED
                .into_iter()
                .filter(|service| fixture_lookup(fixture, service, path, interface).is_some())
                .collect();
            if owners.is_empty() {
                // Nobody recognized owns the path: each recognized service is
                // still asked and answers "no such object".
                observations.extend(RECOGNIZED.iter().map(|_| None));
            } else {
                for service in owners {
                    let properties = fixture_lookup(fixture, service, path, interface).unwrap();
                    observations.push(properties.get(property).and_then(canonical_observed));
                }
            }
        }
    }

    let matched: Vec<bool> = observations.iter().map(|o| o.is_some() && *o == expected).collect();
    match rule {
        "MatchAll" => !matched.is_empty() && matched.iter().all(|&m| m),
        "MatchOne" => matched.iter().any(|&m| m),
        other => panic!("oracle: unknown check rule {other}"),
    }
}

fn oracle_config_passes(config: &Value, fixture: &Value) -> bool {
    let rule = config.get("rule").and_then(|v| v.as_str()).unwrap_or("MatchAll");
    let checks = config["Checks"].as_array().unwrap();
    if checks.is_empty() {
        return true;
    }
    let results: Vec<bool> = checks.iter().map(|c| oracle_check_passes(c, fixture)).collect();
    match rule {
        "MatchAll" => results.iter().all(|&r| r),
        "MatchOne" => results.iter().any(|&r| r),
        other => panic!("oracle: unknown config rule {other}"),
    }
}

/// Independent first-match selection: candidates in byte-wise filename
/// order, skipping the reserved default file, which applies only when
/// nothing matches.
pub fn oracle_select(scenario: &Scenario) -> OracleSelection {
    let mut files: Vec<&(String, Value)> = scenario.config_files.iter().collect();
    files.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let mut default_name: Option<String> = None;
    for (filename, config) in files {
        let name = config["Name"].as_str().unwrap().to_owned();
        if filename == DEFAULT_FILENAME {
            default_name = Some(name);
            continue;
        }
        if oracle_config_passes(config, &scenario.fixture) {
            return OracleSelection::Matched(name);
        }
    }
    match default_name {
        Some(name) => OracleSelection::Fallback(name),
        None => OracleSelection::NoMatch,
    }
}

/// Independent rendering of the environment file a selected config produces.
pub fn oracle_render(scenario: &Scenario, selected: &str) -> String {
    let config = scenario
        .config_files
        .iter()
        .map(|(_, c)| c)
        .find(|c| c["Name"].as_str() == Some(selected))
        .expect("selected config exists");
    let mut out = format!("NAME={selected}\n");
    for group in config["Actions"].as_array().unwrap() {
        for variable in group["variables"].as_array().unwrap() {
            out.push_str(variable.as_str().unwrap());
            out.push('\n');
        }
    }
    out
}
