//! Live-bus equivalence: a throwaway bus daemon hosts mock mapper and FRU
//! services mirroring a fixture document, and the bus-backed provider must
//! behave exactly like the fixture-backed one, observation for observation.
//!
//! The suite skips itself when no `dbus-daemon` binary is available.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use nvidia_pcm::bus::BusProvider;
use nvidia_pcm::config::load_directory;
use nvidia_pcm::fixture::{FixtureDocument, FixtureProvider};
use nvidia_pcm::matcher::{select_platform, RecognizedFruServices};
use nvidia_pcm::provider::{PropertyProvider, PropertyValue, ProviderError};
use serde_json::json;

const FRU_INTERFACE: &str = "xyz.openbmc_project.FruDevice";
const BASEBOARD: &str = "/xyz/openbmc_project/FruDevice/Baseboard";
const PSU: &str = "/xyz/openbmc_project/FruDevice/Psu0";

type SubTree = BTreeMap<String, BTreeMap<String, Vec<String>>>;

#[derive(Debug, zbus::DBusError)]
#[zbus(prefix = "xyz.openbmc_project.Common.Error")]
enum MapperError {
    ResourceNotFound(String),
}

/// Mapper mock: answers `GetSubTree` from a fixed table, filtered to the
/// requested interfaces, and reports an empty result the way the real
/// mapper does.
struct MockMapper {
    tree: SubTree,
}

#[zbus::interface(name = "xyz.openbmc_project.ObjectMapper")]
impl MockMapper {
    fn get_sub_tree(
        &self,
        subtree: String,
        depth: i32,
        interfaces: Vec<String>,
    ) -> Result<SubTree, MapperError> {
        let _ = (subtree, depth);
        let mut out = SubTree::new();
        for (path, owners) in &self.tree {
            let owners: BTreeMap<String, Vec<String>> = owners
                .iter()
                .filter(|(_, implemented)| implemented.iter().any(|i| interfaces.contains(i)))
                .map(|(service, implemented)| (service.clone(), implemented.clone()))
                .collect();
            if !owners.is_empty() {
                out.insert(path.clone(), owners);
            }
        }
        if out.is_empty() {
            return Err(MapperError::ResourceNotFound("no matching objects".into()));
        }
        Ok(out)
    }
}

/// FRU identity mock, one instance per object path.
#[derive(Clone)]
struct FruIdentity {
    product: String,
    slots: u32,
    half_width: bool,
}

#[zbus::interface(name = "xyz.openbmc_project.FruDevice")]
impl FruIdentity {
    #[zbus(property, name = "PRODUCT_PRODUCT_NAME")]
    fn product(&self) -> String {
        self.product.clone()
    }

    #[zbus(property, name = "SLOT_COUNT")]
    fn slots(&self) -> u32 {
        self.slots
    }

    #[zbus(property, name = "HALF_WIDTH")]
    fn half_width(&self) -> bool {
        self.half_width
    }
}

/// A private bus daemon plus one connection serving the mocks. Dropping it
/// kills the daemon.
struct TestBus {
    daemon: Child,
    address: String,
    _server: zbus::blocking::Connection,
}

impl TestBus {
    /// Starts the daemon and the mock services. `None` when no usable
    /// `dbus-daemon` exists on this machine.
    fn start() -> Option<TestBus> {
        let mut daemon = Command::new("dbus-daemon")
            .args(["--session", "--print-address=1", "--nofork"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .ok()?;
        let stdout = daemon.stdout.take().unwrap();
        let mut address = String::new();
        BufReader::new(stdout).read_line(&mut address).ok()?;
        let address = address.trim().to_owned();
        if address.is_empty() {
            let _ = daemon.kill();
            let _ = daemon.wait();
            return None;
        }

        let mut tree = SubTree::new();
        for path in [BASEBOARD, PSU] {
            tree.insert(
                path.to_owned(),
                BTreeMap::from([(FRU_INTERFACE.to_owned(), vec![FRU_INTERFACE.to_owned()])]),
            );
        }
        let server = zbus::blocking::connection::Builder::address(address.as_str())
            .unwrap()
            .name("xyz.openbmc_project.ObjectMapper")
            .unwrap()
            .serve_at("/xyz/openbmc_project/object_mapper", MockMapper { tree })
            .unwrap()
            .serve_at(
                BASEBOARD,
                FruIdentity { product: "Roundtrip Product".into(), slots: 4, half_width: true },
            )
            .unwrap()
            .serve_at(
                PSU,
                FruIdentity { product: "Roundtrip PSU".into(), slots: 1, half_width: false },
            )
            .unwrap()
            .build()
            .unwrap();
        server.request_name(FRU_INTERFACE).unwrap();

        Some(TestBus { daemon, address, _server: server })
    }
}

impl Drop for TestBus {
    fn drop(&mut self) {
        let _ = self.daemon.kill();
        let _ = self.daemon.wait();
    }
}

/// The fixture document describing exactly what the mocks serve.
fn mirror_fixture() -> serde_json::Value {
    json!({
        "services": {
            "xyz.openbmc_project.FruDevice": {
                BASEBOARD: {
                    FRU_INTERFACE: {
                        "PRODUCT_PRODUCT_NAME": "Roundtrip Product",
                        "SLOT_COUNT": 4,
                        "HALF_WIDTH": true
                    }
                },
                PSU: {
                    FRU_INTERFACE: {
                        "PRODUCT_PRODUCT_NAME": "Roundtrip PSU",
                        "SLOT_COUNT": 1,
                        "HALF_WIDTH": false
                    }
                }
            }
        }
    })
}

fn fixture_provider() -> FixtureProvider {
    let document: FixtureDocument = serde_json::from_value(mirror_fixture()).unwrap();
    FixtureProvider::new(document)
}

/// Three configurations: a decoy whose checks exercise every absorption
/// path and fail, the real match, and a default.
fn write_configs(dir: &std::path::Path) {
    let decoy = json!({
        "Name": "Roundtrip Decoy",
        "rule": "MatchOne",
        "Checks": [
            {
                "rule": "MatchOne",
                "objects": [],
                "interface": FRU_INTERFACE,
                "property": "PRODUCT_PRODUCT_NAME",
                "value": "Impostor"
            },
            {
                "rule": "MatchOne",
                "objects": [],
                "interface": FRU_INTERFACE,
                "property": "NOT_THERE",
                "value": "anything"
            },
            {
                "rule": "MatchOne",
                "objects": ["/ghost/path"],
                "interface": FRU_INTERFACE,
                "property": "SLOT_COUNT",
                "value": 9
            },
            {
                "rule": "MatchOne",
                "objects": [BASEBOARD],
                "interface": "ifc.absent",
                "property": "SLOT_COUNT",
                "value": 9
            }
        ],
        "Actions": [ { "variables": ["DECOY=1"] } ]
    });
    let real = json!({
        "Name": "Roundtrip Platform",
        "rule": "MatchAll",
        "Checks": [
            {
                "rule": "MatchOne",
                "objects": [],
                "interface": FRU_INTERFACE,
                "property": "PRODUCT_PRODUCT_NAME",
                "value": "Roundtrip Product"
            },
            {
                "rule": "MatchAll",
                "objects": [BASEBOARD],
                "interface": FRU_INTERFACE,
                "property": "SLOT_COUNT",
                "value": 4
            },
            {
                "rule": "MatchAll",
                "objects": [BASEBOARD],
                "interface": FRU_INTERFACE,
                "property": "HALF_WIDTH",
                "value": true
            }
        ],
        "Actions": [ { "variables": ["FW_DIR=/usr/share/roundtrip"] } ]
    });
    let default = json!({
        "Name": "Roundtrip Default",
        "Checks": [],
        "Actions": [ { "variables": [] } ]
    });
    for (name, config) in [
        ("plat_config_05_decoy.json", &decoy),
        ("plat_config_10_real.json", &real),
        ("plat_config_default.json", &default),
    ] {
        fs::write(dir.join(name), serde_json::to_string_pretty(config).unwrap()).unwrap();
    }
}

#[test]
fn bus_and_fixture_providers_agree() {
    let Some(bus) = TestBus::start() else {
        eprintln!("dbus-daemon unavailable; skipping live-bus equivalence");
        return;
    };
    let live = BusProvider::for_address(&bus.address).unwrap().with_retry_policy(2, Duration::ZERO);
    let fixture = fixture_provider();

    // Discovery agrees, entry for entry.
    assert_eq!(
        live.get_subtree(FRU_INTERFACE).unwrap(),
        fixture.get_subtree(FRU_INTERFACE).unwrap()
    );
    // An interface nobody implements is an empty subtree on both sides; the
    // live mapper signals it with an error that must be absorbed.
    assert_eq!(live.get_subtree("ifc.absent").unwrap(), Vec::new());
    assert_eq!(fixture.get_subtree("ifc.absent").unwrap(), Vec::new());

    // Values of every supported type agree.
    for (path, property, expected) in [
        (BASEBOARD, "PRODUCT_PRODUCT_NAME", PropertyValue::Str("Roundtrip Product".into())),
        (BASEBOARD, "SLOT_COUNT", PropertyValue::Int(4)),
        (BASEBOARD, "HALF_WIDTH", PropertyValue::Bool(true)),
        (PSU, "PRODUCT_PRODUCT_NAME", PropertyValue::Str("Roundtrip PSU".into())),
        (PSU, "HALF_WIDTH", PropertyValue::Bool(false)),
    ] {
        let from_live = live.get_property(FRU_INTERFACE, path, FRU_INTERFACE, property).unwrap();
        let from_fixture =
            fixture.get_property(FRU_INTERFACE, path, FRU_INTERFACE, property).unwrap();
        assert_eq!(from_live, expected, "live {path} {property}");
        assert_eq!(from_fixture, expected, "fixture {path} {property}");
    }

    // Absence classifications agree.
    type AbsenceCase =
        (&'static str, &'static str, &'static str, &'static str, fn(&ProviderError) -> bool);
    let cases: [AbsenceCase; 4] = [
        ("missing property", FRU_INTERFACE, BASEBOARD, "NOT_THERE", |e| {
            matches!(e, ProviderError::NoSuchProperty(_))
        }),
        ("missing interface", FRU_INTERFACE, BASEBOARD, "SLOT_COUNT", |e| {
            matches!(e, ProviderError::NoSuchProperty(_))
        }),
        ("missing object", FRU_INTERFACE, "/ghost/path", "SLOT_COUNT", |e| {
            matches!(e, ProviderError::NoSuchObject(_))
        }),
        ("missing service", "com.Nvidia.FruManager", BASEBOARD, "SLOT_COUNT", |e| {
            matches!(e, ProviderError::NoSuchObject(_))
        }),
    ];
    for (label, service, path, property, classify) in cases {
        let interface = if label == "missing interface" { "ifc.absent" } else { FRU_INTERFACE };
        let live_err = live.get_property(service, path, interface, property).unwrap_err();
        let fixture_err = fixture.get_property(service, path, interface, property).unwrap_err();
        assert!(classify(&live_err), "{label} over the bus: {live_err:?}");
        assert!(classify(&fixture_err), "{label} from the fixture: {fixture_err:?}");
    }

    // Full selection agrees, including every recorded observation.
    let dir = tempfile::tempdir().unwrap();
    let config_dir = dir.path().join("configs");
    fs::create_dir(&config_dir).unwrap();
    write_configs(&config_dir);
    let directory = load_directory(&config_dir, None).unwrap();
    let recognized = RecognizedFruServices::default();
    let live_outcome = select_platform(&directory, &live, &recognized).unwrap();
    let fixture_outcome = select_platform(&directory, &fixture, &recognized).unwrap();
    assert_eq!(live_outcome, fixture_outcome);
    assert_eq!(live_outcome.selected_name(), Some("Roundtrip Platform"));

    // And the binary, pointed at this bus as its system bus, writes the
    // same bytes the fixture run writes.
    let fixture_path = dir.path().join("machine.json");
    fs::write(&fixture_path, serde_json::to_string(&mirror_fixture()).unwrap()).unwrap();
    let env_live = dir.path().join("live.env");
    let env_fixture = dir.path().join("fixture.env");

    let live_run = Command::new(common::pcm_binary())
        .args([
            "--config-dir",
            config_dir.to_str().unwrap(),
            "--env-file",
            env_live.to_str().unwrap(),
        ])
        .env("DBUS_SYSTEM_BUS_ADDRESS", &bus.address)
        .output()
        .unwrap();
    assert_eq!(
        live_run.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&live_run.stderr)
    );

    let fixture_run = common::run_pcm(&[
        "--config-dir",
        config_dir.to_str().unwrap(),
        "--env-file",
        env_fixture.to_str().unwrap(),
        "--fixture",
        fixture_path.to_str().unwrap(),
    ]);
    assert_eq!(common::exit_code(&fixture_run), 0);

    assert_eq!(fs::read(&env_live).unwrap(), fs::read(&env_fixture).unwrap());
    assert_eq!(
        fs::read_to_string(&env_live).unwrap(),
        "NAME=Roundtrip Platform\nFW_DIR=/usr/share/roundtrip\n"
    );
}

#[test]
fn unreachable_bus_address_is_a_transport_error() {
    let err = match BusProvider::for_address("unix:path=/nonexistent/private_bus") {
        Ok(_) => panic!("connecting to a nonexistent socket should fail"),
        Err(err) => err,
    };
    assert!(matches!(err, ProviderError::Transport(_)), "{err:?}");
}
