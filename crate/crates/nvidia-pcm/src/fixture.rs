//! Fixture-backed property provider.
//!
//! A fixture file is a JSON snapshot of the identity surface of one machine:
//! services, their object paths, the interfaces on each path, and the
//! property values behind them. The `--fixture` flag and the `simulate`
//! subcommand answer every query from such a snapshot instead of the live
//! bus, which makes runs reproducible and testable off-target.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::config::ConfigError;
use crate::provider::{PropertyProvider, PropertyValue, ProviderError, SubTreeEntry, SubTreeOwner};

type PropertyMap = BTreeMap<String, PropertyValue>;
type InterfaceMap = BTreeMap<String, PropertyMap>;
type ObjectMap = BTreeMap<String, InterfaceMap>;

/// The parsed form of a fixture file.
///
/// ```json
/// {
///   "services": {
///     "xyz.openbmc_project.FruDevice": {
///       "/xyz/openbmc_project/FruDevice/Baseboard": {
///         "xyz.openbmc_project.FruDevice": {
///           "PRODUCT_PRODUCT_NAME": "Example Product Name"
///         }
///       }
///     }
///   }
/// }
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDocument {
    pub services: BTreeMap<String, ObjectMap>,
}

impl FixtureDocument {
    fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let schema_err = |detail: String| ConfigError::Schema { path: path.to_owned(), detail };
        for (service, objects) in &self.services {
            if service.is_empty() {
                return Err(schema_err("service names must not be empty".to_owned()));
            }
            for (object_path, interfaces) in objects {
                if object_path.is_empty() {
                    return Err(schema_err(format!("{service}: object paths must not be empty")));
                }
                for (interface, properties) in interfaces {
                    if interface.is_empty() {
                        return Err(schema_err(format!(
                            "{service} {object_path}: interface names must not be empty"
                        )));
                    }
                    if properties.keys().any(|p| p.is_empty()) {
                        return Err(schema_err(format!(
                            "{service} {object_path} {interface}: property names must not be empty"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Answers provider queries from a [`FixtureDocument`].
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    document: FixtureDocument,
}

impl FixtureProvider {
    pub fn new(document: FixtureDocument) -> Self {
        FixtureProvider { document }
    }

    /// Loads and validates a fixture file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let document: FixtureDocument =
            serde_json::from_str(&text).map_err(|err| match err.classify() {
                serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
                    ConfigError::Parse { path: path.to_owned(), detail: err.to_string() }
                }
                _ => ConfigError::Schema { path: path.to_owned(), detail: err.to_string() },
            })?;
        document.validate(path)?;
        Ok(FixtureProvider { document })
    }

    pub fn document(&self) -> &FixtureDocument {
        &self.document
    }
}

impl PropertyProvider for FixtureProvider {
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        let mut by_path: BTreeMap<&str, Vec<SubTreeOwner>> = BTreeMap::new();
        for (service, objects) in &self.document.services {
            for (object_path, interfaces) in objects {
                if interfaces.contains_key(interface) {
                    by_path.entry(object_path).or_default().push(SubTreeOwner {
                        service: service.clone(),
                        interfaces: interfaces.keys().cloned().collect(),
                    });
                }
            }
        }
        Ok(by_path
            .into_iter()
            .map(|(object_path, owners)| SubTreeEntry {
                object_path: object_path.to_owned(),
                owners,
            })
            .collect())
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        let objects =
            self.document.services.get(service).ok_or_else(|| {
                ProviderError::NoSuchObject(format!("{service} is not on the bus"))
            })?;
        let interfaces = objects.get(object_path).ok_or_else(|| {
            ProviderError::NoSuchObject(format!("{service} has no object {object_path}"))
        })?;
        let properties = interfaces.get(interface).ok_or_else(|| {
            ProviderError::NoSuchProperty(format!("{object_path} has no interface {interface}"))
        })?;
        let value = properties.get(property).ok_or_else(|| {
            ProviderError::NoSuchProperty(format!(
                "{interface} on {object_path} has no property {property}"
            ))
        })?;
        Ok(value.clone())
    }
}
