//! The property provider abstraction.
//!
//! Matching logic never talks to a transport directly; it goes through
//! [`PropertyProvider`]. The live implementation queries the system message
//! bus ([`crate::bus::BusProvider`]) and the test implementation answers from
//! an in-memory document ([`crate::fixture::FixtureProvider`]). Keeping the
//! trait surface to the two calls the matcher needs makes the two backends
//! interchangeable and lets tests count exactly how often each is hit.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use thiserror::Error;

/// A property value as observed over the bus or from a fixture.
///
/// Identity properties are scalars in practice. Anything non-scalar is kept
/// as [`PropertyValue::Unsupported`] with a type tag so diagnostics can show
/// what was there; an unsupported value never matches an expected value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyValue {
    Str(String),
    Int(i128),
    Bool(bool),
    Unsupported(String),
}

impl PropertyValue {
    /// Canonical string form used for comparison: strings verbatim, integers
    /// in base 10, booleans as `true`/`false`. Unsupported values have no
    /// canonical form and therefore compare unequal to everything.
    pub fn canonical_string(&self) -> Option<String> {
        match self {
            PropertyValue::Str(s) => Some(s.clone()),
            PropertyValue::Int(i) => Some(i.to_string()),
            PropertyValue::Bool(b) => Some(b.to_string()),
            PropertyValue::Unsupported(_) => None,
        }
    }

    /// Rendering for logs and reports; total, unlike `canonical_string`.
    pub fn display_string(&self) -> String {
        match self {
            PropertyValue::Unsupported(tag) => format!("<unsupported:{tag}>"),
            supported => supported.canonical_string().expect("supported value"),
        }
    }

    /// Whether this observed value matches a configured expected value.
    pub fn matches_expected(&self, expected: &str) -> bool {
        self.canonical_string().as_deref() == Some(expected)
    }
}

impl<'de> Deserialize<'de> for PropertyValue {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        Ok(PropertyValue::from_json(&value))
    }
}

impl PropertyValue {
    /// Total mapping from a JSON value, mirroring how bus values map: strings
    /// and booleans pass through, integral numbers become integers, anything
    /// else is unsupported.
    pub fn from_json(value: &serde_json::Value) -> Self {
        match value {
            serde_json::Value::String(s) => PropertyValue::Str(s.clone()),
            serde_json::Value::Bool(b) => PropertyValue::Bool(*b),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    PropertyValue::Int(i128::from(i))
                } else if let Some(u) = n.as_u64() {
                    PropertyValue::Int(i128::from(u))
                } else {
                    PropertyValue::Unsupported("double".to_owned())
                }
            }
            serde_json::Value::Null => PropertyValue::Unsupported("null".to_owned()),
            serde_json::Value::Array(_) => PropertyValue::Unsupported("array".to_owned()),
            serde_json::Value::Object(_) => PropertyValue::Unsupported("dict".to_owned()),
        }
    }
}

/// One service owning an object path, with the interfaces it implements
/// there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTreeOwner {
    pub service: String,
    pub interfaces: Vec<String>,
}

/// One object path from a subtree query, with its owners.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTreeEntry {
    pub object_path: String,
    pub owners: Vec<SubTreeOwner>,
}

/// Failures a provider can report.
///
/// Only `Transport` is fatal to a run; the other two describe an individual
/// observation and are absorbed by the matcher as "did not match".
#[derive(Debug, Error)]
pub enum ProviderError {
    /// The service does not expose the object path (or does not exist).
    #[error("no such object: {0}")]
    NoSuchObject(String),
    /// The object exists but lacks the interface or property.
    #[error("no such property: {0}")]
    NoSuchProperty(String),
    /// The transport itself failed; results would be unreliable.
    #[error("bus transport failure: {0}")]
    Transport(String),
}

/// Read access to hardware identity properties.
///
/// Implementations do not need interior thread safety, but must be movable
/// to another thread, hence the `Send` bound.
pub trait PropertyProvider: Send {
    /// All object paths implementing `interface`, with their owners. An
    /// interface nobody implements yields an empty list, not an error.
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError>;

    /// Reads one property. `Ok` values may still fail to match; `Err` with
    /// [`ProviderError::NoSuchObject`] or [`ProviderError::NoSuchProperty`]
    /// means the target is absent.
    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError>;
}

impl<P> PropertyProvider for &P
where
    P: PropertyProvider + Sync + ?Sized,
{
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        (**self).get_subtree(interface)
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        (**self).get_property(service, object_path, interface, property)
    }
}

impl PropertyProvider for Box<dyn PropertyProvider> {
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        (**self).get_subtree(interface)
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        (**self).get_property(service, object_path, interface, property)
    }
}

/// Memoizes subtree queries per interface for the lifetime of one run.
///
/// A run issues the same discovery query once per check that names the
/// interface; topology does not change mid-run, so later queries are served
/// from the cache. Only successful results are cached: a transport error is
/// returned as-is and retried if the caller asks again.
pub struct SubtreeCache<P> {
    inner: P,
    cache: RefCell<HashMap<String, Vec<SubTreeEntry>>>,
}

impl<P: PropertyProvider> SubtreeCache<P> {
    pub fn new(inner: P) -> Self {
        SubtreeCache { inner, cache: RefCell::new(HashMap::new()) }
    }
}

impl<P: PropertyProvider> PropertyProvider for SubtreeCache<P> {
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        if let Some(entries) = self.cache.borrow().get(interface) {
            return Ok(entries.clone());
        }
        let entries = self.inner.get_subtree(interface)?;
        self.cache.borrow_mut().insert(interface.to_owned(), entries.clone());
        Ok(entries)
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        self.inner.get_property(service, object_path, interface, property)
    }
}

/// Wraps a provider and counts calls; used by tests to prove code paths
/// issue no queries (the skip-checks fast path) or exactly as many as
/// short-circuiting allows.
pub struct CountingProvider<P> {
    inner: P,
    subtree_calls: AtomicU64,
    property_calls: AtomicU64,
}

impl<P: PropertyProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            subtree_calls: AtomicU64::new(0),
            property_calls: AtomicU64::new(0),
        }
    }

    pub fn subtree_calls(&self) -> u64 {
        self.subtree_calls.load(Ordering::Relaxed)
    }

    pub fn property_calls(&self) -> u64 {
        self.property_calls.load(Ordering::Relaxed)
    }

    pub fn total_calls(&self) -> u64 {
        self.subtree_calls() + self.property_calls()
    }
}

impl<P: PropertyProvider> PropertyProvider for CountingProvider<P> {
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        self.subtree_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.get_subtree(interface)
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        self.property_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.get_property(service, object_path, interface, property)
    }
}
