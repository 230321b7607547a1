//! Live message-bus property provider.
//!
//! Discovery goes through the object mapper's `GetSubTree`; property reads
//! go through `org.freedesktop.DBus.Properties.Get` on the owning service.
//! Error replies that mean "the thing you asked about is not there" map to
//! the absence variants of [`ProviderError`]; anything else is a transport
//! failure, retried a few times with a linear backoff because this runs
//! early in boot while bus services are still settling.

use std::collections::BTreeMap;
use std::thread::sleep;
use std::time::Duration;

use zbus::blocking::Connection;
use zbus::zvariant;

use crate::provider::{PropertyProvider, PropertyValue, ProviderError, SubTreeEntry, SubTreeOwner};

pub const OBJECT_MAPPER_SERVICE: &str = "xyz.openbmc_project.ObjectMapper";
pub const OBJECT_MAPPER_PATH: &str = "/xyz/openbmc_project/object_mapper";
pub const OBJECT_MAPPER_INTERFACE: &str = "xyz.openbmc_project.ObjectMapper";
const PROPERTIES_INTERFACE: &str = "org.freedesktop.DBus.Properties";

const DEFAULT_ATTEMPTS: u32 = 3;
const DEFAULT_BACKOFF: Duration = Duration::from_millis(100);

/// How a failed call should be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorClass {
    /// The addressed service or object path does not exist.
    NoObject,
    /// The object exists but the interface or property does not.
    NoProperty,
    /// The mapper has nothing under the queried subtree.
    EmptySubtree,
    /// Anything else; the answer is unreliable.
    Transport,
}

/// Classifies a D-Bus error reply by its error name.
///
/// `UnknownMethod` counts as a missing object because common object servers
/// answer property reads on nonexistent paths that way. `ServiceUnknown` and
/// `NameHasNoOwner` also count: on most machines only one of the recognized
/// identity services exists, and asking the absent one must read as "nothing
/// there", not as a failed run.
fn classify_error_name(name: &str) -> ErrorClass {
    match name {
        "org.freedesktop.DBus.Error.UnknownObject"
        | "org.freedesktop.DBus.Error.UnknownMethod"
        | "org.freedesktop.DBus.Error.ServiceUnknown"
        | "org.freedesktop.DBus.Error.NameHasNoOwner" => ErrorClass::NoObject,
        "org.freedesktop.DBus.Error.UnknownProperty"
        | "org.freedesktop.DBus.Error.UnknownInterface"
        | "org.freedesktop.DBus.Error.InvalidArgs" => ErrorClass::NoProperty,
        "org.freedesktop.DBus.Error.FileNotFound" => ErrorClass::EmptySubtree,
        name if name.ends_with("Common.Error.ResourceNotFound") => ErrorClass::EmptySubtree,
        _ => ErrorClass::Transport,
    }
}

fn classify(err: &zbus::Error) -> ErrorClass {
    match err {
        zbus::Error::MethodError(name, _, _) => classify_error_name(name.as_str()),
        _ => ErrorClass::Transport,
    }
}

/// Runs `call` up to `attempts` times, sleeping `backoff * n` between tries,
/// retrying only transport failures.
fn with_retries<T>(
    attempts: u32,
    backoff: Duration,
    mut call: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 1;
    loop {
        match call() {
            Err(ProviderError::Transport(_)) if attempt < attempts => {
                sleep(backoff * attempt);
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Maps a bus value onto the supported scalar set. Object paths are typed
/// strings and compare as their text; every container or floating-point
/// value is unsupported and can never match.
fn from_dbus_value(value: &zvariant::Value<'_>) -> PropertyValue {
    use zvariant::Value;
    match value {
        Value::Str(s) => PropertyValue::Str(s.to_string()),
        Value::ObjectPath(p) => PropertyValue::Str(p.to_string()),
        Value::Bool(b) => PropertyValue::Bool(*b),
        Value::U8(n) => PropertyValue::Int(i128::from(*n)),
        Value::I16(n) => PropertyValue::Int(i128::from(*n)),
        Value::U16(n) => PropertyValue::Int(i128::from(*n)),
        Value::I32(n) => PropertyValue::Int(i128::from(*n)),
        Value::U32(n) => PropertyValue::Int(i128::from(*n)),
        Value::I64(n) => PropertyValue::Int(i128::from(*n)),
        Value::U64(n) => PropertyValue::Int(i128::from(*n)),
        Value::Value(inner) => from_dbus_value(inner),
        Value::F64(_) => PropertyValue::Unsupported("double".to_owned()),
        Value::Array(_) => PropertyValue::Unsupported("array".to_owned()),
        Value::Dict(_) => PropertyValue::Unsupported("dict".to_owned()),
        Value::Structure(_) => PropertyValue::Unsupported("struct".to_owned()),
        Value::Signature(_) => PropertyValue::Unsupported("signature".to_owned()),
        Value::Fd(_) => PropertyValue::Unsupported("fd".to_owned()),
    }
}

/// `GetSubTree` reply shape: object path, then owning service, then the
/// interfaces that service implements on the path.
type RawSubTree = BTreeMap<String, BTreeMap<String, Vec<String>>>;

/// [`PropertyProvider`] backed by a live bus connection.
pub struct BusProvider {
    conn: Connection,
    attempts: u32,
    backoff: Duration,
}

impl BusProvider {
    /// Connects to the system bus, where the mapper and identity services
    /// live on a real machine.
    pub fn system() -> Result<Self, ProviderError> {
        let conn = Connection::system()
            .map_err(|err| ProviderError::Transport(format!("connecting to system bus: {err}")))?;
        Ok(Self::with_connection(conn))
    }

    /// Connects to a bus at an explicit address, e.g. a private test bus.
    pub fn for_address(address: &str) -> Result<Self, ProviderError> {
        let conn = zbus::blocking::connection::Builder::address(address)
            .and_then(|builder| builder.build())
            .map_err(|err| ProviderError::Transport(format!("connecting to {address}: {err}")))?;
        Ok(Self::with_connection(conn))
    }

    pub fn with_connection(conn: Connection) -> Self {
        BusProvider { conn, attempts: DEFAULT_ATTEMPTS, backoff: DEFAULT_BACKOFF }
    }

    /// Overrides the transport retry policy; tests use a zero backoff.
    pub fn with_retry_policy(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn get_subtree_once(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        let reply = match self.conn.call_method(
            Some(OBJECT_MAPPER_SERVICE),
            OBJECT_MAPPER_PATH,
            Some(OBJECT_MAPPER_INTERFACE),
            "GetSubTree",
            &("/", 0i32, vec![interface]),
        ) {
            Ok(reply) => reply,
            Err(err) => {
                return match classify(&err) {
                    ErrorClass::EmptySubtree => Ok(Vec::new()),
                    _ => Err(ProviderError::Transport(format!("GetSubTree({interface}): {err}"))),
                };
            }
        };
        let raw: RawSubTree = reply.body().deserialize().map_err(|err| {
            ProviderError::Transport(format!("GetSubTree({interface}) reply: {err}"))
        })?;
        let entries = raw
            .into_iter()
            .filter_map(|(object_path, owners)| {
                let owners: Vec<SubTreeOwner> = owners
                    .into_iter()
                    .filter(|(_, interfaces)| interfaces.iter().any(|i| i == interface))
                    .map(|(service, mut interfaces)| {
                        interfaces.sort();
                        SubTreeOwner { service, interfaces }
                    })
                    .collect();
                (!owners.is_empty()).then_some(SubTreeEntry { object_path, owners })
            })
            .collect();
        Ok(entries)
    }

    fn get_property_once(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        let context = || format!("{service} {object_path} {interface}.{property}");
        let reply = match self.conn.call_method(
            Some(service),
            object_path,
            Some(PROPERTIES_INTERFACE),
            "Get",
            &(interface, property),
        ) {
            Ok(reply) => reply,
            Err(err) => {
                return Err(match classify(&err) {
                    ErrorClass::NoObject => ProviderError::NoSuchObject(context()),
                    ErrorClass::NoProperty | ErrorClass::EmptySubtree => {
                        ProviderError::NoSuchProperty(context())
                    }
                    ErrorClass::Transport => {
                        ProviderError::Transport(format!("Get on {}: {err}", context()))
                    }
                });
            }
        };
        let body = reply.body();
        let value: zvariant::Value<'_> = body.deserialize().map_err(|err| {
            ProviderError::Transport(format!("Get reply on {}: {err}", context()))
        })?;
        Ok(from_dbus_value(&value))
    }
}

impl PropertyProvider for BusProvider {
    fn get_subtree(&self, interface: &str) -> Result<Vec<SubTreeEntry>, ProviderError> {
        with_retries(self.attempts, self.backoff, || self.get_subtree_once(interface))
    }

    fn get_property(
        &self,
        service: &str,
        object_path: &str,
        interface: &str,
        property: &str,
    ) -> Result<PropertyValue, ProviderError> {
        with_retries(self.attempts, self.backoff, || {
            self.get_property_once(service, object_path, interface, property)
        })
    }
}
