//! Boot-time platform configuration manager.
//!
//! The library matches declarative platform configuration files against
//! hardware identity properties exposed on the message bus, picks the first
//! configuration that matches, and renders its action variables into an
//! environment file that other services consume via `EnvironmentFile=`.

pub mod bus;
pub mod cli;
pub mod config;
pub mod envfile;
pub mod fixture;
pub mod matcher;
pub mod provider;
pub mod report;

pub use config::{
    Check, ConfigDirectory, ConfigError, EnvAssignment, MatchRule, PlatformConfig,
    DEFAULT_CONFIG_FILENAME,
};
pub use envfile::{read_env_name, render_env_file, write_env_file, EnvFileError, ENV_FILE_MODE};
pub use fixture::{FixtureDocument, FixtureProvider};
pub use matcher::{
    select_platform, MatchKind, MatchOutcome, Observation, ObservedValue, RecognizedFruServices,
};
pub use provider::{PropertyProvider, PropertyValue, ProviderError, SubTreeEntry};
