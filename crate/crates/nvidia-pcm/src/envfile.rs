//! Rendering and atomically publishing the environment file.
//!
//! The file is plain `KEY=VALUE` lines, one per line, LF-terminated, with
//! `NAME=<platform>` always first. Consumers read it with systemd's
//! `EnvironmentFile=`, which may race with us at boot, so the file is staged
//! next to its destination and moved into place with `rename(2)`: readers
//! see either the previous complete file or the new complete file, never a
//! partial write.

use std::fs::{self, File, Permissions};
use std::io::{self, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;
use thiserror::Error;

use crate::config::ActionGroup;

/// Where the environment file lives unless overridden with `--env-file`.
pub const DEFAULT_ENV_FILE: &str = "/etc/default/nvidia-pcm";

/// Environment file permissions: owner and group may rewrite it, everyone
/// may read it.
pub const ENV_FILE_MODE: u32 = 0o664;

/// An environment file operation that failed.
#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct EnvFileError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

impl EnvFileError {
    fn new(path: &Path, source: io::Error) -> Self {
        EnvFileError { path: path.to_owned(), source }
    }
}

/// Renders the file contents for a selected platform: the `NAME=` line, then
/// every action variable in declaration order.
pub fn render_env_file(name: &str, actions: &[ActionGroup]) -> String {
    let mut out = String::new();
    out.push_str("NAME=");
    out.push_str(name);
    out.push('\n');
    for group in actions {
        for variable in &group.variables {
            out.push_str(&variable.to_string());
            out.push('\n');
        }
    }
    out
}

/// A fully written temporary file, one `rename(2)` away from `target`.
#[derive(Debug)]
pub struct StagedEnvFile {
    temp: NamedTempFile,
    target: PathBuf,
}

impl StagedEnvFile {
    /// The staging path, next to the target.
    pub fn path(&self) -> &Path {
        self.temp.path()
    }

    /// Atomically moves the staged file over the target and flushes the
    /// rename itself, so a power cut after commit cannot resurrect the old
    /// file.
    pub fn commit(self) -> Result<(), EnvFileError> {
        let target = self.target;
        self.temp.persist(&target).map_err(|err| EnvFileError::new(&target, err.error))?;
        let parent = parent_dir(&target);
        let dir = File::open(parent).map_err(|err| EnvFileError::new(parent, err))?;
        dir.sync_all().map_err(|err| EnvFileError::new(parent, err))?;
        Ok(())
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    }
}

/// Renders and stages the environment file in the target's directory with
/// its final permissions and contents, durably flushed, without touching the
/// target itself.
pub fn stage_env_file(
    name: &str,
    actions: &[ActionGroup],
    target: &Path,
) -> Result<StagedEnvFile, EnvFileError> {
    let contents = render_env_file(name, actions);
    let parent = parent_dir(target);
    // Staging must happen on the same filesystem as the target or the final
    // rename would degrade into a copy.
    let mut temp = NamedTempFile::new_in(parent).map_err(|err| EnvFileError::new(parent, err))?;
    let fail = |err| EnvFileError::new(target, err);
    temp.write_all(contents.as_bytes()).map_err(fail)?;
    temp.as_file().set_permissions(Permissions::from_mode(ENV_FILE_MODE)).map_err(fail)?;
    temp.as_file().sync_all().map_err(fail)?;
    Ok(StagedEnvFile { temp, target: target.to_owned() })
}

/// Renders, stages, and publishes the environment file in one step.
pub fn write_env_file(
    name: &str,
    actions: &[ActionGroup],
    target: &Path,
) -> Result<(), EnvFileError> {
    stage_env_file(name, actions, target)?.commit()
}

/// Reads the platform name from an existing environment file.
///
/// Returns `Ok(None)` when the file does not exist or has no `NAME=` line;
/// any other read failure is an error so callers can tell "no previous
/// detection" apart from "previous detection exists but is unreadable".
pub fn read_env_name(path: &Path) -> Result<Option<String>, EnvFileError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) if err.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(err) => return Err(EnvFileError::new(path, err)),
    };
    Ok(text.lines().find_map(|line| line.strip_prefix("NAME=")).map(str::to_owned))
}
