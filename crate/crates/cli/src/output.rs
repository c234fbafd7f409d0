//! Error classes, exit codes and atomic file output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Divergence,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Io => 3,
            ErrorClass::Divergence => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Io => "io",
            ErrorClass::Divergence => "divergence",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Usage,
            message: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Io,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    /// Single line: `error[class]: message`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.class.label(), flat.trim())
    }
}

impl From<pnp_core::Error> for CliError {
    fn from(e: pnp_core::Error) -> Self {
        use pnp_core::Error as E;
        let class = match &e {
            E::Io(_) | E::Format { .. } => ErrorClass::Io,
            E::Diverged(_) | E::Numerical(_) => ErrorClass::Divergence,
            E::Dimension(_) | E::InvalidArgument(_) | E::IncompatibleModel(_) => ErrorClass::Usage,
        };
        Self {
            class,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_line_and_codes() {
        let e = CliError::usage("missing\nflag");
        assert_eq!(e.to_string(), "error[usage]: missing flag");
        assert_eq!(e.class.exit_code(), 2);
        let d: CliError = pnp_core::Error::Diverged("boom".into()).into();
        assert_eq!(d.class.exit_code(), 4);
        let io: CliError = pnp_core::Error::Io(std::io::Error::other("x")).into();
        assert_eq!(io.class.exit_code(), 3);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/x"), b"").is_err());
    }
}
