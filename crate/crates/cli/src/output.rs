use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use fldp::{Error, ErrorClass};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Numerical => 4,
        ErrorClass::Statistical => 5,
    }
}

/// A failure reported as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: String,
    pub class: &'static str,
    pub exit_code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &str, class: ErrorClass, message: String) -> Self {
        Self {
            error: kind.to_string(),
            class: match class {
                ErrorClass::Config => "config",
                ErrorClass::Validation => "validation",
                ErrorClass::Numerical => "numerical",
                ErrorClass::Statistical => "statistical",
            },
            exit_code: exit_code(class),
            message,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(e.kind(), e.class(), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

/// Identifies a run: the seed plus a digest of its configuration.
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the serialized command configuration and the protocol text.
    pub fn new<C: Serialize>(seed: u64, config: &C, protocol_text: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(config).expect("config serializes"));
        hasher.update(b"\n");
        hasher.update(protocol_text.as_bytes());
        let config_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed, config_hash }
    }

    pub fn comment(&self) -> String {
        format!("# fldp {VERSION} seed={} config={}", self.seed, self.config_hash)
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Opens a CSV file and writes the provenance comment line.
    pub fn csv(&self, name: &str, prov: &Provenance) -> Result<BufWriter<File>, Failure> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "{}", prov.comment())?;
        Ok(w)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), Failure> {
        fs::write(self.path(name), text)?;
        Ok(())
    }
}
