//! Emitted files: every CSV starts with `#` header lines and every JSON
//! document is `{"header": ..., "payload": ...}`. Files are written to a
//! temporary sibling and renamed into place.

use std::path::{Path, PathBuf};

use basisn::format::write_atomic;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "basisn";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            config_sha256: config.hash(),
            seed: config.seed,
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("header serializes")
    }
}

pub struct Output {
    pub dir: PathBuf,
    pub header: Header,
}

impl Output {
    pub fn new(command: &str, config: &ExperimentConfig) -> CliResult<Self> {
        let dir = config.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            header: Header::new(command, config),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes).map_err(CliError::at(&path))?;
        Ok(path)
    }

    /// RFC 4180 CSV preceded by the header as `# key: value` lines.
    pub fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> CliResult<PathBuf> {
        let mut buf = Vec::new();
        let h = &self.header;
        for (k, v) in [
            ("tool", format!("{} {}", h.tool, h.version)),
            ("command", h.command.clone()),
            ("config_sha256", h.config_sha256.clone()),
            ("seed", h.seed.to_string()),
        ] {
            buf.extend_from_slice(format!("# {k}: {v}\r\n").as_bytes());
        }
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    pub fn json<P: Serialize>(&self, name: &str, payload: &P) -> CliResult<PathBuf> {
        let doc = serde_json::json!({ "header": self.header, "payload": payload });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn bytes(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        self.write(name, bytes)
    }
}

/// Reads the payload of a JSON document written by [`Output::json`].
pub fn read_payload(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    doc.get_mut("payload")
        .map(serde_json::Value::take)
        .ok_or_else(|| CliError::Data(format!("{}: no payload", path.display())))
}
