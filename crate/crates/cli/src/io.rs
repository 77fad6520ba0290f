use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Failure classes, mapped to exit codes by `main`.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input; exit 1.
    Input(String),
    /// A mathematical check failed; exit 2.
    Predicate { clause: String, detail: String },
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(msg) => write!(f, "input error: {msg}"),
            Failure::Predicate { clause, detail } => write!(f, "check failed [{clause}]: {detail}"),
        }
    }
}

impl From<dsk_core::Error> for Failure {
    fn from(e: dsk_core::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file read for a run, remembered for the manifest.
#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Default)]
pub struct Inputs {
    pub records: Vec<InputRecord>,
}

impl Inputs {
    pub fn read<T: DeserializeOwned>(&mut self, path: &Path) -> Outcome<T> {
        let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let value = serde_json::from_slice(&bytes).map_err(|e| {
            Failure::Input(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        self.records.push(InputRecord {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(value)
    }

    /// A set file, or any result object carrying the set under `subset`.
    pub fn read_set(&mut self, path: &Path) -> Outcome<dsk_core::GridSet> {
        let mut value: Value = self.read(path)?;
        if let Some(sub) = value.get_mut("subset") {
            value = sub.take();
        }
        serde_json::from_value(value).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }
}

pub fn to_pretty<T: Serialize>(value: &T) -> Outcome<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn versions() -> Value {
    json!({
        "dsk-cli": env!("CARGO_PKG_VERSION"),
        "dsk-core": dsk_core::VERSION,
    })
}

/// Writes `text` to `output` (or stdout) and, for files, a manifest beside it.
pub fn emit(output: Option<&Path>, text: &str, config: &Value, inputs: &Inputs, extra: Value) -> Outcome<()> {
    let Some(path) = output else {
        print!("{text}");
        return Ok(());
    };
    write_file(path, text.as_bytes())?;
    let manifest = json!({
        "tool": "dsk",
        "versions": versions(),
        "config": config,
        "inputs": inputs.records,
        "output": {"path": path, "sha256": sha256_hex(text.as_bytes())},
        "extra": extra,
    });
    write_file(&manifest_path(path), to_pretty(&manifest)?.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}
