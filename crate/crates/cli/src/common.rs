use std::path::{Path, PathBuf};

use eqtrends::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "EQTRENDS_CACHE_DIR";

/// 2 validation, 3 i/o, 4 numerical.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Unbalanced { .. } | Error::Json(_) => 2,
        Error::Csv(c) if c.is_io_error() => 3,
        Error::Csv(_) => 2,
        Error::Io(_) => 3,
        Error::Rank(_) | Error::Numerical(_) | Error::NonMonotone { .. } => 4,
    }
}

pub fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub fn cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(d);
    }
    if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(d).join("eqtrends");
    }
    if let Some(h) = std::env::var_os("HOME") {
        return PathBuf::from(h).join(".cache").join("eqtrends");
    }
    std::env::temp_dir().join("eqtrends")
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| invalid(format!("bad grid value '{x}'")))).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Seed from the clock when none was given; always reported.
pub fn resolve_seed(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            (eqtrends::exec::derive_seed(nanos, std::process::id() as u64), true)
        }
    }
}

#[derive(Debug, Serialize)]
pub struct WTableInfo {
    pub hash: String,
    pub reps: usize,
    pub seed: u64,
    pub cache_file: String,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub software: String,
    pub command_line: Vec<String>,
    pub seed: u64,
    pub seed_generated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wtable: Option<WTableInfo>,
}

impl Provenance {
    pub fn new(seed: u64, seed_generated: bool) -> Self {
        Provenance {
            software: format!("eqtrends {}", env!("CARGO_PKG_VERSION")),
            command_line: std::env::args().skip(1).collect(),
            seed,
            seed_generated,
            input: None,
            input_sha256: None,
            bootstrap_b: None,
            grid: None,
            wtable: None,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}
