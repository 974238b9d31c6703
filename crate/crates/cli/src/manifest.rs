use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use ventmode::PipelineConfig;

use crate::error::CliResult;

/// What was run and with which settings. Embedded in JSON outputs; CSV and
/// model outputs get it as a `<out>.manifest.json` sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub argv: Vec<String>,
    /// Every parsed flag, defaults included.
    pub config: Value,
    /// Resolved feature, forest and smoothing settings, where they apply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
    pub inputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            argv,
            config,
            pipeline: None,
            inputs: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    output: String,
    started_unix: f64,
    finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Timestamps live only here, so the main outputs stay byte-identical
/// across reruns.
pub fn write_sidecar(manifest: &RunManifest, out: &Path, started_unix: f64) -> CliResult<()> {
    let sidecar = Sidecar {
        manifest,
        output: out.display().to_string(),
        started_unix,
        finished_unix: unix_now(),
    };
    write_json(&sidecar_path(out), &sidecar)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Create a file, making parent directories as needed.
pub fn create(path: &Path) -> CliResult<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path).map_err(|e| crate::error::CliError::from(e).context(path.display()))
}
