use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use twostream::config::RunConfig;
use twostream::datagen::MANIFEST_VERSION;
use twostream::model::checkpoint;
use twostream::pipeline::RESULTS_VERSION;
use twostream::{Error, Result};

pub const META_FILE: &str = "run_meta.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactVersions {
    pub checkpoint: u32,
    pub manifest: u32,
    pub results: u32,
}

impl ArtifactVersions {
    fn current() -> Self {
        ArtifactVersions {
            checkpoint: checkpoint::VERSION,
            manifest: MANIFEST_VERSION,
            results: RESULTS_VERSION,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunEntry {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
}

/// Metadata accompanying an output directory; each command run there appends an entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub artifact_versions: ArtifactVersions,
    pub runs: Vec<RunEntry>,
}

pub fn read(dir: &Path) -> Result<Option<RunMeta>> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Format { path, msg: e.to_string() })
}

/// Rejects a results file written by an unknown results version.
pub fn check_results_version(dir: &Path) -> Result<()> {
    let meta = read(dir)?.ok_or_else(|| Error::Format {
        path: dir.join(META_FILE),
        msg: "results directory has no run metadata; cannot determine the results version".into(),
    })?;
    if meta.artifact_versions.results != RESULTS_VERSION {
        return Err(Error::Version {
            what: "results",
            found: meta.artifact_versions.results,
            expected: RESULTS_VERSION,
        });
    }
    Ok(())
}

/// Writes `config.txt` and appends this command to `run_meta.json` in `dir`.
pub fn record(dir: &Path, command: &str, seed: u64, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.render()).map_err(|e| Error::Io { path: cfg_path, source: e })?;
    let mut meta = read(dir)?.unwrap_or_else(|| RunMeta {
        tool: env!("CARGO_PKG_NAME").into(),
        artifact_versions: ArtifactVersions::current(),
        runs: Vec::new(),
    });
    meta.artifact_versions = ArtifactVersions::current();
    meta.runs.push(RunEntry {
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        args: std::env::args().skip(1).collect(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
    });
    let path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| Error::Io { path, source: e })
}
