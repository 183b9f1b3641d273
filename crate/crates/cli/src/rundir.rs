//! Layout of a run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reflective_core::engine::RunMode;
use reflective_core::TaskSpec;
use serde::{Deserialize, Serialize};

use crate::settings::{BackendChoice, DataRef, Settings};

pub const MANIFEST: &str = "run.json";
pub const CONFIG: &str = "config.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const CALL_LOG: &str = "calls.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// What a run was started with, enough to resume it from the directory alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed_prompt: String,
    pub mode: RunMode,
    pub task: TaskSpec,
    pub fitness_data: DataRef,
    pub holdout_data: Option<DataRef>,
    pub backend: BackendChoice,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates the directory with its manifest and config copy in one rename,
    /// so a half-written run directory never appears under `path`.
    pub fn create(path: &Path, force: bool, manifest: &Manifest, settings: &Settings) -> Result<Self> {
        if path.exists() {
            if !force {
                bail!("{} already exists; pass --force to replace it", path.display());
            }
            std::fs::remove_dir_all(path).with_context(|| format!("cannot remove {}", path.display()))?;
        }
        let name = path
            .file_name()
            .with_context(|| format!("{} has no directory name", path.display()))?
            .to_string_lossy();
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging)?;
        }
        std::fs::create_dir(&staging).with_context(|| format!("cannot create {}", staging.display()))?;
        let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        std::fs::write(staging.join(MANIFEST), manifest_json)?;
        std::fs::write(staging.join(CONFIG), settings.to_json())?;
        std::fs::rename(&staging, path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.join(MANIFEST).is_file() {
            bail!("{} is not a run directory (no {MANIFEST})", path.display());
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.file(MANIFEST);
        let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is malformed", p.display()))
    }

    pub fn settings(&self) -> Result<Settings> {
        Settings::load(&self.file(CONFIG))
    }

    pub fn write_settings(&self, settings: &Settings) -> Result<()> {
        std::fs::write(self.file(CONFIG), settings.to_json()).context("cannot update config copy")
    }
}
