//! Config file, task file and backend selection.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use reflective_core::data::load_dataset;
use reflective_core::demo;
use reflective_core::eval::EvalSample;
use reflective_core::gateway::{Backend, HttpBackend, HttpBackendConfig, MockBackend};
use reflective_core::operators::OperatorTemplates;
use reflective_core::{EvolutionConfig, TaskSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Run config: every `EvolutionConfig` field at the top level, plus an
/// optional `backend` object and an optional `templates` file path.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Settings {
    #[serde(flatten)]
    pub evolution: EvolutionConfig,
    pub backend: HttpBackendConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).with_context(|| format!("{} is not valid JSON", origin.display()))?;
        let Some(map) = value.as_object_mut() else {
            bail!("{} must hold a JSON object", origin.display());
        };
        let backend = match map.remove("backend") {
            Some(v) => serde_json::from_value(v).with_context(|| format!("{}: bad \"backend\"", origin.display()))?,
            None => HttpBackendConfig::default(),
        };
        let templates = match map.remove("templates") {
            Some(Value::String(p)) => Some(resolve(origin, Path::new(&p))),
            Some(Value::Null) | None => None,
            Some(_) => bail!("{}: \"templates\" must be a path", origin.display()),
        };
        let evolution: EvolutionConfig =
            serde_json::from_value(value).with_context(|| format!("{}: bad config", origin.display()))?;
        evolution.validate()?;
        Ok(Self {
            evolution,
            backend,
            templates,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }

    pub fn templates(&self) -> Result<OperatorTemplates> {
        match &self.templates {
            None => Ok(OperatorTemplates::builtin()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).with_context(|| format!("cannot read templates {}", p.display()))?;
                OperatorTemplates::from_text(&text).with_context(|| format!("bad templates file {}", p.display()))
            }
        }
    }
}

/// `path` relative to the directory holding `origin`.
pub fn resolve(origin: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        origin.parent().unwrap_or(Path::new(".")).join(path)
    }
}

/// Loads a task file; its dataset paths are made relative to the file.
pub fn load_task(path: &Path) -> Result<TaskSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read task {}", path.display()))?;
    let mut task: TaskSpec =
        serde_json::from_str(&text).with_context(|| format!("{} is not a valid task file", path.display()))?;
    task.fitness_path = task.fitness_path.map(|p| absolute(&resolve(path, &p)));
    task.holdout_path = task.holdout_path.map(|p| absolute(&resolve(path, &p)));
    task.validate().with_context(|| format!("invalid task {}", path.display()))?;
    Ok(task)
}

pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Where a run's samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRef {
    /// The demo data compiled into the binary.
    BundledFitness,
    BundledHoldout,
    Path(PathBuf),
}

impl DataRef {
    pub fn load(&self) -> Result<Vec<EvalSample>> {
        match self {
            DataRef::BundledFitness => Ok(demo::fitness_samples()),
            DataRef::BundledHoldout => Ok(demo::holdout_samples()),
            DataRef::Path(p) => load_dataset(p).with_context(|| format!("cannot load dataset {}", p.display())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    /// Scripted mock for the bundled demo task.
    DemoMock,
    /// Rule table read from a JSON file.
    MockRules(PathBuf),
    /// OpenAI-compatible endpoint from the config's `backend` section.
    Http,
}

impl BackendChoice {
    pub fn from_flags(mock: bool, mock_rules: Option<&Path>) -> Result<Self> {
        Ok(match (mock, mock_rules) {
            (true, Some(_)) => bail!("--mock and --mock-rules are mutually exclusive"),
            (true, None) => BackendChoice::DemoMock,
            (false, Some(p)) => BackendChoice::MockRules(absolute(p)),
            (false, None) => BackendChoice::Http,
        })
    }

    pub fn build(&self, settings: &Settings) -> Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendChoice::DemoMock => Arc::new(demo::backend()),
            BackendChoice::MockRules(p) => {
                let text =
                    std::fs::read_to_string(p).with_context(|| format!("cannot read mock rules {}", p.display()))?;
                Arc::new(MockBackend::from_json(&text).with_context(|| format!("bad mock rules {}", p.display()))?)
            }
            BackendChoice::Http => Arc::new(HttpBackend::from_env(settings.backend.clone())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_with_backend_section() {
        let s = Settings::parse(
            r#"{"population_size": 4, "epochs": 2, "backend": {"model": "m"}, "templates": "t.txt"}"#,
            Path::new("/cfg/run.json"),
        )
        .unwrap();
        assert_eq!(s.evolution.population_size, 4);
        assert_eq!(s.backend.model, "m");
        assert_eq!(s.templates, Some(PathBuf::from("/cfg/t.txt")));
        assert_eq!(s.evolution.survival_temperature, 0.1);
    }

    #[test]
    fn config_rejects_typos_and_bad_bounds() {
        assert!(Settings::parse(r#"{"populaton_size": 4}"#, Path::new("c.json")).is_err());
        assert!(Settings::parse(r#"{"population_size": 1}"#, Path::new("c.json")).is_err());
    }

    #[test]
    fn settings_round_trip() {
        let s = Settings::default();
        assert_eq!(Settings::parse(&s.to_json(), Path::new("c.json")).unwrap(), s);
    }
}
