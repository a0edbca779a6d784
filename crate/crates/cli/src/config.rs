use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use modfuse::model::{load_parameters, reference_parameters, REFERENCE_SOURCES};
use modfuse::pipeline::PipelineConfig;
use modfuse::synthetic::{default_start, reference_missingness};
use modfuse::{Error, GeneratorConfig, Missingness};
use serde::{Deserialize, Serialize};

fn default_districts() -> usize {
    1000
}

fn default_weeks() -> usize {
    42
}

/// `simulation` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_districts")]
    pub n_districts: usize,
    #[serde(default = "default_weeks")]
    pub n_weeks: usize,
    /// First day of week 0; must be a week start under `pipeline.window.week_start`.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default)]
    pub seed: u64,
    /// Parameter file to sample from; the reference parameters when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<PathBuf>,
    /// One schedule per source; reference coverage rates when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missingness: Option<Vec<Missingness>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_districts: default_districts(),
            n_weeks: default_weeks(),
            start: default_start(),
            seed: 0,
            parameters: None,
            missingness: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

fn prefixed(e: modfuse::Error, prefix: &str) -> modfuse::Error {
    match e {
        Error::Config { key, message } => Error::config(format!("{prefix}.{key}"), message),
        other => other,
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config("<root>", e.to_string()))
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.pipeline
            .validate()
            .map_err(|e| prefixed(e, "pipeline"))
            .with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    /// Generator settings, with `seed` overriding the configured seed.
    pub fn generator(&self, seed: Option<u64>, base_dir: &Path) -> Result<GeneratorConfig> {
        let sim = &self.simulation;
        let (parameters, sources) = match &sim.parameters {
            Some(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                load_parameters(&path).map_err(|e| prefixed(e, "simulation.parameters"))?
            }
            None => (reference_parameters(), REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect()),
        };
        let missingness = match &sim.missingness {
            Some(m) => m.clone(),
            None if parameters.n_channels() == REFERENCE_SOURCES.len() => reference_missingness(),
            None => {
                return Err(Error::config(
                    "simulation.missingness",
                    format!("required when the parameters have {} channels", parameters.n_channels()),
                )
                .into())
            }
        };
        let week_start = self.pipeline.window.week_start;
        if week_start.week_of(sim.start) != sim.start {
            return Err(Error::config("simulation.start", format!("{} is not the first day of a {week_start:?} week", sim.start)).into());
        }
        let cfg = GeneratorConfig {
            parameters,
            sources,
            n_districts: sim.n_districts,
            n_weeks: sim.n_weeks,
            start: sim.start,
            missingness,
            seed: seed.unwrap_or(sim.seed),
        };
        cfg.validate().map_err(|e| prefixed(e, "simulation"))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"simulation": {"n_district": 5}}"#).unwrap();
        let err = format!("{:#}", RunConfig::load(Some(&path)).unwrap_err());
        assert!(err.contains("n_district"), "{err}");
    }

    #[test]
    fn zero_districts_is_rejected() {
        let cfg = RunConfig {
            simulation: SimulationConfig { n_districts: 0, ..Default::default() },
            ..Default::default()
        };
        let err = cfg.generator(None, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("simulation.n_districts"), "{err}");
    }

    #[test]
    fn start_must_begin_a_week() {
        let cfg = RunConfig {
            simulation: SimulationConfig {
                start: NaiveDate::from_ymd_opt(2020, 9, 1).unwrap(),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(cfg.generator(None, Path::new(".")).unwrap_err().to_string().contains("simulation.start"));
    }

    #[test]
    fn seed_flag_overrides_config() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.generator(Some(9), Path::new(".")).unwrap().seed, 9);
        assert_eq!(cfg.generator(None, Path::new(".")).unwrap().seed, 0);
    }
}
