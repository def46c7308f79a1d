//! One config to drive a whole run: world shape, model size, editor
//! settings, and harness protocol. Files may specify any subset; missing
//! fields take the documented defaults, unknown fields are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::ModelConfig;
use crate::editor::EditorConfig;
use crate::subseed;
use crate::worldgen::{ScopeMix, WorldConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Benchmark protocol knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub n_edit_cases: usize,
    pub scope_mix: ScopeMix,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Grid for radius-mix sweeps.
    pub alpha_grid: Vec<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            n_edit_cases: 50,
            scope_mix: ScopeMix::default(),
            pretrain_epochs: 40,
            pretrain_lr: 2e-3,
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_edit_cases == 0 {
            return Err(ConfigError::Invalid("n_edit_cases must be positive".to_string()));
        }
        if self.pretrain_epochs == 0 {
            return Err(ConfigError::Invalid("pretrain_epochs must be positive".to_string()));
        }
        if !(self.pretrain_lr.is_finite() && self.pretrain_lr > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "pretrain_lr must be positive, got {}",
                self.pretrain_lr
            )));
        }
        if self.alpha_grid.is_empty()
            || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(ConfigError::Invalid(
                "alpha_grid must be a non-empty list of values in [0, 1]".to_string(),
            ));
        }
        Ok(())
    }
}

/// Everything a run needs. `seed` is the only randomness root: applying it
/// re-derives the component seeds, so two configs differing only in `seed`
/// produce fully independent worlds, models, and suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub editor: EditorConfig,
    pub harness: HarnessConfig,
}

const STREAM_WORLD: u64 = 10;
const STREAM_MODEL: u64 = 11;
const STREAM_SUITE: u64 = 12;

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            editor: EditorConfig::default(),
            harness: HarnessConfig::default(),
        };
        cfg.apply_global_seed();
        cfg
    }
}

impl RunConfig {
    /// Re-derives the world and model seeds from the global one. Called on
    /// construction and whenever the global seed is overridden; component
    /// seeds set directly in a config file survive as long as the global
    /// seed is left alone.
    pub fn apply_global_seed(&mut self) {
        self.world.seed = subseed(self.seed, STREAM_WORLD);
        self.model.seed = subseed(self.seed, STREAM_MODEL);
    }

    /// Seed for edit-suite generation, derived the same way.
    pub fn suite_seed(&self) -> u64 {
        subseed(self.seed, STREAM_SUITE)
    }

    pub fn validate(&self) -> Result<()> {
        self.world
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.editor
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.harness.validate()?;
        if self.world.vocab_size != self.model.vocab_size {
            return Err(ConfigError::Invalid(format!(
                "world.vocab_size {} and model.vocab_size {} must match",
                self.world.vocab_size, self.model.vocab_size
            )));
        }
        if self.world.d_img != self.model.d_img {
            return Err(ConfigError::Invalid(format!(
                "world.d_img {} and model.d_img {} must match",
                self.world.d_img, self.model.d_img
            )));
        }
        Ok(())
    }
}

/// Loads a JSON config. Absent fields default; the file may even be `{}`.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    // A file that sets `seed` but not the component seeds expects the
    // derivation; a file that pins component seeds keeps them.
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    let pinned = |section: &str| {
        raw.get(section)
            .and_then(|s| s.get("seed"))
            .is_some()
    };
    let derived_world = subseed(cfg.seed, STREAM_WORLD);
    let derived_model = subseed(cfg.seed, STREAM_MODEL);
    if !pinned("world") {
        cfg.world.seed = derived_world;
    }
    if !pinned("model") {
        cfg.model.seed = derived_model;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        save_config(&cfg, &p).unwrap();
        let loaded = load_config(&p).unwrap();
        assert_eq!(loaded, cfg);
    }

    #[test]
    fn component_seeds_derive_from_the_global_seed() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 1;
        b.apply_global_seed();
        assert_ne!(a.world.seed, b.world.seed);
        assert_ne!(a.model.seed, b.model.seed);
        assert_ne!(a.suite_seed(), b.suite_seed());
        assert_ne!(b.world.seed, b.model.seed);
    }

    #[test]
    fn partial_files_fill_from_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"seed": 7, "editor": {"alpha": 0.4}}"#).unwrap();
        let cfg = load_config(&p).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.editor.alpha, 0.4);
        assert_eq!(cfg.editor.max_iters, EditorConfig::default().max_iters);
        assert_eq!(cfg.world.seed, subseed(7, STREAM_WORLD));

        std::fs::write(&p, "{}").unwrap();
        assert_eq!(load_config(&p).unwrap(), RunConfig::default());
    }

    #[test]
    fn pinned_component_seeds_survive_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"seed": 7, "world": {"seed": 123}}"#).unwrap();
        let cfg = load_config(&p).unwrap();
        assert_eq!(cfg.world.seed, 123);
        assert_eq!(cfg.model.seed, subseed(7, STREAM_MODEL));
    }

    #[test]
    fn unknown_fields_and_mismatched_sections_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"sead": 7}"#).unwrap();
        assert!(matches!(load_config(&p).unwrap_err(), ConfigError::Parse { .. }));

        std::fs::write(&p, r#"{"world": {"d_img": 8}}"#).unwrap();
        let err = load_config(&p).unwrap_err();
        assert!(err.to_string().contains("d_img"), "{err}");
    }

    #[test]
    fn harness_validation_catches_bad_grids() {
        let mut cfg = RunConfig::default();
        cfg.harness.alpha_grid = vec![0.5, 1.5];
        assert!(cfg.validate().is_err());
        cfg.harness.alpha_grid = vec![];
        assert!(cfg.validate().is_err());
    }
}
