//! Flat `key = value` run configuration shared by every CLI command.
//!
//! Values are layered: built-in defaults, then a config file, then command
//! line flags. Lines starting with `#` and blank lines are ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{NoiseConfig, SharedTemporalMode};
use crate::pipeline::{EditOperator, PipelineConfig, SceneSpec, SyntheticScene};
use crate::schedule::{make_schedule, BetaSchedule, DiffusionSchedule};

/// Every tunable parameter of a run. Field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub views: usize,
    pub windows: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub shared_temporal_mode: SharedTemporalMode,
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_schedule: BetaSchedule,
    pub ddim_steps: usize,
    pub t_edit_fraction: f64,
    pub iterations: usize,
    pub omega_start: f64,
    pub omega_end: f64,
    pub oracle_sigma2: f64,
    pub guidance_scale: f64,
    pub noise_floor: f64,
    pub scene_seed: u64,
    pub edit_channel: usize,
    pub edit_scale: f64,
    pub edit_bias: f64,
    pub psnr_peak: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.65,
            lambda: 0.7,
            views: 4,
            windows: 6,
            frames: 8,
            channels: 4,
            height: 16,
            width: 16,
            shared_temporal_mode: SharedTemporalMode::IndependentPerWindow,
            train_timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            beta_schedule: BetaSchedule::Linear,
            ddim_steps: 30,
            t_edit_fraction: 0.6,
            iterations: 3,
            omega_start: 0.9,
            omega_end: 0.6,
            oracle_sigma2: 0.05,
            guidance_scale: 1.0,
            noise_floor: 0.02,
            scene_seed: 0,
            edit_channel: 0,
            edit_scale: 1.5,
            edit_bias: 0.0,
            psnr_peak: 4.0,
        }
    }
}

fn to_map(config: &RunConfig) -> Map<String, Value> {
    match serde_json::to_value(config).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("struct serializes to an object"),
    }
}

impl RunConfig {
    /// Documented keys in file order.
    pub fn keys() -> Vec<String> {
        to_map(&Self::default()).keys().cloned().collect()
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = to_map(self);
        let current = map
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let bad = |what: &str| Error::Config(format!("key `{key}`: expected {what}, got `{value}`"));
        let parsed = match current {
            Value::Number(n) if n.is_u64() => Value::from(value.parse::<u64>().map_err(|_| bad("an unsigned integer"))?),
            Value::Number(_) => {
                let v: f64 = value.parse().map_err(|_| bad("a number"))?;
                if !v.is_finite() {
                    return Err(bad("a finite number"));
                }
                Value::from(v)
            }
            _ => Value::String(value.to_string()),
        };
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("key `{key}`: {e}")))?;
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// `key = value` lines, parseable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        to_map(self)
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k} = {s}\n"),
                other => format!("{k} = {other}\n"),
            })
            .collect()
    }

    /// Hex SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            views: self.views,
            windows: self.windows,
            frames_per_window: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            seed: self.seed,
            shared_temporal_mode: self.shared_temporal_mode,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(
            self.train_timesteps,
            self.beta_start,
            self.beta_end,
            self.beta_schedule,
            self.ddim_steps,
        )
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            noise: self.noise_config(),
            schedule: self.schedule()?.spec(),
            t_edit_fraction: self.t_edit_fraction,
            iterations: self.iterations,
            omega_start: self.omega_start,
            omega_end: self.omega_end,
            oracle_sigma2: self.oracle_sigma2,
            guidance_scale: self.guidance_scale,
            psnr_peak: self.psnr_peak,
        })
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            views: self.views,
            windows: self.windows,
            frames_per_window: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            noise_floor: self.noise_floor,
            seed: self.scene_seed,
            ..SceneSpec::default()
        }
    }

    pub fn scene(&self) -> Result<SyntheticScene> {
        SyntheticScene::from_spec(&self.scene_spec())
    }

    pub fn edit(&self) -> Result<EditOperator> {
        EditOperator::channel_affine(self.channels, self.edit_channel, self.edit_scale, self.edit_bias)
    }

    /// Checks every derived component before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.pipeline_config()?.validate()?;
        self.scene()?;
        self.edit()?;
        Ok(())
    }
}
