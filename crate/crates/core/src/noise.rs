//! Structured forward-diffusion noise for multi-view video latents.
//!
//! Two stages, both at window granularity:
//!
//! 1. Temporal AR(1) per view: `e[0] = eta[0]`,
//!    `e[i] = gamma * e[i-1] + sqrt(1 - gamma^2) * eta[i]`, applied to the
//!    whole `[w, C, H, W]` block of window `i`.
//! 2. Cross-view mixing per window: a shared block `s[i]` with covariance
//!    `lambda * I` is added to `sqrt(1 - lambda) * e[k][i]` for every view `k`.
//!
//! Every element stays marginally N(0, 1). Each `(view, window)` innovation
//! and each per-window shared block is drawn from its own RNG sub-stream, so
//! results do not depend on evaluation order or thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, RngState, Tensor};

const STREAM_AR: u64 = 1;
const STREAM_SHARED: u64 = 2;

/// How the shared component evolves across windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedTemporalMode {
    /// A fresh shared block per window.
    #[default]
    IndependentPerWindow,
    /// The shared blocks follow the same AR(1) recursion as the per-view noise.
    ArChained,
}

impl std::str::FromStr for SharedTemporalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent_per_window" | "independent" => Ok(Self::IndependentPerWindow),
            "ar_chained" | "chained" => Ok(Self::ArChained),
            other => Err(Error::param(
                "shared_temporal_mode",
                format!("unknown mode `{other}` (independent_per_window | ar_chained)"),
            )),
        }
    }
}

impl std::fmt::Display for SharedTemporalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::IndependentPerWindow => "independent_per_window",
            Self::ArChained => "ar_chained",
        })
    }
}

/// Parameters of the structured noise. Serializes to the sidecar JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub gamma: f64,
    pub lambda: f64,
    #[serde(rename = "K")]
    pub views: usize,
    #[serde(rename = "n")]
    pub windows: usize,
    #[serde(rename = "w")]
    pub frames_per_window: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub seed: u64,
    pub shared_temporal_mode: SharedTemporalMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gamma: 0.65,
            lambda: 0.7,
            views: 4,
            windows: 6,
            frames_per_window: 8,
            channels: 4,
            height: 8,
            width: 8,
            seed: 0,
            shared_temporal_mode: SharedTemporalMode::IndependentPerWindow,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param(
                "gamma",
                format!("{} is outside [0, 1)", self.gamma),
            ));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::param(
                "lambda",
                format!("{} is outside [0, 1)", self.lambda),
            ));
        }
        for (name, v) in [
            ("views", self.views),
            ("windows", self.windows),
            ("frames_per_window", self.frames_per_window),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// `[K, n, w, C, H, W]`.
    pub fn shape(&self) -> [usize; 6] {
        [
            self.views,
            self.windows,
            self.frames_per_window,
            self.channels,
            self.height,
            self.width,
        ]
    }

    /// Elements in one `(view, window)` block.
    pub fn block_len(&self) -> usize {
        self.frames_per_window * self.channels * self.height * self.width
    }

    /// The root RNG state implied by `seed`.
    pub fn rng(&self) -> RngState {
        RngState::new(self.seed, 0)
    }
}

/// Structured noise tensor with axes `[K, n, w, C, H, W]` and the config that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredNoise {
    tensor: Tensor,
    config: NoiseConfig,
}

impl StructuredNoise {
    pub fn new(tensor: Tensor, config: NoiseConfig) -> Result<Self> {
        if tensor.shape() != config.shape() {
            return Err(Error::ShapeMismatch {
                expected: config.shape().to_vec(),
                actual: tensor.shape().to_vec(),
            });
        }
        Ok(Self { tensor, config })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// The `[w, C, H, W]` block of one view and window, flattened.
    pub fn block(&self, view: usize, window: usize) -> Result<&[f64]> {
        check_index("view", view, self.config.views)?;
        check_index("window", window, self.config.windows)?;
        let len = self.config.block_len();
        let start = (view * self.config.windows + window) * len;
        Ok(&self.tensor.data()[start..start + len])
    }

    /// Writes the tensor to `path` and the config to `path` with a `.json`
    /// extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        tensor::save(path, &self.tensor)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config)?;
        fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let config: NoiseConfig = serde_json::from_str(&text)?;
        Self::new(tensor::load(path)?, config)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index >= bound {
        return Err(Error::IndexOutOfRange { what, index, bound });
    }
    Ok(())
}

/// Draws window blocks `0..n` for one AR(1) chain from the sub-streams
/// `rng.substream(prefix ++ [window])`.
fn ar_chain(gamma: f64, windows: usize, block: usize, rng: &RngState, prefix: &[u64]) -> Vec<f64> {
    let innovation = (1.0 - gamma * gamma).sqrt();
    let mut out = vec![0.0; windows * block];
    let mut path = prefix.to_vec();
    path.push(0);
    for i in 0..windows {
        *path.last_mut().expect("non-empty path") = i as u64;
        let (done, rest) = out.split_at_mut(i * block);
        let cur = &mut rest[..block];
        rng.substream(&path).fill_normal(cur);
        if i > 0 {
            let prev = &done[(i - 1) * block..];
            for (c, p) in cur.iter_mut().zip(prev) {
                *c = gamma * *p + innovation * *c;
            }
        }
    }
    out
}

/// Per-view AR(1) window noise with axes `[K, n, w, C, H, W]`.
pub fn sample_ar(config: &NoiseConfig, rng: &RngState) -> Result<Tensor> {
    config.validate()?;
    let block = config.block_len();
    let per_view: Vec<Vec<f64>> = (0..config.views)
        .into_par_iter()
        .map(|k| ar_chain(config.gamma, config.windows, block, rng, &[STREAM_AR, k as u64]))
        .collect();
    Tensor::new(config.shape().to_vec(), per_view.concat())
}

/// Mixes a shared per-window component into unit-variance per-view noise.
pub fn apply_cross_view(
    config: &NoiseConfig,
    ar_noise: &Tensor,
    rng: &RngState,
) -> Result<StructuredNoise> {
    config.validate()?;
    if ar_noise.shape() != config.shape() {
        return Err(Error::ShapeMismatch {
            expected: config.shape().to_vec(),
            actual: ar_noise.shape().to_vec(),
        });
    }
    let block = config.block_len();
    let shared_gamma = match config.shared_temporal_mode {
        SharedTemporalMode::IndependentPerWindow => 0.0,
        SharedTemporalMode::ArChained => config.gamma,
    };
    let shared = ar_chain(shared_gamma, config.windows, block, rng, &[STREAM_SHARED]);
    let shared_scale = config.lambda.sqrt();
    let own_scale = (1.0 - config.lambda).sqrt();

    let mut data = ar_noise.data().to_vec();
    data.par_chunks_mut(config.windows * block).for_each(|view| {
        for (v, s) in view.iter_mut().zip(&shared) {
            *v = shared_scale * *s + own_scale * *v;
        }
    });
    StructuredNoise::new(Tensor::new(config.shape().to_vec(), data)?, config.clone())
}

/// AR noise followed by cross-view mixing, both keyed off `rng`.
pub fn sample_structured(config: &NoiseConfig, rng: &RngState) -> Result<StructuredNoise> {
    let ar = sample_ar(config, rng)?;
    apply_cross_view(config, &ar, rng)
}

/// Closed-form element-wise correlation between block `(view_a, window_i)`
/// and block `(view_b, window_j)` at the same intra-block position.
pub fn theoretical_correlation(
    config: &NoiseConfig,
    view_a: usize,
    window_i: usize,
    view_b: usize,
    window_j: usize,
) -> Result<f64> {
    check_index("view_a", view_a, config.views)?;
    check_index("view_b", view_b, config.views)?;
    check_index("window_i", window_i, config.windows)?;
    check_index("window_j", window_j, config.windows)?;
    let lag = window_i.abs_diff(window_j) as i32;
    let decay = config.gamma.powi(lag);
    let shared = match (config.shared_temporal_mode, lag) {
        (_, 0) => 1.0,
        (SharedTemporalMode::IndependentPerWindow, _) => 0.0,
        (SharedTemporalMode::ArChained, _) => decay,
    };
    let lambda = config.lambda;
    Ok(if view_a == view_b {
        lambda * shared + (1.0 - lambda) * decay
    } else {
        lambda * shared
    })
}
