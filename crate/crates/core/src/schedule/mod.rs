//! Diffusion schedules and deterministic DDIM sampling.
//!
//! Timesteps run `0..=T`; `alpha_bar(0) = 1` so `t = 0` is the clean latent.
//! A DDIM update moves a latent between any two timesteps using a predicted
//! noise `eps`:
//!
//! ```text
//! z_to = sqrt(ab_to) * (z_from - sqrt(1 - ab_from) * eps) / sqrt(ab_from)
//!      + sqrt(1 - ab_to) * eps
//! ```
//!
//! where `ab` is the cumulative product of `1 - beta`.

mod predictor;

pub use predictor::{
    oracle_predict, ClassifierFreeGuidance, Conditioning, FixedPredictor, GaussianOracle,
    NoisePredictor, OracleMean, ZeroPredictor, DEFAULT_GUIDANCE_SCALE, MAX_GUIDANCE_SCALE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed-point refinements applied to each inversion step by default.
pub const DEFAULT_INVERSION_REFINEMENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Linear,
    ScaledLinear,
}

impl std::str::FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "scaled_linear" => Ok(Self::ScaledLinear),
            other => Err(Error::param(
                "beta_schedule",
                format!("unknown kind `{other}` (linear | scaled_linear)"),
            )),
        }
    }
}

/// JSON-exportable description sufficient to rebuild a schedule exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub train_timesteps: usize,
    pub kind: BetaSchedule,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_timesteps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    kind: BetaSchedule,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Index `t` holds `alpha_bar(t)`; index 0 is 1.
    alpha_bars: Vec<f64>,
    ddim_timesteps: Vec<usize>,
}

fn linspace(start: f64, end: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 {
        (end - start) / (n - 1) as f64
    } else {
        0.0
    };
    (0..n).map(move |i| if i + 1 == n { end } else { start + step * i as f64 })
}

/// Builds a `T`-step beta schedule and an evenly spaced DDIM sub-schedule of
/// `ddim_step_count` timesteps `floor(k * T / S)` for `k = 1..=S`, which
/// always ends at `T`.
pub fn make_schedule(
    train_timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    kind: BetaSchedule,
    ddim_step_count: usize,
) -> Result<DiffusionSchedule> {
    if train_timesteps == 0 {
        return Err(Error::param("T", "must be >= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::param(
            "beta",
            format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
        ));
    }
    if ddim_step_count == 0 || ddim_step_count > train_timesteps {
        return Err(Error::param(
            "ddim_steps",
            format!("{ddim_step_count} is outside [1, {train_timesteps}]"),
        ));
    }
    let betas: Vec<f64> = match kind {
        BetaSchedule::Linear => linspace(beta_start, beta_end, train_timesteps).collect(),
        BetaSchedule::ScaledLinear => {
            linspace(beta_start.sqrt(), beta_end.sqrt(), train_timesteps)
                .map(|b| b * b)
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(train_timesteps + 1);
    alpha_bars.push(1.0);
    for a in &alphas {
        let prev = *alpha_bars.last().expect("seeded with 1");
        alpha_bars.push(prev * a);
    }
    let ddim_timesteps = (1..=ddim_step_count)
        .map(|k| k * train_timesteps / ddim_step_count)
        .collect();
    Ok(DiffusionSchedule {
        kind,
        beta_start,
        beta_end,
        betas,
        alphas,
        alpha_bars,
        ddim_timesteps,
    })
}

impl DiffusionSchedule {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        let mut s = make_schedule(
            spec.train_timesteps,
            spec.beta_start,
            spec.beta_end,
            spec.kind,
            spec.ddim_timesteps.len().max(1),
        )?;
        let ok = !spec.ddim_timesteps.is_empty()
            && spec.ddim_timesteps.windows(2).all(|w| w[0] < w[1])
            && spec
                .ddim_timesteps
                .iter()
                .all(|&t| (1..=spec.train_timesteps).contains(&t));
        if !ok {
            return Err(Error::param(
                "ddim_timesteps",
                "must be strictly increasing within [1, T]",
            ));
        }
        s.ddim_timesteps = spec.ddim_timesteps.clone();
        Ok(s)
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            train_timesteps: self.train_timesteps(),
            kind: self.kind,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            ddim_timesteps: self.ddim_timesteps.clone(),
        }
    }

    pub fn train_timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar(t)` for `t = 0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn ddim_timesteps(&self) -> &[usize] {
        &self.ddim_timesteps
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                what: "timestep",
                index: t,
                bound: self.alpha_bars.len(),
            })
    }

    /// Descending timesteps visited when denoising from `t_start` to 0:
    /// `t_start`, every sub-schedule step below it, then 0.
    pub fn denoising_path(&self, t_start: usize) -> Result<Vec<usize>> {
        self.alpha_bar(t_start)?;
        let mut path = vec![t_start];
        path.extend(self.ddim_timesteps.iter().rev().copied().filter(|&t| t < t_start));
        if t_start != 0 {
            path.push(0);
        }
        Ok(path)
    }

    /// Ascending timesteps visited when inverting from 0 up to `T`.
    pub fn inversion_path(&self) -> Vec<usize> {
        std::iter::once(0).chain(self.ddim_timesteps.iter().copied()).collect()
    }
}

/// `z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
pub fn forward_diffuse(
    schedule: &DiffusionSchedule,
    z0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t)?;
    z0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

fn ddim_update(ab_from: f64, ab_to: f64, z: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let keep = (1.0 - ab_from).sqrt();
    let (sa_from, sa_to, add) = (ab_from.sqrt(), ab_to.sqrt(), (1.0 - ab_to).sqrt());
    z.zip_map(eps, |z, e| sa_to * ((z - keep * e) / sa_from) + add * e)
}

fn checked_predict(
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    z: &Tensor,
    t: usize,
    cond: &Conditioning,
) -> Result<Tensor> {
    let eps = predictor.predict(schedule, z, t, cond)?;
    if eps.shape() != z.shape() {
        return Err(Error::Contract(format!(
            "predictor returned shape {:?} for input {:?}",
            eps.shape(),
            z.shape()
        )));
    }
    if !eps.is_finite() {
        return Err(Error::Contract(format!(
            "predictor returned non-finite values at t = {t}"
        )));
    }
    Ok(eps)
}

/// One deterministic DDIM step from `t_from` down to `t_to`, with the noise
/// predicted at `(z_t, t_from)`.
pub fn ddim_step(
    schedule: &DiffusionSchedule,
    z_t: &Tensor,
    t_from: usize,
    t_to: usize,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
) -> Result<Tensor> {
    if t_from <= t_to {
        return Err(Error::param(
            "t_from",
            format!("denoising step needs t_from > t_to, got {t_from} -> {t_to}"),
        ));
    }
    let (ab_from, ab_to) = (schedule.alpha_bar(t_from)?, schedule.alpha_bar(t_to)?);
    let eps = checked_predict(predictor, schedule, z_t, t_from, cond)?;
    ddim_update(ab_from, ab_to, z_t, &eps)
}

/// One inversion step from `t_from` up to `t_to`.
///
/// The update solves `ddim_step(z_to, t_to -> t_from) = z` for `z_to`. The
/// first guess evaluates the predictor at `(z, t_to)`; each refinement
/// re-evaluates it at the current `z_to`.
pub fn ddim_invert_step(
    schedule: &DiffusionSchedule,
    z: &Tensor,
    t_from: usize,
    t_to: usize,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
    refinements: usize,
) -> Result<Tensor> {
    if t_to <= t_from {
        return Err(Error::param(
            "t_to",
            format!("inversion step needs t_to > t_from, got {t_from} -> {t_to}"),
        ));
    }
    let (ab_from, ab_to) = (schedule.alpha_bar(t_from)?, schedule.alpha_bar(t_to)?);
    let eps = checked_predict(predictor, schedule, z, t_to, cond)?;
    let mut z_to = ddim_update(ab_from, ab_to, z, &eps)?;
    for _ in 0..refinements {
        let eps = checked_predict(predictor, schedule, &z_to, t_to, cond)?;
        z_to = ddim_update(ab_from, ab_to, z, &eps)?;
    }
    Ok(z_to)
}

/// Denoises `z_t` at `t_start` down to `t = 0` along the sub-schedule.
pub fn ddim_denoise_from(
    schedule: &DiffusionSchedule,
    z_t: &Tensor,
    t_start: usize,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
) -> Result<Tensor> {
    let path = schedule.denoising_path(t_start)?;
    let mut z = z_t.clone();
    for pair in path.windows(2) {
        z = ddim_step(schedule, &z, pair[0], pair[1], predictor, cond)?;
    }
    Ok(z)
}

/// Full sampling chain from `z_T`.
pub fn ddim_sample(
    schedule: &DiffusionSchedule,
    z_big_t: &Tensor,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
) -> Result<Tensor> {
    ddim_denoise_from(schedule, z_big_t, schedule.train_timesteps(), predictor, cond)
}

/// Maps a clean latent to its `z_T` estimate with the default refinement count.
pub fn ddim_invert(
    schedule: &DiffusionSchedule,
    z0: &Tensor,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
) -> Result<Tensor> {
    ddim_invert_with(schedule, z0, predictor, cond, DEFAULT_INVERSION_REFINEMENTS)
}

pub fn ddim_invert_with(
    schedule: &DiffusionSchedule,
    z0: &Tensor,
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
    refinements: usize,
) -> Result<Tensor> {
    let path = schedule.inversion_path();
    let mut z = z0.clone();
    for pair in path.windows(2) {
        z = ddim_invert_step(schedule, &z, pair[0], pair[1], predictor, cond, refinements)?;
    }
    Ok(z)
}
