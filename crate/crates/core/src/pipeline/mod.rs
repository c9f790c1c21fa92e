//! Multi-view edit loop: structured-noise initial edit, then view-consistent
//! refinement that alternates denoising, rectification and consensus fitting.
//!
//! Latents are handled per view as `[K, n, w, C, H, W]`. Encoding and
//! decoding are the identity, so "latents" and "renders" coincide.

pub mod edit;
pub mod scene;

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use edit::{EditOperator, EditPredictors};
pub use scene::{
    fit_scene_model, render, render_views, FitDiagnostics, Geometry, SceneModel, SceneSpec,
    SyntheticScene, ViewMap,
};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::noise::{sample_structured, NoiseConfig};
use crate::schedule::{
    ddim_denoise_from, forward_diffuse, Conditioning, DiffusionSchedule, ScheduleSpec,
    MAX_GUIDANCE_SCALE,
};
use crate::tensor::{RngState, Tensor};

/// Settings of one edit run apart from the scene and the edit itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Structured noise; its dimensions must match the rendered views.
    pub noise: NoiseConfig,
    pub schedule: ScheduleSpec,
    /// Re-noising level as a fraction of `T`.
    pub t_edit_fraction: f64,
    /// Number of refinement iterations `L`.
    pub iterations: usize,
    pub omega_start: f64,
    pub omega_end: f64,
    /// Prior variance of the edit-aware oracle.
    pub oracle_sigma2: f64,
    pub guidance_scale: f64,
    /// Peak value for PSNR/SSIM.
    pub psnr_peak: f64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        DiffusionSchedule::from_spec(&self.schedule)?;
        if !(self.t_edit_fraction > 0.0 && self.t_edit_fraction <= 1.0) {
            return Err(Error::param(
                "t_edit_fraction",
                format!("{} is outside (0, 1]", self.t_edit_fraction),
            ));
        }
        omega_schedule(self.iterations, self.omega_start, self.omega_end)?;
        if !(self.oracle_sigma2 > 0.0 && self.oracle_sigma2.is_finite()) {
            return Err(Error::param("oracle_sigma2", "must be positive"));
        }
        if !(0.0..=MAX_GUIDANCE_SCALE).contains(&self.guidance_scale) {
            return Err(Error::param(
                "guidance_scale",
                format!("{} is outside [0, {MAX_GUIDANCE_SCALE}]", self.guidance_scale),
            ));
        }
        if !(self.psnr_peak > 0.0 && self.psnr_peak.is_finite()) {
            return Err(Error::param("psnr_peak", "must be positive"));
        }
        Ok(())
    }

    /// `round(t_edit_fraction * T)`, at least 1.
    pub fn t_edit(&self) -> usize {
        let t = self.schedule.train_timesteps;
        ((self.t_edit_fraction * t as f64).round() as usize).clamp(1, t)
    }

    pub fn omegas(&self) -> Result<Vec<f64>> {
        omega_schedule(self.iterations, self.omega_start, self.omega_end)
    }
}

/// Component switched off in an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// No temporal correlation across windows (`gamma = 0`).
    #[serde(rename = "no-anm")]
    NoAnm,
    /// No shared cross-view component (`lambda = 0`).
    #[serde(rename = "no-cnm")]
    NoCnm,
    /// No refinement iterations (`L = 0`).
    #[serde(rename = "no-vcr")]
    NoVcr,
}

impl Ablation {
    pub fn apply(self, config: &mut PipelineConfig) {
        match self {
            Ablation::NoAnm => config.noise.gamma = 0.0,
            Ablation::NoCnm => config.noise.lambda = 0.0,
            Ablation::NoVcr => config.iterations = 0,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-anm" => Ok(Self::NoAnm),
            "no-cnm" => Ok(Self::NoCnm),
            "no-vcr" => Ok(Self::NoVcr),
            other => Err(Error::param(
                "ablate",
                format!("unknown ablation `{other}` (no-anm | no-cnm | no-vcr)"),
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::NoAnm => "no-anm",
            Ablation::NoCnm => "no-cnm",
            Ablation::NoVcr => "no-vcr",
        })
    }
}

/// `L` blend weights falling linearly from `start` to `end`.
pub fn omega_schedule(iterations: usize, start: f64, end: f64) -> Result<Vec<f64>> {
    if !(end > 0.0 && end <= start && start <= 1.0) {
        return Err(Error::param(
            "omega",
            format!("need 0 < omega_end <= omega_start <= 1, got {start} -> {end}"),
        ));
    }
    Ok(match iterations {
        0 => Vec::new(),
        1 => vec![start],
        // the two-weight form hits both endpoints exactly
        l => (0..l)
            .map(|i| {
                let u = i as f64 / (l - 1) as f64;
                (1.0 - u) * start + u * end
            })
            .collect(),
    })
}

/// `omega * denoised + (1 - omega) * previous`.
pub fn rectify(previous: &Tensor, denoised: &Tensor, omega: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::param("omega", format!("{omega} is outside [0, 1]")));
    }
    // written as previous + omega * (denoised - previous) so both endpoints
    // are reproduced exactly
    previous.zip_map(denoised, |p, d| if omega == 1.0 { d } else { p + omega * (d - p) })
}

/// Re-noises every view to `t_edit` with its slice of `noise` and denoises it
/// with the view's predictor. Views run in parallel.
fn renoise_and_denoise(
    views: &Tensor,
    noise: &Tensor,
    schedule: &DiffusionSchedule,
    t_edit: usize,
    predictors: &EditPredictors,
) -> Result<Tensor> {
    views.ensure_same_shape(noise)?;
    let out: Vec<Tensor> = (0..views.shape()[0])
        .into_par_iter()
        .map(|k| {
            let z0 = views.index_axis0(k)?;
            let z_t = forward_diffuse(schedule, &z0, t_edit, &noise.index_axis0(k)?)?;
            ddim_denoise_from(schedule, &z_t, t_edit, predictors.for_view(k)?, &Conditioning::for_view(k))
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&out)
}

fn noise_for(config: &NoiseConfig, views: &Tensor, stream: u64) -> Result<Tensor> {
    if views.shape() != config.shape() {
        return Err(Error::ShapeMismatch {
            expected: views.shape().to_vec(),
            actual: config.shape().to_vec(),
        });
    }
    Ok(sample_structured(config, &RngState::new(config.seed, stream))?.into_tensor())
}

/// Initial edited views: forward-diffuse each view to `t_edit` with
/// structured noise from stream 0 of the noise seed, then DDIM-denoise with
/// the edit-aware predictors.
pub fn initial_edit(
    views: &Tensor,
    predictors: &EditPredictors,
    noise: &NoiseConfig,
    schedule: &DiffusionSchedule,
    t_edit: usize,
) -> Result<Tensor> {
    let eps = noise_for(noise, views, 0)?;
    renoise_and_denoise(views, &eps, schedule, t_edit, predictors)
}

/// Loop state between refinement iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    /// Iterations completed so far.
    pub l: usize,
    pub omega_schedule: Vec<f64>,
    /// Per-view latents entering iteration `l`.
    pub latents_prev: Tensor,
    /// Output of the denoising chain in the last iteration.
    pub latents_denoised: Option<Tensor>,
    /// Rectified latents of the last iteration.
    pub latents_rectified: Option<Tensor>,
}

impl RefinementState {
    pub fn new(latents: Tensor, omega_schedule: Vec<f64>) -> Result<Self> {
        if omega_schedule.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::param("omega", "every weight must lie in (0, 1]"));
        }
        if omega_schedule.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::param("omega", "weights must be non-increasing"));
        }
        Ok(Self {
            l: 0,
            omega_schedule,
            latents_prev: latents,
            latents_denoised: None,
            latents_rectified: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.l >= self.omega_schedule.len()
    }
}

/// What a refinement step needs besides the state.
pub struct RefineContext<'a> {
    pub schedule: &'a DiffusionSchedule,
    pub predictors: &'a EditPredictors,
    pub noise: &'a NoiseConfig,
    pub t_edit: usize,
    pub view_maps: &'a [ViewMap],
    pub geometry: &'a Geometry,
}

/// One refinement iteration: denoise with fresh structured noise (stream
/// `1 + l`), rectify against the incoming latents, fit the consensus model
/// and re-render it as the next iteration's input.
pub fn refine_step(state: &RefinementState, ctx: &RefineContext<'_>) -> Result<(RefinementState, SceneModel)> {
    if state.finished() {
        return Err(Error::param(
            "l",
            format!("iteration {} exceeds L = {}", state.l, state.omega_schedule.len()),
        ));
    }
    let omega = state.omega_schedule[state.l];
    let eps = noise_for(ctx.noise, &state.latents_prev, 1 + state.l as u64)?;
    let denoised = renoise_and_denoise(&state.latents_prev, &eps, ctx.schedule, ctx.t_edit, ctx.predictors)?;
    let rectified = rectify(&state.latents_prev, &denoised, omega)?;
    let model = fit_scene_model(&rectified, ctx.view_maps, ctx.geometry)?;
    let next = model.render(ctx.view_maps, ctx.geometry)?;
    Ok((
        RefinementState {
            l: state.l + 1,
            omega_schedule: state.omega_schedule.clone(),
            latents_prev: next,
            latents_denoised: Some(denoised),
            latents_rectified: Some(rectified),
        },
        model,
    ))
}

/// Metrics of one iteration. Record 0 describes the initial edit; record `l`
/// the rectified latents of refinement iteration `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub omega: Option<f64>,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: SceneModel,
    pub trace: Vec<TraceRecord>,
    /// Latents each trace record was computed on.
    pub snapshots: Vec<Tensor>,
    pub original: Tensor,
    pub target: Tensor,
}

/// Renders the scene, performs the initial edit and `L` refinement
/// iterations, and records metrics after each stage.
pub fn run_psf4d(scene: &SyntheticScene, edit: &EditOperator, config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    let schedule = DiffusionSchedule::from_spec(&config.schedule)?;
    let t_edit = config.t_edit();
    let original = render_views(scene)?;
    let predictors = EditPredictors::new(&original, edit, config.oracle_sigma2, config.guidance_scale)?;
    let target = predictors.targets().clone();
    let record = |iteration, omega, latents: &Tensor| -> Result<TraceRecord> {
        Ok(TraceRecord {
            iteration,
            omega,
            metrics: MetricsReport::compute(
                latents,
                &original,
                &target,
                &scene.view_maps,
                &scene.geometry,
                config.psnr_peak,
            )?,
        })
    };

    let edited = initial_edit(&original, &predictors, &config.noise, &schedule, t_edit)?;
    let mut model = fit_scene_model(&edited, &scene.view_maps, &scene.geometry)?;
    let mut trace = vec![record(0, None, &edited)?];
    let mut state = RefinementState::new(edited.clone(), config.omegas()?)?;
    let mut snapshots = vec![edited];
    let ctx = RefineContext {
        schedule: &schedule,
        predictors: &predictors,
        noise: &config.noise,
        t_edit,
        view_maps: &scene.view_maps,
        geometry: &scene.geometry,
    };
    while !state.finished() {
        let omega = state.omega_schedule[state.l];
        let (next, fitted) = refine_step(&state, &ctx)?;
        let rectified = next.latents_rectified.clone().expect("set by refine_step");
        trace.push(record(next.l, Some(omega), &rectified)?);
        snapshots.push(rectified);
        model = fitted;
        state = next;
    }
    Ok(PipelineRun {
        model,
        trace,
        snapshots,
        original,
        target,
    })
}
