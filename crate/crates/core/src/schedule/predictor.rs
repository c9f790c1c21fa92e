use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::DiffusionSchedule;

pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;
pub const MAX_GUIDANCE_SCALE: f64 = 9.0;

/// Side information handed to a predictor. Predictors in this crate treat it
/// as opaque apart from the `unconditional` flag used by guidance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conditioning {
    pub view: Option<usize>,
    pub window: Option<usize>,
    /// Camera/time embedding for view-aware predictors.
    pub embedding: Option<Vec<f64>>,
    pub unconditional: bool,
}

impl Conditioning {
    pub fn for_view(view: usize) -> Self {
        Self {
            view: Some(view),
            ..Self::default()
        }
    }

    pub fn as_unconditional(&self) -> Self {
        Self {
            unconditional: true,
            ..self.clone()
        }
    }
}

/// Predicts the noise component of `z_t` at timestep `t`. The output must
/// have the input's shape and be finite; the DDIM routines enforce this.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        schedule: &DiffusionSchedule,
        z_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, _: &DiffusionSchedule, z_t: &Tensor, _: usize, _: &Conditioning) -> Result<Tensor> {
        Tensor::zeros(z_t.shape())
    }
}

/// Returns the same tensor at every call.
#[derive(Debug, Clone)]
pub struct FixedPredictor(Tensor);

impl FixedPredictor {
    pub fn new(eps: Tensor) -> Self {
        Self(eps)
    }
}

impl NoisePredictor for FixedPredictor {
    fn predict(&self, _: &DiffusionSchedule, _: &Tensor, _: usize, _: &Conditioning) -> Result<Tensor> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleMean {
    Scalar(f64),
    /// Per-element mean; must match the latent's shape.
    Field(Tensor),
}

/// Exact posterior noise predictor for latents `z0 ~ N(mean, sigma2 * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    mean: OracleMean,
    sigma2: f64,
}

impl GaussianOracle {
    pub fn new(mean: OracleMean, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::param("sigma2", format!("must be positive, got {sigma2}")));
        }
        match &mean {
            OracleMean::Scalar(m) if !m.is_finite() => {
                return Err(Error::param("mean", "must be finite"))
            }
            OracleMean::Field(t) if !t.is_finite() => {
                return Err(Error::param("mean", "must be finite"))
            }
            _ => {}
        }
        Ok(Self { mean, sigma2 })
    }

    pub fn mean(&self) -> &OracleMean {
        &self.mean
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `E[z0 | z_t]`.
    pub fn posterior_mean(&self, schedule: &DiffusionSchedule, z_t: &Tensor, t: usize) -> Result<Tensor> {
        let ab = schedule.alpha_bar(t)?;
        let sa = ab.sqrt();
        let gain = sa * self.sigma2 / (ab * self.sigma2 + 1.0 - ab);
        match &self.mean {
            OracleMean::Scalar(mu) => Ok(z_t.map(|z| mu + gain * (z - sa * mu))),
            OracleMean::Field(mu) => mu.zip_map(z_t, |mu, z| mu + gain * (z - sa * mu)),
        }
    }
}

/// `E[eps | z_t] = (z_t - sqrt(ab_t) E[z0 | z_t]) / sqrt(1 - ab_t)`.
pub fn oracle_predict(
    oracle: &GaussianOracle,
    schedule: &DiffusionSchedule,
    z_t: &Tensor,
    t: usize,
) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t)?;
    if 1.0 - ab <= 0.0 {
        return Err(Error::DivisionGuard(format!(
            "alpha_bar({t}) = 1, noise is undefined at a clean timestep"
        )));
    }
    let z0 = oracle.posterior_mean(schedule, z_t, t)?;
    let (sa, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
    z_t.zip_map(&z0, |z, m| (z - sa * m) / s1)
}

impl NoisePredictor for GaussianOracle {
    fn predict(
        &self,
        schedule: &DiffusionSchedule,
        z_t: &Tensor,
        t: usize,
        _: &Conditioning,
    ) -> Result<Tensor> {
        oracle_predict(self, schedule, z_t, t)
    }
}

/// `eps = eps_uncond + scale * (eps_cond - eps_uncond)`.
pub struct ClassifierFreeGuidance<C, U> {
    conditional: C,
    unconditional: U,
    scale: f64,
}

impl<C: NoisePredictor, U: NoisePredictor> ClassifierFreeGuidance<C, U> {
    pub fn new(conditional: C, unconditional: U, scale: f64) -> Result<Self> {
        if !(0.0..=MAX_GUIDANCE_SCALE).contains(&scale) {
            return Err(Error::param(
                "guidance_scale",
                format!("{scale} is outside [0, {MAX_GUIDANCE_SCALE}]"),
            ));
        }
        Ok(Self {
            conditional,
            unconditional,
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<C: NoisePredictor, U: NoisePredictor> NoisePredictor for ClassifierFreeGuidance<C, U> {
    fn predict(
        &self,
        schedule: &DiffusionSchedule,
        z_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor> {
        let c = self.conditional.predict(schedule, z_t, t, cond)?;
        let u = self
            .unconditional
            .predict(schedule, z_t, t, &cond.as_unconditional())?;
        let s = self.scale;
        u.zip_map(&c, |u, c| u + s * (c - u))
    }
}
