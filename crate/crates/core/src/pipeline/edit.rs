//! Latent-space edit operator and the edit-aware noise predictors built on it.

use crate::error::{Error, Result};
use crate::schedule::{
    ClassifierFreeGuidance, Conditioning, DiffusionSchedule, GaussianOracle, NoisePredictor,
    OracleMean,
};
use crate::tensor::Tensor;

/// Per-channel affine transform `scale * x + bias`, optionally blended with
/// the input through a spatial mask in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditOperator {
    scale: Vec<f64>,
    bias: Vec<f64>,
    /// `[H, W]`; 1 applies the edit fully, 0 leaves the input untouched.
    mask: Option<Tensor>,
}

impl EditOperator {
    pub fn new(scale: Vec<f64>, bias: Vec<f64>, mask: Option<Tensor>) -> Result<Self> {
        if scale.is_empty() || scale.len() != bias.len() {
            return Err(Error::param(
                "edit",
                format!("scale ({}) and bias ({}) need one entry per channel", scale.len(), bias.len()),
            ));
        }
        if scale.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::param("edit", "scale and bias must be finite"));
        }
        if let Some(m) = &mask {
            if m.rank() != 2 {
                return Err(Error::InvalidShape {
                    shape: m.shape().to_vec(),
                    reason: "mask must be [H, W]".into(),
                });
            }
            if m.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::param("mask", "values must lie in [0, 1]"));
            }
        }
        Ok(Self { scale, bias, mask })
    }

    pub fn identity(channels: usize) -> Result<Self> {
        Self::new(vec![1.0; channels], vec![0.0; channels], None)
    }

    /// Scales one channel, leaving the others unchanged.
    pub fn channel_affine(channels: usize, channel: usize, scale: f64, bias: f64) -> Result<Self> {
        if channel >= channels {
            return Err(Error::IndexOutOfRange {
                what: "edit channel",
                index: channel,
                bound: channels,
            });
        }
        let mut s = vec![1.0; channels];
        let mut b = vec![0.0; channels];
        s[channel] = scale;
        b[channel] = bias;
        Self::new(s, b, None)
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Applies the edit to latents `[.., C, H, W]`.
    pub fn apply(&self, latents: &Tensor) -> Result<Tensor> {
        let s = latents.shape();
        if s.len() < 3 || s[s.len() - 3] != self.channels() {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("expected [.., {}, H, W]", self.channels()),
            });
        }
        let plane = s[s.len() - 2] * s[s.len() - 1];
        if let Some(m) = &self.mask {
            if m.shape() != &s[s.len() - 2..] {
                return Err(Error::ShapeMismatch {
                    expected: s[s.len() - 2..].to_vec(),
                    actual: m.shape().to_vec(),
                });
            }
        }
        let c = self.channels();
        let data = latents
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ch = (i / plane) % c;
                let edited = self.scale[ch] * x + self.bias[ch];
                match &self.mask {
                    Some(m) => {
                        let w = m.data()[i % plane];
                        x + w * (edited - x)
                    }
                    None => edited,
                }
            })
            .collect();
        Tensor::new(s.to_vec(), data)
    }
}

/// Per-view noise predictors whose clean-latent prior is centred on the
/// edited original view, mimicking a model fine-tuned on the edit.
pub struct EditPredictors {
    targets: Tensor,
    predictors: Vec<Box<dyn NoisePredictor>>,
}

impl EditPredictors {
    /// `views` is `[K, ..]`. A `guidance_scale` of 1 uses the conditional
    /// oracle alone; other values blend it with an oracle centred on the
    /// unedited view.
    pub fn new(views: &Tensor, edit: &EditOperator, sigma2: f64, guidance_scale: f64) -> Result<Self> {
        let targets = edit.apply(views)?;
        let mut predictors: Vec<Box<dyn NoisePredictor>> = Vec::with_capacity(views.shape()[0]);
        for k in 0..views.shape()[0] {
            let cond = GaussianOracle::new(OracleMean::Field(targets.index_axis0(k)?), sigma2)?;
            if guidance_scale == 1.0 {
                predictors.push(Box::new(cond));
            } else {
                let uncond = GaussianOracle::new(OracleMean::Field(views.index_axis0(k)?), sigma2)?;
                predictors.push(Box::new(ClassifierFreeGuidance::new(cond, uncond, guidance_scale)?));
            }
        }
        Ok(Self {
            targets,
            predictors,
        })
    }

    /// Edited original views, `[K, ..]`.
    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn views(&self) -> usize {
        self.predictors.len()
    }

    pub fn for_view(&self, k: usize) -> Result<&dyn NoisePredictor> {
        self.predictors
            .get(k)
            .map(|p| p.as_ref())
            .ok_or(Error::IndexOutOfRange {
                what: "view",
                index: k,
                bound: self.predictors.len(),
            })
    }
}

impl NoisePredictor for EditPredictors {
    /// Dispatches on `cond.view`.
    fn predict(&self, schedule: &DiffusionSchedule, z_t: &Tensor, t: usize, cond: &Conditioning) -> Result<Tensor> {
        let k = cond
            .view
            .ok_or_else(|| Error::Contract("edit predictors need a view in the conditioning".into()))?;
        self.for_view(k)?.predict(schedule, z_t, t, cond)
    }
}
