//! View-aware position encoding.
//!
//! A two-layer perceptron maps the 16 flattened extrinsic values of a camera
//! to an embedding that is added to the sinusoidal time embedding. Gradients
//! are written out by hand; the tests check them against central differences.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, RngState, Tensor};

pub const POSE_DIM: usize = 16;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 64;
/// Upper bound on |d/dx silu(x)| (the true maximum is about 1.0998).
pub const SILU_SLOPE_BOUND: f64 = 1.1;
const TIME_BASE_PERIOD: f64 = 10_000.0;

/// Row-major 4x4 world-to-camera matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    extrinsic: [f64; POSE_DIM],
}

impl CameraPose {
    pub fn identity() -> Self {
        Self::from_rigid([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    pub fn from_extrinsic(extrinsic: [f64; POSE_DIM]) -> Result<Self> {
        if extrinsic.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("extrinsic", "values must be finite"));
        }
        Ok(Self { extrinsic })
    }

    pub fn from_rigid(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Self {
        let mut m = [0.0; POSE_DIM];
        for r in 0..3 {
            m[r * 4..r * 4 + 3].copy_from_slice(&rotation[r]);
            m[r * 4 + 3] = translation[r];
        }
        m[15] = 1.0;
        Self { extrinsic: m }
    }

    /// Camera on a sphere of `radius` around the origin, looking at it.
    pub fn orbit(azimuth: f64, elevation: f64, radius: f64) -> Self {
        let (sa, ca) = azimuth.sin_cos();
        let (se, ce) = elevation.sin_cos();
        let eye = [radius * ce * sa, radius * se, radius * ce * ca];
        // forward points from the eye to the origin
        let f = [-eye[0] / radius, -eye[1] / radius, -eye[2] / radius];
        let up = [0.0, 1.0, 0.0];
        let mut r = cross(f, up);
        let rn = norm3(r);
        r = [r[0] / rn, r[1] / rn, r[2] / rn];
        let u = cross(r, f);
        let rot = [r, u, [-f[0], -f[1], -f[2]]];
        let t = [
            -dot3(rot[0], eye),
            -dot3(rot[1], eye),
            -dot3(rot[2], eye),
        ];
        Self::from_rigid(rot, t)
    }

    pub fn extrinsic(&self) -> &[f64; POSE_DIM] {
        &self.extrinsic
    }

    pub fn has_rigid_bottom_row(&self, tol: f64) -> bool {
        let b = &self.extrinsic[12..];
        b[0].abs() <= tol && b[1].abs() <= tol && b[2].abs() <= tol && (b[3] - 1.0).abs() <= tol
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// `x * sigmoid(x)`.
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn slope_bound(self) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => SILU_SLOPE_BOUND,
        }
    }
}

/// `layer2(act(layer1(pose)))`. Weights are row-major `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEncoder {
    hidden: usize,
    embed: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    activation: Activation,
    init_seed: Option<u64>,
}

/// Gradients with the same layout as the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    pose_dim: usize,
    hidden: usize,
    embed: usize,
    activation: Activation,
    init_seed: Option<u64>,
}

impl ViewEncoder {
    pub fn zeros(hidden: usize, embed: usize, activation: Activation) -> Result<Self> {
        if hidden == 0 || embed == 0 {
            return Err(Error::param("width", "hidden and embedding widths must be >= 1"));
        }
        Ok(Self {
            hidden,
            embed,
            w1: vec![0.0; hidden * POSE_DIM],
            b1: vec![0.0; hidden],
            w2: vec![0.0; embed * hidden],
            b2: vec![0.0; embed],
            activation,
            init_seed: None,
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(hidden: usize, embed: usize, activation: Activation, seed: u64) -> Result<Self> {
        let mut enc = Self::zeros(hidden, embed, activation)?;
        let mut rng = RngState::new(seed, 0);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in v {
                *x = (2.0 * rng.next_f64() - 1.0) * bound;
            }
        };
        fill(&mut enc.w1, POSE_DIM);
        fill(&mut enc.b1, POSE_DIM);
        fill(&mut enc.w2, hidden);
        fill(&mut enc.b2, hidden);
        enc.init_seed = Some(seed);
        Ok(enc)
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn embed_width(&self) -> usize {
        self.embed
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::param(
                "params",
                format!("expected {} values, got {}", self.num_params(), flat.len()),
            ));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    fn forward(&self, x: &[f64; POSE_DIM]) -> Forward {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * POSE_DIM..(h + 1) * POSE_DIM];
                self.b1[h] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let act: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
        let out = (0..self.embed)
            .map(|e| {
                let row = &self.w2[e * self.hidden..(e + 1) * self.hidden];
                self.b2[e] + row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        Forward { pre, act, out }
    }

    pub fn encode(&self, pose: &CameraPose) -> Vec<f64> {
        self.forward(pose.extrinsic()).out
    }

    /// Parameter gradients of `sum(upstream * encode(pose))`.
    pub fn backward(&self, pose: &CameraPose, upstream: &[f64]) -> Result<EncoderGrads> {
        if upstream.len() != self.embed {
            return Err(Error::param(
                "upstream",
                format!("expected width {}, got {}", self.embed, upstream.len()),
            ));
        }
        let x = pose.extrinsic();
        let fwd = self.forward(x);
        let mut g = EncoderGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.w2.len()],
            b2: upstream.to_vec(),
        };
        let mut d_act = vec![0.0; self.hidden];
        for (e, &u) in upstream.iter().enumerate() {
            let row = e * self.hidden;
            for h in 0..self.hidden {
                g.w2[row + h] = u * fwd.act[h];
                d_act[h] += u * self.w2[row + h];
            }
        }
        for h in 0..self.hidden {
            let d_pre = d_act[h] * self.activation.derivative(fwd.pre[h]);
            g.b1[h] = d_pre;
            for (i, xi) in x.iter().enumerate() {
                g.w1[h * POSE_DIM + i] = d_pre * xi;
            }
        }
        Ok(g)
    }

    /// `||W2||_2 * ||W1||_2 * slope(activation)`, a Lipschitz constant of
    /// `encode` with respect to the pose.
    pub fn lipschitz_bound(&self) -> f64 {
        spectral_norm(&self.w1, self.hidden, POSE_DIM)
            * spectral_norm(&self.w2, self.embed, self.hidden)
            * self.activation.slope_bound()
    }

    /// Writes `w1.bin`, `b1.bin`, `w2.bin`, `b2.bin` and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tensor::save(dir.join("w1.bin"), &Tensor::new(vec![self.hidden, POSE_DIM], self.w1.clone())?)?;
        tensor::save(dir.join("b1.bin"), &Tensor::new(vec![self.hidden], self.b1.clone())?)?;
        tensor::save(dir.join("w2.bin"), &Tensor::new(vec![self.embed, self.hidden], self.w2.clone())?)?;
        tensor::save(dir.join("b2.bin"), &Tensor::new(vec![self.embed], self.b2.clone())?)?;
        let manifest = Manifest {
            pose_dim: POSE_DIM,
            hidden: self.hidden,
            embed: self.embed,
            activation: self.activation,
            init_seed: self.init_seed,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.pose_dim != POSE_DIM {
            return Err(Error::param("pose_dim", format!("expected {POSE_DIM}, got {}", m.pose_dim)));
        }
        let mut enc = Self::zeros(m.hidden, m.embed, m.activation)?;
        enc.init_seed = m.init_seed;
        let expect = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
            let t = tensor::load(dir.join(name))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: t.shape().to_vec(),
                });
            }
            Ok(t.into_data())
        };
        enc.w1 = expect("w1.bin", vec![m.hidden, POSE_DIM])?;
        enc.b1 = expect("b1.bin", vec![m.hidden])?;
        enc.w2 = expect("w2.bin", vec![m.embed, m.hidden])?;
        enc.b2 = expect("b2.bin", vec![m.embed])?;
        Ok(enc)
    }
}

/// Largest singular value of a row-major `rows x cols` matrix by power
/// iteration on `A^T A`.
fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..500 {
        let av: Vec<f64> = (0..rows)
            .map(|r| a[r * cols..(r + 1) * cols].iter().zip(&v).map(|(x, y)| x * y).sum())
            .collect();
        let mut atav = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                atav[c] += a[r * cols + c] * av[r];
            }
        }
        let n = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        let next = n.sqrt();
        v = atav.iter().map(|x| x / n).collect();
        if (next - sigma).abs() <= 1e-14 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

pub fn encode_view(encoder: &ViewEncoder, pose: &CameraPose) -> Vec<f64> {
    encoder.encode(pose)
}

/// Sinusoidal embedding `[sin(t f_0..), cos(t f_0..)]` with
/// `f_i = 10000^(-i / (dim / 2))`. `dim` must be even.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::param("dim", format!("time embedding width must be even and >= 2, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(TIME_BASE_PERIOD.ln()) * i as f64 / half as f64).exp())
        .collect();
    Ok(freqs
        .iter()
        .map(|f| (t * f).sin())
        .chain(freqs.iter().map(|f| (t * f).cos()))
        .collect())
}

/// Time embedding plus the camera embedding as a residual.
pub fn combined_embedding(encoder: &ViewEncoder, pose: &CameraPose, t: f64, dim: usize) -> Result<Vec<f64>> {
    if encoder.embed_width() != dim {
        return Err(Error::param(
            "dim",
            format!("encoder width {} does not match time embedding width {dim}", encoder.embed_width()),
        ));
    }
    let mut emb = time_embedding(t, dim)?;
    for (e, v) in emb.iter_mut().zip(encoder.encode(pose)) {
        *e += v;
    }
    Ok(emb)
}

/// Mean squared error between predicted and target noise.
pub fn diffusion_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    predicted.ensure_same_shape(target)?;
    let n = predicted.len() as f64;
    Ok(predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`diffusion_loss`] with respect to `predicted`.
pub fn diffusion_loss_grad(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    let n = predicted.len() as f64;
    predicted.zip_map(target, |p, t| 2.0 * (p - t) / n)
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub encoder: ViewEncoder,
    /// Loss before each update plus the final loss (`steps + 1` entries).
    pub losses: Vec<f64>,
}

fn dataset_loss_and_grad(
    encoder: &ViewEncoder,
    dataset: &[(CameraPose, Vec<f64>)],
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = dataset.len() as f64;
    let d = encoder.embed_width() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; if with_grad { encoder.num_params() } else { 0 }];
    for (pose, target) in dataset {
        if target.len() != encoder.embed_width() {
            return Err(Error::param(
                "target",
                format!("expected width {}, got {}", encoder.embed_width(), target.len()),
            ));
        }
        let out = encoder.encode(pose);
        let diff: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
        loss += diff.iter().map(|x| x * x).sum::<f64>() / (d * n);
        if with_grad {
            let upstream: Vec<f64> = diff.iter().map(|x| 2.0 * x / (d * n)).collect();
            for (g, v) in grad.iter_mut().zip(encoder.backward(pose, &upstream)?.flatten()) {
                *g += v;
            }
        }
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent on the mean squared embedding error.
pub fn train_encoder_toy(
    encoder: &ViewEncoder,
    dataset: &[(CameraPose, Vec<f64>)],
    steps: usize,
    lr: f64,
) -> Result<TrainingOutcome> {
    if dataset.is_empty() {
        return Err(Error::param("dataset", "must be non-empty"));
    }
    let mut enc = encoder.clone();
    let mut params = enc.params();
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, grad) = dataset_loss_and_grad(&enc, dataset, step < steps)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        if step == steps {
            break;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        enc.set_params(&params)?;
    }
    Ok(TrainingOutcome { encoder: enc, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_constructors_have_homogeneous_bottom_row() {
        assert!(CameraPose::identity().has_rigid_bottom_row(1e-12));
        let p = CameraPose::orbit(0.7, 0.2, 3.0);
        assert!(p.has_rigid_bottom_row(1e-9));
        // rotation block is orthonormal
        let m = p.extrinsic();
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|k| m[a * 4 + k] * m[b * 4 + k]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
        // the origin lands on the optical axis at distance `radius`
        assert!((m[3]).abs() < 1e-12 && (m[7]).abs() < 1e-12);
        assert!((m[11] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_extrinsic_rejected() {
        let mut e = *CameraPose::identity().extrinsic();
        e[3] = f64::INFINITY;
        assert!(CameraPose::from_extrinsic(e).is_err());
    }

    #[test]
    fn zero_encoder_outputs_zero() {
        let enc = ViewEncoder::zeros(DEFAULT_HIDDEN, DEFAULT_EMBED, Activation::Silu).unwrap();
        assert!(enc.encode(&CameraPose::orbit(1.0, 0.3, 2.0)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_poses_get_distinct_embeddings() {
        let enc = ViewEncoder::random(DEFAULT_HIDDEN, DEFAULT_EMBED, Activation::Silu, 42).unwrap();
        let a = enc.encode(&CameraPose::identity());
        let b = enc.encode(&CameraPose::orbit(0.5, 0.0, 1.0));
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 1e-6);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let enc = ViewEncoder::random(8, 4, Activation::Silu, 1).unwrap();
        assert!(enc.w1.iter().all(|w| w.abs() <= 0.25));
        assert!(enc.w2.iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
        assert_ne!(enc, ViewEncoder::random(8, 4, Activation::Silu, 2).unwrap());
        assert_eq!(enc, ViewEncoder::random(8, 4, Activation::Silu, 1).unwrap());
    }

    #[test]
    fn silu_slope_bound_holds() {
        let max = (0..200_000)
            .map(|i| Activation::Silu.derivative(-20.0 + i as f64 * 2e-4))
            .fold(f64::MIN, f64::max);
        assert!(max > 1.09 && max < SILU_SLOPE_BOUND, "{max}");
    }

    #[test]
    fn time_embedding_range_and_width() {
        let e = time_embedding(500.0, 64).unwrap();
        assert_eq!(e.len(), 64);
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        // first frequency is 1
        assert_eq!(e[0], 500f64.sin());
        assert_eq!(e[32], 500f64.cos());
        assert!(time_embedding(1.0, 63).is_err());
        assert!(time_embedding(1.0, 0).is_err());
    }

    #[test]
    fn combined_embedding_residual() {
        let zero = ViewEncoder::zeros(DEFAULT_HIDDEN, 64, Activation::Silu).unwrap();
        let p = CameraPose::orbit(0.1, 0.1, 2.0);
        assert_eq!(combined_embedding(&zero, &p, 500.0, 64).unwrap(), time_embedding(500.0, 64).unwrap());

        let enc = ViewEncoder::random(DEFAULT_HIDDEN, 64, Activation::Silu, 3).unwrap();
        let q = CameraPose::orbit(1.1, -0.2, 2.0);
        let a = combined_embedding(&enc, &p, 250.0, 64).unwrap();
        let b = combined_embedding(&enc, &q, 250.0, 64).unwrap();
        let (ea, eb) = (enc.encode(&p), enc.encode(&q));
        for i in 0..64 {
            assert!(((a[i] - b[i]) - (ea[i] - eb[i])).abs() < 1e-12);
        }
        assert!(combined_embedding(&enc, &p, 1.0, 32).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let a = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1).unwrap();
        assert_eq!(diffusion_loss(&a, &a).unwrap(), 0.0);
        let zeros = Tensor::zeros(&[3, 4]).unwrap();
        let ones = Tensor::full(&[3, 4], 1.0).unwrap();
        assert_eq!(diffusion_loss(&ones, &zeros).unwrap(), 1.0);
        assert!(diffusion_loss(&ones, &Tensor::zeros(&[12]).unwrap()).is_err());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let enc = ViewEncoder::random(8, 6, Activation::Silu, 5).unwrap();
        let data = vec![(CameraPose::orbit(0.3, 0.1, 2.0), vec![0.5; 6])];
        let out = train_encoder_toy(&enc, &data, 10, 0.0).unwrap();
        assert_eq!(out.encoder, enc);
        assert_eq!(out.losses.len(), 11);
        assert!(out.losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_dataset_and_divergence() {
        let enc = ViewEncoder::random(8, 6, Activation::Identity, 5).unwrap();
        assert!(train_encoder_toy(&enc, &[], 10, 0.1).is_err());
        let data = vec![(CameraPose::orbit(0.3, 0.1, 50.0), vec![1e3; 6])];
        match train_encoder_toy(&enc, &data, 200, 10.0) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = ViewEncoder::random(12, 10, Activation::Silu, 77).unwrap();
        enc.save(dir.path()).unwrap();
        assert_eq!(ViewEncoder::load(dir.path()).unwrap(), enc);
        let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"activation\": \"silu\""));
        assert!(manifest.contains("\"init_seed\": 77"));
    }
}
