//! Synthetic multi-view scene with known correspondences, and the consensus
//! model fitted to per-view latents.
//!
//! Every view is a crop of the canonical plane scaled by a gain:
//! `view[.., y, x] = gain * canonical[.., y + offset_y, x + offset_x]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

const OBSERVATION_STREAM: u64 = 0x0b5e;
const DEFAULT_GAINS: [f64; 4] = [1.0, 0.92, 1.08, 0.96];

/// Canonical-to-view observation map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMap {
    pub offset_y: usize,
    pub offset_x: usize,
    pub gain: f64,
}

impl ViewMap {
    pub fn identity() -> Self {
        Self::with_gain(1.0)
    }

    pub fn with_gain(gain: f64) -> Self {
        Self {
            offset_y: 0,
            offset_x: 0,
            gain,
        }
    }

    fn check(&self, view: usize, geometry: &Geometry) -> Result<()> {
        if self.gain == 0.0 || !self.gain.is_finite() {
            return Err(Error::SingularMap { view });
        }
        if self.offset_y + geometry.view.0 > geometry.canonical.0
            || self.offset_x + geometry.view.1 > geometry.canonical.1
        {
            return Err(Error::param(
                "view_map",
                format!(
                    "view {view}: crop at ({}, {}) of size {:?} exceeds canonical {:?}",
                    self.offset_y, self.offset_x, geometry.view, geometry.canonical
                ),
            ));
        }
        Ok(())
    }

    /// Canonical flat index (within a plane) of view pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, canonical_width: usize) -> usize {
        (y + self.offset_y) * canonical_width + x + self.offset_x
    }
}

/// Spatial sizes of the canonical and view planes, `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub canonical: (usize, usize),
    pub view: (usize, usize),
}

impl Geometry {
    pub fn aligned(height: usize, width: usize) -> Self {
        Self {
            canonical: (height, width),
            view: (height, width),
        }
    }

    fn canonical_plane(&self) -> usize {
        self.canonical.0 * self.canonical.1
    }

    fn view_plane(&self) -> usize {
        self.view.0 * self.view.1
    }

    pub fn check_maps(&self, maps: &[ViewMap]) -> Result<()> {
        if maps.is_empty() {
            return Err(Error::param("view_maps", "at least one view is required"));
        }
        maps.iter().enumerate().try_for_each(|(k, m)| m.check(k, self))
    }

    /// Checks `views` is `[K, .., H, W]` for `K = maps.len()` and returns the
    /// leading shape shared with the canonical tensor.
    pub(crate) fn view_leading<'a>(&self, views: &'a Tensor, maps: &[ViewMap]) -> Result<&'a [usize]> {
        self.check_maps(maps)?;
        let s = views.shape();
        if s.len() < 3 || s[0] != maps.len() || s[s.len() - 2..] != [self.view.0, self.view.1] {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!(
                    "expected [{}, .., {}, {}] per-view latents",
                    maps.len(),
                    self.view.0,
                    self.view.1
                ),
            });
        }
        Ok(&s[1..s.len() - 2])
    }
}

/// Maps one canonical tensor `[.., Hc, Wc]` into every view: `[K, .., H, W]`.
pub fn render(canonical: &Tensor, maps: &[ViewMap], geometry: &Geometry) -> Result<Tensor> {
    geometry.check_maps(maps)?;
    let s = canonical.shape();
    if s.len() < 2 || s[s.len() - 2..] != [geometry.canonical.0, geometry.canonical.1] {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("expected canonical planes of {:?}", geometry.canonical),
        });
    }
    let (cp, (vh, vw), cw) = (geometry.canonical_plane(), geometry.view, geometry.canonical.1);
    let planes = canonical.len() / cp;
    let mut data = Vec::with_capacity(maps.len() * planes * vh * vw);
    for map in maps {
        for plane in canonical.data().chunks(cp) {
            for y in 0..vh {
                for x in 0..vw {
                    data.push(map.gain * plane[map.source(y, x, cw)]);
                }
            }
        }
    }
    let mut shape = vec![maps.len()];
    shape.extend_from_slice(&s[..s.len() - 2]);
    shape.extend_from_slice(&[vh, vw]);
    Tensor::new(shape, data)
}

/// Pulls view `k` back to canonical space: `(values / gain, covered)` with one
/// entry per canonical element; uncovered entries hold 0.
pub(crate) fn pull_back(
    views: &Tensor,
    k: usize,
    map: &ViewMap,
    geometry: &Geometry,
) -> (Vec<f64>, Vec<bool>) {
    let (cp, vp, (vh, vw), cw) = (
        geometry.canonical_plane(),
        geometry.view_plane(),
        geometry.view,
        geometry.canonical.1,
    );
    let view = views.outer_slice(k);
    let planes = view.len() / vp;
    let mut values = vec![0.0; planes * cp];
    let mut covered = vec![false; planes * cp];
    for p in 0..planes {
        for y in 0..vh {
            for x in 0..vw {
                let dst = p * cp + map.source(y, x, cw);
                values[dst] = view[p * vp + y * vw + x] / map.gain;
                covered[dst] = true;
            }
        }
    }
    (values, covered)
}

/// Per-view residuals of a consensus fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// RMS of `view - render(canonical)` for each view.
    pub per_view_residual_rms: Vec<f64>,
    /// Canonical elements observed by at least one view.
    pub covered_elements: usize,
    pub total_elements: usize,
}

impl FitDiagnostics {
    pub fn max_residual_rms(&self) -> f64 {
        self.per_view_residual_rms.iter().copied().fold(0.0, f64::max)
    }
}

/// Fitted canonical content: the stand-in for a retrained 4D model.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub canonical: Tensor,
    pub diagnostics: FitDiagnostics,
}

impl SceneModel {
    pub fn render(&self, maps: &[ViewMap], geometry: &Geometry) -> Result<Tensor> {
        render(&self.canonical, maps, geometry)
    }
}

/// Least-squares consensus `c = sum_k g_k v_k / sum_k g_k^2` over the views
/// covering each canonical element. Uncovered elements are left at 0.
pub fn fit_scene_model(views: &Tensor, maps: &[ViewMap], geometry: &Geometry) -> Result<SceneModel> {
    let leading = geometry.view_leading(views, maps)?.to_vec();
    let planes: usize = leading.iter().product();
    let cp = geometry.canonical_plane();
    let mut num = vec![0.0; planes * cp];
    let mut den = vec![0.0; planes * cp];
    for (k, map) in maps.iter().enumerate() {
        let (values, covered) = pull_back(views, k, map, geometry);
        let g2 = map.gain * map.gain;
        for i in 0..num.len() {
            if covered[i] {
                // g * v = g^2 * (v / g)
                num[i] += g2 * values[i];
                den[i] += g2;
            }
        }
    }
    let covered_elements = den.iter().filter(|&&d| d > 0.0).count();
    let data: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
        .collect();
    let mut shape = leading;
    shape.extend_from_slice(&[geometry.canonical.0, geometry.canonical.1]);
    let canonical = Tensor::new(shape, data)?;

    let rendered = render(&canonical, maps, geometry)?;
    let per_view_residual_rms = (0..maps.len())
        .map(|k| {
            let (a, b) = (views.outer_slice(k), rendered.outer_slice(k));
            let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (ss / a.len() as f64).sqrt()
        })
        .collect();
    Ok(SceneModel {
        canonical,
        diagnostics: FitDiagnostics {
            per_view_residual_rms,
            covered_elements,
            total_elements: num.len(),
        },
    })
}

/// Parameters of the procedural scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub views: usize,
    pub windows: usize,
    pub frames_per_window: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Observation noise standard deviation added to every render.
    pub noise_floor: f64,
    pub seed: u64,
    /// Mean of channel 0; other channels are zero-mean.
    pub base_level: f64,
    pub amplitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            views: 4,
            windows: 6,
            frames_per_window: 8,
            channels: 4,
            height: 16,
            width: 16,
            noise_floor: 0.02,
            seed: 0,
            base_level: 1.0,
            amplitude: 0.5,
        }
    }
}

/// Canonical content with per-frame motion plus the views observing it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `[n, w, C, Hc, Wc]`.
    pub canonical: Tensor,
    pub view_maps: Vec<ViewMap>,
    pub geometry: Geometry,
    pub noise_floor: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn new(
        canonical: Tensor,
        view_maps: Vec<ViewMap>,
        geometry: Geometry,
        noise_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        if canonical.rank() != 5 {
            return Err(Error::InvalidShape {
                shape: canonical.shape().to_vec(),
                reason: "canonical content must be [n, w, C, H, W]".into(),
            });
        }
        if !(noise_floor >= 0.0 && noise_floor.is_finite()) {
            return Err(Error::param("noise_floor", format!("must be >= 0, got {noise_floor}")));
        }
        // validates maps and the canonical plane size
        render(&canonical, &view_maps, &geometry)?;
        Ok(Self {
            canonical,
            view_maps,
            geometry,
            noise_floor,
            seed,
        })
    }

    /// Pixel-aligned views with gains cycling through 1.0, 0.92, 1.08, 0.96
    /// over a smooth travelling pattern.
    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        let dims = [
            spec.windows,
            spec.frames_per_window,
            spec.channels,
            spec.height,
            spec.width,
        ];
        if spec.views == 0 {
            return Err(Error::param("views", "must be >= 1"));
        }
        let (h, w, c, fpw) = (spec.height, spec.width, spec.channels, spec.frames_per_window);
        let tau = std::f64::consts::TAU;
        let canonical = Tensor::from_fn(&dims, |i| {
            let x = i % w;
            let y = (i / w) % h;
            let ch = (i / (w * h)) % c;
            let frame = i / (w * h * c);
            debug_assert!(frame < spec.windows * fpw);
            let t = frame as f64;
            let base = if ch == 0 { spec.base_level } else { 0.0 };
            let wave = (tau * ((ch + 1) as f64 * y as f64 / h as f64 + x as f64 / w as f64)
                + 0.35 * t
                + 0.9 * ch as f64)
                .sin();
            let drift = (tau * 2.0 * x as f64 / w as f64 - 0.2 * t).cos();
            base + spec.amplitude * (wave + 0.5 * drift)
        })?;
        let maps = (0..spec.views)
            .map(|k| ViewMap::with_gain(DEFAULT_GAINS[k % DEFAULT_GAINS.len()]))
            .collect();
        Self::new(
            canonical,
            maps,
            Geometry::aligned(h, w),
            spec.noise_floor,
            spec.seed,
        )
    }

    pub fn views(&self) -> usize {
        self.view_maps.len()
    }
}

/// Renders every view and adds seeded observation noise: `[K, n, w, C, H, W]`.
pub fn render_views(scene: &SyntheticScene) -> Result<Tensor> {
    let mut views = render(&scene.canonical, &scene.view_maps, &scene.geometry)?;
    if scene.noise_floor > 0.0 {
        let root = RngState::new(scene.seed, OBSERVATION_STREAM);
        let stride = views.outer_stride();
        for (k, chunk) in views.data_mut().chunks_mut(stride).enumerate() {
            let mut rng = root.substream(&[k as u64]);
            let mut noise = vec![0.0; chunk.len()];
            rng.fill_normal(&mut noise);
            for (v, e) in chunk.iter_mut().zip(noise) {
                *v += scene.noise_floor * e;
            }
        }
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::standard_normal;

    fn canonical(shape: &[usize], seed: u64) -> Tensor {
        standard_normal(shape, &mut RngState::new(seed, 0)).unwrap()
    }

    #[test]
    fn identity_maps_broadcast_canonical() {
        let c = canonical(&[2, 3, 4, 4], 1);
        let g = Geometry::aligned(4, 4);
        let v = render(&c, &[ViewMap::identity(); 3], &g).unwrap();
        assert_eq!(v.shape(), &[3, 2, 3, 4, 4]);
        for k in 0..3 {
            assert_eq!(v.outer_slice(k), c.data());
        }
    }

    #[test]
    fn gain_two_doubles_values() {
        let c = canonical(&[2, 4, 4], 2);
        let v = render(&c, &[ViewMap::with_gain(2.0)], &Geometry::aligned(4, 4)).unwrap();
        for (a, b) in v.data().iter().zip(c.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn crops_select_shifted_windows() {
        let c = Tensor::from_fn(&[1, 4, 5], |i| i as f64).unwrap();
        let g = Geometry {
            canonical: (4, 5),
            view: (2, 3),
        };
        let map = ViewMap {
            offset_y: 1,
            offset_x: 2,
            gain: 1.0,
        };
        let v = render(&c, &[map], &g).unwrap();
        assert_eq!(v.data(), &[7.0, 8.0, 9.0, 12.0, 13.0, 14.0]);
        let bad = ViewMap {
            offset_y: 3,
            ..map
        };
        assert!(render(&c, &[bad], &g).is_err());
    }

    #[test]
    fn singular_map_rejected() {
        let c = canonical(&[1, 2, 2], 3);
        let g = Geometry::aligned(2, 2);
        let maps = [ViewMap::identity(), ViewMap::with_gain(0.0)];
        assert!(matches!(render(&c, &maps, &g), Err(Error::SingularMap { view: 1 })));
        let views = Tensor::zeros(&[2, 1, 2, 2]).unwrap();
        assert!(matches!(fit_scene_model(&views, &maps, &g), Err(Error::SingularMap { view: 1 })));
    }

    #[test]
    fn noiseless_render_then_fit_recovers_canonical() {
        let c = canonical(&[2, 3, 6, 7], 4);
        let g = Geometry {
            canonical: (6, 7),
            view: (4, 5),
        };
        let maps = [
            ViewMap { offset_y: 0, offset_x: 0, gain: 1.3 },
            ViewMap { offset_y: 2, offset_x: 2, gain: 0.7 },
            ViewMap { offset_y: 0, offset_x: 2, gain: -0.9 },
            ViewMap { offset_y: 2, offset_x: 0, gain: 1.1 },
        ];
        let views = render(&c, &maps, &g).unwrap();
        let model = fit_scene_model(&views, &maps, &g).unwrap();
        // the union of the crops covers the whole canonical plane
        assert_eq!(model.diagnostics.covered_elements, model.diagnostics.total_elements);
        assert!(model.canonical.max_abs_diff(&c).unwrap() <= 1e-9);
        assert!(model.diagnostics.max_residual_rms() <= 1e-12);
        assert!(model.render(&maps, &g).unwrap().max_abs_diff(&views).unwrap() <= 1e-12);
    }

    #[test]
    fn perturbing_one_view_moves_consensus_by_delta_over_k() {
        let c = canonical(&[3, 4, 4], 5);
        let g = Geometry::aligned(4, 4);
        let maps = [ViewMap::identity(); 4];
        let mut views = render(&c, &maps, &g).unwrap();
        let stride = views.outer_stride();
        for v in &mut views.data_mut()[2 * stride..3 * stride] {
            *v += 0.8;
        }
        let model = fit_scene_model(&views, &maps, &g).unwrap();
        let moved = model.canonical.sub(&c).unwrap();
        assert!(moved.data().iter().all(|d| (d - 0.2).abs() < 1e-12));
    }

    #[test]
    fn default_scene_has_expected_layout() {
        let scene = SyntheticScene::from_spec(&SceneSpec::default()).unwrap();
        assert_eq!(scene.canonical.shape(), &[6, 8, 4, 16, 16]);
        assert_eq!(scene.views(), 4);
        let views = render_views(&scene).unwrap();
        assert_eq!(views.shape(), &[4, 6, 8, 4, 16, 16]);
        assert_eq!(views, render_views(&scene).unwrap());
    }
}
