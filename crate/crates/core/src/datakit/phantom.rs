//! Procedural head-like slices with elliptical lesions and exact masks.
//!
//! Each scene is rendered twice through two monotone intensity curves so
//! that the pair of renderings can stand in for two imaging modalities.

use std::fs;
use std::ops::Range;
use std::path::Path;

use dfseg_nn::Scalar;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::imageio;
use super::manifest::{DatasetManifest, Domain, SampleRef};
use crate::error::{Error, Result};
use crate::{Image, Mask};

/// `y = offset + gain · t^gamma`, monotone for positive gain and gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityCurve {
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
}

impl ModalityCurve {
    pub fn apply(&self, t: f64) -> f64 {
        self.offset + self.gain * t.max(0.0).powf(self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub canvas_size: usize,
    /// Inclusive lesion count range for non-healthy scenes.
    pub lesion_count_range: [usize; 2],
    /// Inclusive range of lesion semi-axes, in pixels.
    pub lesion_axes_range: [f64; 2],
    pub background_texture_scale: f64,
    pub noise_sigma: f64,
    pub healthy_fraction: f64,
    /// Intensity curves for modality A and modality B.
    pub modality_curves: [ModalityCurve; 2],
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            canvas_size: 256,
            lesion_count_range: [1, 3],
            lesion_axes_range: [6.0, 24.0],
            background_texture_scale: 0.08,
            noise_sigma: 0.02,
            healthy_fraction: 0.1,
            modality_curves: [
                ModalityCurve {
                    gamma: 1.0,
                    gain: 1.0,
                    offset: 0.0,
                },
                ModalityCurve {
                    gamma: 2.2,
                    gain: 0.85,
                    offset: 0.1,
                },
            ],
        }
    }
}

impl PhantomParams {
    /// Defaults scaled to a smaller canvas.
    pub fn with_canvas(size: usize) -> Self {
        let k = size as f64 / 256.0;
        let d = Self::default();
        Self {
            canvas_size: size,
            lesion_axes_range: [
                (d.lesion_axes_range[0] * k).max(1.5),
                (d.lesion_axes_range[1] * k).max(2.0),
            ],
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.canvas_size;
        let [cmin, cmax] = self.lesion_count_range;
        let [amin, amax] = self.lesion_axes_range;
        if s < 8 {
            return Err(Error::validation(format!("canvas_size {s} is below 8")));
        }
        if cmin == 0 || cmin > cmax {
            return Err(Error::validation(format!(
                "lesion_count_range [{cmin}, {cmax}] must be non-empty with min >= 1"
            )));
        }
        if !(amin >= 1.0 && amin <= amax && amax < s as f64 / 2.0) {
            return Err(Error::validation(format!(
                "lesion_axes_range [{amin}, {amax}] must satisfy 1 <= min <= max < canvas_size/2"
            )));
        }
        if !(0.0..=1.0).contains(&self.healthy_fraction) {
            return Err(Error::validation("healthy_fraction must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.background_texture_scale >= 0.0) {
            return Err(Error::validation(
                "noise_sigma and background_texture_scale must be >= 0",
            ));
        }
        for c in &self.modality_curves {
            if !(c.gamma > 0.0 && c.gain > 0.0) {
                return Err(Error::validation("modality curves need positive gamma and gain"));
            }
        }
        Ok(())
    }
}

/// One rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScene<T> {
    pub modality_a: Image<T>,
    pub modality_b: Image<T>,
    /// Exact union of the painted lesion ellipses.
    pub mask: Mask,
    pub lesion_count: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Renders scene `index` of the stream selected by `seed`.
pub fn render_scene<T: Scalar>(params: &PhantomParams, seed: u64, index: u64) -> PhantomScene<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = params.canvas_size as f64;
    let n = params.canvas_size;

    let head = Ellipse {
        cy: s / 2.0 + rng.random_range(-0.03..=0.03) * s,
        cx: s / 2.0 + rng.random_range(-0.03..=0.03) * s,
        a: s * rng.random_range(0.38..=0.44),
        b: s * rng.random_range(0.40..=0.46),
        cos: 1.0,
        sin: 0.0,
    };
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-1.0..=1.0),
                rng.random_range(1.0..=4.0) * std::f64::consts::TAU / s,
                rng.random_range(1.0..=4.0) * std::f64::consts::TAU / s,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let healthy = rng.random::<f64>() < params.healthy_fraction;
    let [cmin, cmax] = params.lesion_count_range;
    let [amin, amax] = params.lesion_axes_range;
    let count = if healthy { 0 } else { rng.random_range(cmin..=cmax) };
    let inner = head.a.min(head.b);
    let lesions: Vec<Ellipse> = (0..count)
        .map(|_| {
            let a = rng.random_range(amin..=amax);
            let b = rng.random_range(amin..=amax);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let reach = (inner - a.max(b) - 2.0).max(0.0);
            let r = reach * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            // centres on pixel centres so every lesion covers at least one pixel
            Ellipse {
                cy: (head.cy + r * phi.sin()).floor() + 0.5,
                cx: (head.cx + r * phi.cos()).floor() + 0.5,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();
    let lesion_offset = rng.random_range(0.30..=0.40);

    let mut tissue = Array2::<f64>::zeros((n, n));
    let mut mask = Mask::from_elem((n, n), false);
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            if !head.contains(py, px) {
                continue;
            }
            let texture: f64 = waves
                .iter()
                .map(|&(amp, fy, fx, ph)| amp * (fy * py + fx * px + ph).sin())
                .sum();
            let mut t = 0.45 + params.background_texture_scale * texture / 2.0;
            if lesions.iter().any(|l| l.contains(py, px)) {
                mask[[y, x]] = true;
                t += lesion_offset;
            }
            tissue[[y, x]] = t.clamp(0.0, 1.0);
        }
    }

    let noise = Normal::new(0.0, params.noise_sigma.max(1e-12)).expect("finite sigma");
    let mut render = |curve: &ModalityCurve, grain: f64| -> Image<T> {
        Array2::from_shape_fn((n, n), |(y, x)| {
            let fine = grain * ((y as f64) * 1.7).sin() * ((x as f64) * 1.3).cos();
            let sigma = if params.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            T::lit((curve.apply(tissue[[y, x]]) + fine + sigma).clamp(0.0, 1.0))
        })
    };
    let modality_a = render(&params.modality_curves[0], 0.0);
    let modality_b = render(&params.modality_curves[1], 0.03);

    PhantomScene {
        modality_a,
        modality_b,
        mask,
        lesion_count: count,
    }
}

/// Both renderings of a generated set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSet {
    /// Modality A renderings, tagged `MR`.
    pub modality_a: DatasetManifest,
    /// Modality B renderings of the same scenes, tagged `CT`.
    pub modality_b: DatasetManifest,
}

/// Renders `n` scenes into `out_dir` and writes `manifest_a.json` and
/// `manifest_b.json` next to the images.
pub fn generate_phantom_dataset(n: usize, params: &PhantomParams, seed: u64, out_dir: &Path) -> Result<PhantomSet> {
    generate_phantom_scenes(0..n, params, seed, out_dir)
}

/// Like [`generate_phantom_dataset`] for an arbitrary range of scene
/// indices, so disjoint pools can be drawn from one seed.
pub fn generate_phantom_scenes(
    indices: Range<usize>,
    params: &PhantomParams,
    seed: u64,
    out_dir: &Path,
) -> Result<PhantomSet> {
    params.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut a = Vec::with_capacity(indices.len());
    let mut b = Vec::with_capacity(indices.len());
    for i in indices {
        let scene = render_scene::<f64>(params, seed, i as u64);
        let id = format!("phantom_{i:05}");
        let mask_path = out_dir.join(format!("{id}_mask.png"));
        imageio::write_mask(&mask_path, &scene.mask)?;
        for (modality, image, domain, list) in [
            ("a", &scene.modality_a, Domain::Mr, &mut a),
            ("b", &scene.modality_b, Domain::Ct, &mut b),
        ] {
            let image_path = out_dir.join(format!("{id}_{modality}.png"));
            imageio::write_gray16(&image_path, image)?;
            list.push(SampleRef {
                id: if modality == "a" { id.clone() } else { format!("{id}_b") },
                image_path,
                mask_path: Some(mask_path.clone()),
                domain,
                source: "phantom".into(),
                split: None,
                fidelity: None,
            });
        }
    }
    let set = PhantomSet {
        modality_a: DatasetManifest::new(a),
        modality_b: DatasetManifest::new(b),
    };
    set.modality_a.save(&out_dir.join("manifest_a.json"))?;
    set.modality_b.save(&out_dir.join("manifest_b.json"))?;
    Ok(set)
}
