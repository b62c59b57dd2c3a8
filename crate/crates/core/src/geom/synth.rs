use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

/// Parameters of a synthetic Gaussian-blob scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_classes: usize,
    pub points_per_class: usize,
    /// Minimum pairwise distance between class centers in joint xyz+rgb space.
    pub separation: f64,
    /// Per-coordinate standard deviation around the class center.
    pub noise: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("synthetic scene needs at least 2 classes"));
        }
        if self.points_per_class < 1 {
            return Err(Error::config("synthetic scene needs at least 1 point per class"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::config("separation must be finite and non-negative"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config("noise must be finite and non-negative"));
        }
        Ok(())
    }
}

const COLOR_LO: f64 = 0.1;
const COLOR_HI: f64 = 0.9;
const TRIES_PER_SCALE: usize = 2_000;

/// Class centers as `[x, y, z, r, g, b]`, drawn by rejection sampling.
///
/// Positions start in the unit cube; the cube grows until the requested
/// separation fits. Colors stay inside `[0.1, 0.9]`.
pub fn class_centers(n_classes: usize, separation: f64, seed: u64) -> Vec<[f64; 6]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extent = 1.0_f64;
    loop {
        let mut centers: Vec<[f64; 6]> = Vec::with_capacity(n_classes);
        let mut tries = 0;
        while centers.len() < n_classes && tries < TRIES_PER_SCALE {
            tries += 1;
            let c: [f64; 6] = std::array::from_fn(|i| {
                if i < 3 {
                    rng.random_range(0.0..extent)
                } else {
                    rng.random_range(COLOR_LO..COLOR_HI)
                }
            });
            let ok = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if ok {
                centers.push(c);
            }
        }
        if centers.len() == n_classes {
            return centers;
        }
        extent *= 1.25;
    }
}

fn sample_scene(centers: &[[f64; 6]], params: &SynthParams, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = centers.len() * params.points_per_class;
    let mut positions = Array2::zeros((n, 3));
    let mut colors = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    let normal = (params.noise > 0.0).then(|| Normal::new(0.0, params.noise).expect("finite noise"));
    let mut row = 0;
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..params.points_per_class {
            for d in 0..6 {
                let eps = normal.as_ref().map_or(0.0, |nd| nd.sample(&mut rng));
                if d < 3 {
                    positions[[row, d]] = c[d] + eps;
                } else {
                    colors[[row, d - 3]] = (c[d] + eps).clamp(0.0, 1.0);
                }
            }
            labels.push(k);
            row += 1;
        }
    }
    PointCloud {
        positions,
        colors: Some(colors),
        gt_labels: Some(labels),
        superpoint_ids: None,
    }
}

/// One scene of Gaussian class blobs in joint position+color space.
pub fn synth_scene(params: &SynthParams) -> Result<PointCloud> {
    params.validate()?;
    let centers = class_centers(params.n_classes, params.separation, params.seed);
    Ok(sample_scene(&centers, params, params.seed))
}

/// A suite of scenes sharing class centers (drawn from `params.seed`) but with
/// independent point samples, so class identity is consistent across scenes.
pub fn synth_suite(params: &SynthParams, n_scenes: usize, sample_seed: u64) -> Result<Vec<PointCloud>> {
    params.validate()?;
    let centers = class_centers(params.n_classes, params.separation, params.seed);
    Ok((0..n_scenes as u64)
        .map(|i| {
            let seed = sample_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i.wrapping_mul(0xBF58_476D_1CE4_E5B9))
                .wrapping_add(1);
            sample_scene(&centers, params, seed)
        })
        .collect())
}
