use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{channel_means, PointCloud};

/// Photometric augmentation: a global per-channel shift, a global contrast
/// scale about the channel mean, then per-point Gaussian dithering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub shift_range: f64,
    pub contrast_range: f64,
    pub jitter_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            shift_range: 0.0,
            contrast_range: 0.0,
            jitter_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.shift_range, self.contrast_range, self.jitter_sigma]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub fn augment_colors(cloud: &PointCloud, params: &AugmentParams) -> PointCloud {
    let mut out = cloud.clone();
    let Some(colors) = out.colors.as_mut() else {
        log::warn!("augment_colors: cloud has no colors, leaving it unchanged");
        return out;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    if params.shift_range > 0.0 {
        let r = params.shift_range;
        let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-r..=r));
        for mut row in colors.rows_mut() {
            for c in 0..3 {
                row[c] += shift[c];
            }
        }
    }
    if params.contrast_range > 0.0 {
        let r = params.contrast_range;
        let scale = rng.random_range(1.0 - r..=1.0 + r);
        let mean = channel_means(colors);
        for mut row in colors.rows_mut() {
            for c in 0..3 {
                row[c] = (row[c] - mean[c]) * scale + mean[c];
            }
        }
    }
    if params.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, params.jitter_sigma).expect("finite sigma");
        for v in colors.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    colors.mapv_inplace(|v| v.clamp(0.0, 1.0));
    out
}
