//! Seeded fixtures shared by the benchmarks.

use ndarray::Array2;
use protoseg::nn::{extractor_forward, head_forward, Model};
use protoseg::protolib::{init_banks, PrototypeBank};
use protoseg::reliability::{reliability_mask, ReliabilityMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

pub fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// One training batch: model, inputs, forward outputs, pseudo-labels, mask and banks.
pub struct Batch {
    pub model: Model,
    pub inputs: Array2<f64>,
    pub features: Array2<f64>,
    pub probs: Array2<f64>,
    pub pseudo: Vec<usize>,
    pub mask: ReliabilityMask,
    pub bank_c: PrototypeBank,
    pub bank_a: PrototypeBank,
}

pub fn batch(n: usize, input_dim: usize, feature_dim: usize, classes: usize, seed: u64) -> Batch {
    let model = Model::new(input_dim, &[64, 64], feature_dim, classes, 0.01, seed);
    let inputs = uniform(n, input_dim, seed ^ 1);
    let (features, _) = extractor_forward(&model.extractor, &inputs).expect("valid shapes");
    let probs = head_forward(&model.head, &features).expect("valid shapes");
    let pseudo = labels(n, classes, seed ^ 2);
    // A low threshold keeps both sets populated with a random head.
    let mask = reliability_mask(probs.view(), &pseudo, 1.0 / classes as f64).expect("valid tau");
    let (bank_c, bank_a) = init_banks(&uniform(classes, feature_dim, seed ^ 3), 0.99).expect("valid bank");
    Batch {
        model,
        inputs,
        features,
        probs,
        pseudo,
        mask,
        bank_c,
        bank_a,
    }
}
