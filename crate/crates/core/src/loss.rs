//! Objective terms and their analytic gradients.
//!
//! * `L_ce`: cross-entropy of head probabilities against pseudo-labels.
//! * `L_sl`: smoothed Euclidean distance between effective consistent
//!   prototypes and this batch's consistent class centroids.
//! * `L_cr`: KL divergence between the temperature-softmax rows of the
//!   consistent and ambiguous prototype Gram matrices, averaged over `K'²`.
//!
//! [`batch_objective`] composes all three for one training batch and returns
//! the gradient streams on logits and on the normalized features.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protolib::{batch_centroids, effective_prototypes, BatchCentroids, EffectivePrototypes, PrototypeBank};
use crate::reliability::{split, ReliabilityMask};

/// Smoothing inside the square root of the structure distance.
pub const DISTANCE_EPS: f64 = 1e-12;

/// Default similarity temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureVariant {
    /// Prototype vs the batch class centroid.
    Centroid,
    /// Prototype vs every consistent point of the class, averaged per class.
    PerPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub temperature: f64,
    pub variant: StructureVariant,
    pub stop_grad_consistent: bool,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        ObjectiveSettings {
            temperature: DEFAULT_TEMPERATURE,
            variant: StructureVariant::Centroid,
            stop_grad_consistent: false,
        }
    }
}

/// Mean negative log-likelihood and its gradient on the logits.
pub fn cross_entropy(probs: ArrayView2<f64>, pseudo: &[usize]) -> (f64, Array2<f64>) {
    let n = probs.nrows();
    if n == 0 {
        return (0.0, Array2::zeros(probs.raw_dim()));
    }
    let inv = 1.0 / n as f64;
    let mut grad = probs.to_owned();
    let mut loss = 0.0;
    for (i, &l) in pseudo.iter().enumerate() {
        loss -= probs[[i, l]].max(f64::MIN_POSITIVE).ln();
        grad[[i, l]] -= 1.0;
    }
    grad *= inv;
    (loss * inv, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureLoss {
    pub value: f64,
    /// Partial gradient on the effective prototypes.
    pub grad_effective: Array2<f64>,
    /// Partial gradient on the batch centroids (centroid variant).
    pub grad_batch: Array2<f64>,
    /// Partial gradient on consistent point features, in split order (per-point variant).
    pub grad_points: Array2<f64>,
}

/// `Σ_k √(‖μ̃_k − μ̄_k‖² + ε)` over present classes.
pub fn structure_loss(effective: &Array2<f64>, batch: &Array2<f64>, presence: &[bool]) -> StructureLoss {
    let mut grad_effective = Array2::zeros(effective.raw_dim());
    let mut grad_batch = Array2::zeros(effective.raw_dim());
    let mut value = 0.0;
    for k in (0..effective.nrows()).filter(|&k| presence[k]) {
        let diff = &effective.row(k) - &batch.row(k);
        let dist = (diff.dot(&diff) + DISTANCE_EPS).sqrt();
        value += dist;
        let g = &diff / dist;
        grad_effective.row_mut(k).assign(&g);
        grad_batch.row_mut(k).assign(&(-&g));
    }
    StructureLoss {
        value,
        grad_effective,
        grad_batch,
        grad_points: Array2::zeros((0, effective.ncols())),
    }
}

/// `Σ_k mean_{j∈Ω_k} √(‖μ̃_k − f_j‖² + ε)` over classes with consistent points.
pub fn structure_loss_per_point(effective: &Array2<f64>, points: ArrayView2<f64>, labels: &[usize]) -> StructureLoss {
    let l = effective.nrows();
    let mut counts = vec![0usize; l];
    for &k in labels {
        counts[k] += 1;
    }
    let mut grad_effective = Array2::zeros(effective.raw_dim());
    let mut grad_points = Array2::zeros(points.raw_dim());
    let mut value = 0.0;
    for (j, (f, &k)) in points.rows().into_iter().zip(labels).enumerate() {
        let inv = 1.0 / counts[k] as f64;
        let diff = &effective.row(k) - &f;
        let dist = (diff.dot(&diff) + DISTANCE_EPS).sqrt();
        value += dist * inv;
        let g = diff * (inv / dist);
        let mut ge = grad_effective.row_mut(k);
        ge += &g;
        grad_points.row_mut(j).assign(&(-&g));
    }
    StructureLoss {
        value,
        grad_effective,
        grad_batch: Array2::zeros(effective.raw_dim()),
        grad_points,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrices {
    pub e_c: Array2<f64>,
    pub e_a: Array2<f64>,
    /// Row-softmax of `e_c / T`.
    pub p: Array2<f64>,
    /// Row-log-softmax of `e_a / T`.
    pub log_q: Array2<f64>,
    pub temperature: f64,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn similarity_matrices(protos_c: &Array2<f64>, protos_a: &Array2<f64>, temperature: f64) -> SimilarityMatrices {
    let e_c = protos_c.dot(&protos_c.t());
    let e_a = protos_a.dot(&protos_a.t());
    let p = log_softmax_rows(&(&e_c / temperature)).mapv(f64::exp);
    let log_q = log_softmax_rows(&(&e_a / temperature));
    SimilarityMatrices {
        e_c,
        e_a,
        p,
        log_q,
        temperature,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningLoss {
    pub value: f64,
    pub grad_consistent: Array2<f64>,
    pub grad_ambiguous: Array2<f64>,
}

/// `(1/K'²) Σ_ij p_ij (log p_ij − log q_ij)` with gradients on both prototype sets.
pub fn consistent_reasoning_loss(
    sim: &SimilarityMatrices,
    protos_c: &Array2<f64>,
    protos_a: &Array2<f64>,
    stop_grad_consistent: bool,
) -> ReasoningLoss {
    let k = sim.p.nrows();
    if k == 0 {
        return ReasoningLoss {
            value: 0.0,
            grad_consistent: Array2::zeros(protos_c.raw_dim()),
            grad_ambiguous: Array2::zeros(protos_a.raw_dim()),
        };
    }
    let scale = 1.0 / (k * k) as f64;
    let log_p = log_softmax_rows(&(&sim.e_c / sim.temperature));
    let ratio = &log_p - &sim.log_q;
    let value = (&sim.p * &ratio).sum() * scale;

    let grad_consistent = if stop_grad_consistent {
        Array2::zeros(protos_c.raw_dim())
    } else {
        let weighted = &sim.p * &ratio;
        let row_sum = weighted.sum_axis(Axis(1)).insert_axis(Axis(1));
        let g_e = (&weighted - &(&sim.p * &row_sum)) * (scale / sim.temperature);
        (&g_e + &g_e.t()).dot(protos_c)
    };
    let q = sim.log_q.mapv(f64::exp);
    let g_e = (&q - &sim.p) * (scale / sim.temperature);
    let grad_ambiguous = (&g_e + &g_e.t()).dot(protos_a);
    ReasoningLoss {
        value,
        grad_consistent,
        grad_ambiguous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_ce: f64,
    pub l_sl: f64,
    pub l_cr: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_ce, self.l_sl, self.l_cr, self.total].iter().all(|v| v.is_finite())
    }
}

pub fn total_loss(l_ce: f64, l_sl: f64, l_cr: f64, lambda1: f64, lambda2: f64) -> LossReport {
    LossReport {
        l_ce,
        l_sl,
        l_cr,
        total: l_ce + lambda1 * l_sl + lambda2 * l_cr,
        lambda1,
        lambda2,
    }
}

/// Everything one training step needs from the objective.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub report: LossReport,
    /// N×C gradient of the total on the head logits.
    pub grad_logits: Array2<f64>,
    /// N×D gradient of the total on the normalized features.
    pub grad_features: Array2<f64>,
    pub batch: BatchCentroids,
    pub effective_consistent: EffectivePrototypes,
    pub effective_ambiguous: EffectivePrototypes,
}

/// Full objective for one batch. The mask and pseudo-labels are treated as
/// constants; gradients flow through the head probabilities, the batch
/// centroids, and the effective prototypes.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    probs: ArrayView2<f64>,
    features: ArrayView2<f64>,
    pseudo: &[usize],
    mask: &ReliabilityMask,
    bank_c: &PrototypeBank,
    bank_a: &PrototypeBank,
    lambda1: f64,
    lambda2: f64,
    settings: &ObjectiveSettings,
) -> Result<BatchObjective> {
    let n = probs.nrows();
    let l = bank_c.num_classes();
    if features.nrows() != n || pseudo.len() != n || mask.len() != n {
        return Err(Error::data("objective inputs differ in length"));
    }
    if probs.ncols() != l || bank_a.num_classes() != l {
        return Err(Error::config("head width and prototype banks disagree on the label space"));
    }
    if features.ncols() != bank_c.dim() || bank_a.dim() != bank_c.dim() {
        return Err(Error::config("feature width and prototype banks disagree"));
    }
    if let Some(&bad) = pseudo.iter().find(|&&k| k >= l) {
        return Err(Error::data(format!("pseudo-label {bad} outside label space {l}")));
    }

    let (l_ce, grad_logits) = cross_entropy(probs, pseudo);
    let sets = split(features, pseudo, mask)?;
    let batch = batch_centroids(&sets, l);
    let pres_c = batch.consistent.presence();
    let pres_a = batch.ambiguous.presence();
    let eff_c = effective_prototypes(bank_c, batch.consistent.means.view(), &pres_c);
    let eff_a = effective_prototypes(bank_a, batch.ambiguous.means.view(), &pres_a);

    let sl = match settings.variant {
        StructureVariant::Centroid => structure_loss(&eff_c.values, &batch.consistent.means, &pres_c),
        StructureVariant::PerPoint => {
            structure_loss_per_point(&eff_c.values, sets.consistent_features.view(), &sets.consistent_labels)
        }
    };
    let sim = similarity_matrices(&eff_c.values, &eff_a.values, settings.temperature);
    let cr = consistent_reasoning_loss(&sim, &eff_c.values, &eff_a.values, settings.stop_grad_consistent);
    let report = total_loss(l_ce, sl.value, cr.value, lambda1, lambda2);

    let g_eff_c = &sl.grad_effective * lambda1 + &cr.grad_consistent * lambda2;
    let g_eff_a = &cr.grad_ambiguous * lambda2;
    let g_batch_c = eff_c.backward(&g_eff_c) + &sl.grad_batch * lambda1;
    let g_batch_a = eff_a.backward(&g_eff_a);

    let mut grad_features = Array2::zeros(features.raw_dim());
    for (j, (&i, &k)) in sets.consistent.iter().zip(&sets.consistent_labels).enumerate() {
        let inv = 1.0 / batch.consistent.counts[k] as f64;
        let mut g = grad_features.row_mut(i);
        g.scaled_add(inv, &g_batch_c.row(k));
        if settings.variant == StructureVariant::PerPoint {
            g.scaled_add(lambda1, &sl.grad_points.row(j));
        }
    }
    for (&i, &k) in sets.ambiguous.iter().zip(&sets.ambiguous_labels) {
        let inv = 1.0 / batch.ambiguous.counts[k] as f64;
        grad_features.row_mut(i).scaled_add(inv, &g_batch_a.row(k));
    }

    Ok(BatchObjective {
        report,
        grad_logits,
        grad_features,
        batch,
        effective_consistent: eff_c,
        effective_ambiguous: eff_a,
    })
}
