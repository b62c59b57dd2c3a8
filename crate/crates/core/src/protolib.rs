//! Consistent and ambiguous prototype memories maintained by an exponential
//! moving average over per-batch class centroids.
//!
//! Banks are stored frozen. Within a step, losses read the
//! [`EffectivePrototypes`] view, which has the same value as the bank after
//! this step's update but routes gradients only through the batch-centroid
//! term, weighted by `1 − α`.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::cluster::{class_centroids, ClassCentroids};
use crate::error::{Error, Result};
use crate::reliability::SplitSets;

/// Default EMA coefficient.
pub const DEFAULT_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// L×D.
    pub prototypes: Array2<f64>,
    pub alpha: f64,
    pub update_counts: Vec<u64>,
}

impl PrototypeBank {
    pub fn new(prototypes: Array2<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!("EMA alpha must lie in (0, 1), got {alpha}")));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("initial prototypes contain non-finite values"));
        }
        let l = prototypes.nrows();
        Ok(PrototypeBank {
            prototypes,
            alpha,
            update_counts: vec![0; l],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// `row_k ← α·row_k + (1−α)·batch_k` for present classes. Rows with
    /// non-finite batch values are skipped; the number skipped is returned.
    pub fn ema_update(&mut self, batch: ArrayView2<f64>, presence: &[bool]) -> usize {
        assert_eq!(batch.dim(), self.prototypes.dim(), "batch shape must match bank");
        assert_eq!(presence.len(), self.num_classes(), "presence length must match bank");
        let a = self.alpha;
        let mut skipped = 0;
        for (k, &present) in presence.iter().enumerate() {
            if !present {
                continue;
            }
            let b = batch.row(k);
            if b.iter().any(|v| !v.is_finite()) {
                log::warn!("prototype bank: non-finite centroid for class {k}, update skipped");
                skipped += 1;
                continue;
            }
            let mut row = self.prototypes.row_mut(k);
            Zip::from(&mut row).and(&b).for_each(|p, &q| *p = blend(a, *p, q));
            self.update_counts[k] += 1;
        }
        skipped
    }
}

#[inline]
fn blend(alpha: f64, bank: f64, batch: f64) -> f64 {
    alpha * bank + (1.0 - alpha) * batch
}

/// Both banks start at the clustering centers.
pub fn init_banks(centroids: &Array2<f64>, alpha: f64) -> Result<(PrototypeBank, PrototypeBank)> {
    let c = PrototypeBank::new(centroids.clone(), alpha)?;
    let a = c.clone();
    Ok((c, a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchCentroids {
    pub consistent: ClassCentroids,
    pub ambiguous: ClassCentroids,
}

pub fn batch_centroids(split: &SplitSets, num_classes: usize) -> BatchCentroids {
    BatchCentroids {
        consistent: class_centroids(split.consistent_features.view(), &split.consistent_labels, num_classes),
        ambiguous: class_centroids(split.ambiguous_features.view(), &split.ambiguous_labels, num_classes),
    }
}

/// Prototype values used by this step's losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePrototypes {
    pub values: Array2<f64>,
    pub presence: Vec<bool>,
    pub alpha: f64,
}

impl EffectivePrototypes {
    /// Maps a gradient on the effective prototypes to the batch centroids.
    pub fn backward(&self, grad: &Array2<f64>) -> Array2<f64> {
        let mut out = grad * (1.0 - self.alpha);
        for (mut row, &p) in out.rows_mut().into_iter().zip(&self.presence) {
            if !p {
                row.fill(0.0);
            }
        }
        out
    }
}

pub fn effective_prototypes(bank: &PrototypeBank, batch: ArrayView2<f64>, presence: &[bool]) -> EffectivePrototypes {
    assert_eq!(presence.len(), bank.num_classes(), "presence length must match bank");
    let a = bank.alpha;
    let mut values = bank.prototypes.clone();
    for (k, &present) in presence.iter().enumerate() {
        let b = batch.row(k);
        if present && b.iter().all(|v| v.is_finite()) {
            let mut row = values.row_mut(k);
            Zip::from(&mut row).and(&b).for_each(|p, &q| *p = blend(a, *p, q));
        }
    }
    EffectivePrototypes {
        values,
        presence: presence.to_vec(),
        alpha: a,
    }
}
