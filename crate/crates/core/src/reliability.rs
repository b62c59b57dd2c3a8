//! Splitting points into a consistent set, where the clustering pseudo-label
//! and a confident network prediction agree, and the ambiguous remainder.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Default confidence threshold.
pub const DEFAULT_TAU: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    pub mask: Vec<bool>,
    pub tau: f64,
    pub n_consistent: usize,
    pub n_ambiguous: usize,
}

impl ReliabilityMask {
    pub fn from_mask(mask: Vec<bool>, tau: f64) -> Self {
        let n_consistent = mask.iter().filter(|&&m| m).count();
        let n_ambiguous = mask.len() - n_consistent;
        ReliabilityMask {
            mask,
            tau,
            n_consistent,
            n_ambiguous,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn consistent_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.n_consistent as f64 / self.mask.len() as f64
        }
    }
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<usize> {
    probs.axis_iter(Axis(0)).map(argmax).collect()
}

/// A point is consistent iff its predicted class equals its pseudo-label and
/// the probability of that class reaches `tau`.
pub fn reliability_mask(probs: ArrayView2<f64>, pseudo: &[usize], tau: f64) -> Result<ReliabilityMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if probs.nrows() != pseudo.len() {
        return Err(Error::data("probability rows and pseudo-labels differ in length"));
    }
    let mask = probs
        .axis_iter(Axis(0))
        .zip(pseudo)
        .map(|(row, &l)| l < row.len() && argmax(row) == l && row[l] >= tau)
        .collect();
    Ok(ReliabilityMask::from_mask(mask, tau))
}

/// Consistent and ambiguous subsets, original order kept within each.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSets {
    pub consistent: Vec<usize>,
    pub consistent_labels: Vec<usize>,
    pub consistent_features: Array2<f64>,
    pub ambiguous: Vec<usize>,
    pub ambiguous_labels: Vec<usize>,
    pub ambiguous_features: Array2<f64>,
}

pub fn split(features: ArrayView2<f64>, pseudo: &[usize], mask: &ReliabilityMask) -> Result<SplitSets> {
    if features.nrows() != pseudo.len() || pseudo.len() != mask.len() {
        return Err(Error::data("features, pseudo-labels and mask differ in length"));
    }
    let (consistent, ambiguous): (Vec<usize>, Vec<usize>) = (0..mask.len()).partition(|&i| mask.mask[i]);
    Ok(SplitSets {
        consistent_labels: consistent.iter().map(|&i| pseudo[i]).collect(),
        consistent_features: features.select(Axis(0), &consistent),
        ambiguous_labels: ambiguous.iter().map(|&i| pseudo[i]).collect(),
        ambiguous_features: features.select(Axis(0), &ambiguous),
        consistent,
        ambiguous,
    })
}
