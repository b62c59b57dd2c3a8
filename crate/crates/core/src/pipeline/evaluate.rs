//! Test-time inference, scoring and the raw-input k-means baseline.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{Config, PrimitiveSource};
use super::data::Scene;
use crate::cluster::{kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::eval::{align_and_score, primitives_to_categories, AlignedScores, ConfusionMatrix, MetricReport};
use crate::nn::{extractor_forward, head_forward, pool_superpoints};
use crate::reliability::argmax_rows;

/// Primitive (head argmax) of every point of a scene. With `pool`, the head
/// sees superpoint-mean features and every member point inherits the result.
pub fn predict_primitives(checkpoint: &Checkpoint, scene: &Scene, pool: bool) -> Result<Vec<usize>> {
    let x = scene.inputs(&checkpoint.input_spec, None)?;
    let (features, _) = extractor_forward(&checkpoint.model.extractor, &x)?;
    if pool {
        let ids = scene.superpoints();
        let pooled = pool_superpoints(&features, ids);
        let per_sp = argmax_rows(head_forward(&checkpoint.model.head, &pooled)?.view());
        return Ok(ids.iter().map(|&s| per_sp[s]).collect());
    }
    let probs = head_forward(&checkpoint.model.head, &features)?;
    Ok(argmax_rows(probs.view()))
}

/// The C×D matrix representing the primitives.
pub fn primitive_centroids(checkpoint: &Checkpoint, source: PrimitiveSource) -> Array2<f64> {
    match source {
        PrimitiveSource::Head => {
            let mut dirs = checkpoint.model.head.linear.weight.t().to_owned();
            for mut row in dirs.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 1e-12 {
                    row /= norm;
                }
            }
            dirs
        }
        PrimitiveSource::ConsistentBank => checkpoint.bank_consistent.prototypes.clone(),
        PrimitiveSource::AmbiguousBank => checkpoint.bank_ambiguous.prototypes.clone(),
    }
}

/// Category of every primitive, from k-means over the primitive centroids.
pub fn category_mapping(checkpoint: &Checkpoint, config: &Config) -> Result<Vec<usize>> {
    primitives_to_categories(
        &primitive_centroids(checkpoint, config.eval.primitive_source),
        config.model.categories,
        config.eval.seed,
        config.eval.kmeans_restarts,
    )
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Per-scene category predictions, before alignment.
    pub predictions: Vec<Vec<usize>>,
    /// `None` when some scene lacks ground truth.
    pub report: Option<MetricReport>,
    /// Category → ground-truth class under the global alignment; empty with
    /// per-scene alignment or without ground truth.
    pub alignment: Vec<usize>,
}

/// Category predictions for every scene.
pub fn predict(config: &Config, checkpoint: &Checkpoint, scenes: &[Scene]) -> Result<Vec<Vec<usize>>> {
    checkpoint.check_compatible(config)?;
    let mapping = category_mapping(checkpoint, config)?;
    scenes
        .par_iter()
        .map(|s| {
            Ok(predict_primitives(checkpoint, s, config.eval.superpoint_pooling)?
                .into_iter().map(|p| mapping[p])
                .collect())
        })
        .collect()
}

fn ground_truth(scenes: &[Scene]) -> Option<Vec<&[usize]>> {
    scenes.iter().map(|s| s.cloud.gt_labels.as_deref()).collect()
}

/// Scores category predictions against ground truth, globally or per scene.
pub fn score(predictions: &[Vec<usize>], gt: &[&[usize]], k: usize, per_scene: bool) -> Result<(MetricReport, Vec<usize>)> {
    if per_scene {
        let mut total = ConfusionMatrix::new(k);
        for (p, g) in predictions.iter().zip(gt) {
            total.merge(&align_and_score(p, g, k)?.confusion);
        }
        Ok((MetricReport::from_confusion(total), Vec::new()))
    } else {
        let pred: Vec<usize> = predictions.iter().flatten().copied().collect();
        let truth: Vec<usize> = gt.iter().flat_map(|g| g.iter().copied()).collect();
        let aligned = align_and_score(&pred, &truth, k)?;
        Ok((MetricReport::from_confusion(aligned.confusion), aligned.assignment.perm))
    }
}

pub fn evaluate(config: &Config, checkpoint: &Checkpoint, scenes: &[Scene]) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(Error::data("no evaluation scenes"));
    }
    let predictions = predict(config, checkpoint, scenes)?;
    let Some(gt) = ground_truth(scenes) else {
        log::warn!("evaluation scenes lack ground truth; emitting predictions only");
        return Ok(Evaluation {
            predictions,
            report: None,
            alignment: Vec::new(),
        });
    };
    let (report, alignment) = score(&predictions, &gt, config.model.categories, config.eval.per_scene_alignment)?;
    Ok(Evaluation {
        predictions,
        report: Some(report),
        alignment,
    })
}

/// k-means with k = K on the normalized raw xyz+rgb rows of all scenes,
/// aligned and scored against ground truth.
pub fn raw_kmeans_oracle(scenes: &[Scene], k: usize, seed: u64, restarts: usize) -> Result<AlignedScores> {
    let gt = ground_truth(scenes).ok_or_else(|| Error::data("oracle needs ground truth"))?;
    let raw: Vec<Array2<f64>> = scenes.iter().map(Scene::raw_features).collect();
    let views: Vec<_> = raw.iter().map(|r| r.view()).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| Error::data(e.to_string()))?;
    let r = kmeans(x.view(), &KMeansParams::new(k, seed).with_restarts(restarts))?;
    let truth: Vec<usize> = gt.iter().flat_map(|g| g.iter().copied()).collect();
    align_and_score(&r.assignments, &truth, k)
}

/// `index,label` rows.
pub fn predictions_csv(labels: &[usize]) -> String {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn write_predictions(path: &Path, labels: &[usize]) -> Result<()> {
    std::fs::write(path, predictions_csv(labels)).map_err(|e| Error::io(path, e))
}
