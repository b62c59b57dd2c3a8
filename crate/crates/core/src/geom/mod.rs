//! Point-cloud representation and the preprocessing that feeds the extractor.

mod augment;
mod io;
mod synth;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use augment::{augment_colors, AugmentParams};
pub use io::{load_cloud, write_cloud_csv, CloudFormat};
pub use synth::{synth_scene, synth_suite, SynthParams};

/// A scene: positions plus whatever per-point channels the source provided.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// N×3.
    pub positions: Array2<f64>,
    /// N×3 in `[0, 1]`.
    pub colors: Option<Array2<f64>>,
    pub gt_labels: Option<Vec<usize>>,
    /// Contiguous ids `0..S`, every id used.
    pub superpoint_ids: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn from_positions(positions: Array2<f64>) -> Self {
        PointCloud {
            positions,
            colors: None,
            gt_labels: None,
            superpoint_ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of superpoints, if ids are attached.
    pub fn num_superpoints(&self) -> Option<usize> {
        self.superpoint_ids
            .as_ref()
            .map(|ids| ids.iter().max().map_or(0, |m| m + 1))
    }

    /// Checks every structural invariant of the cloud.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.positions.ncols() != 3 {
            return Err(Error::data(format!(
                "positions must be N×3, got N×{}",
                self.positions.ncols()
            )));
        }
        if self.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite position"));
        }
        if let Some(colors) = &self.colors {
            if colors.dim() != (n, 3) {
                return Err(Error::data("colors must be N×3"));
            }
            if colors.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::data("color channel outside [0, 1]"));
            }
        }
        if let Some(labels) = &self.gt_labels {
            if labels.len() != n {
                return Err(Error::data("label count does not match point count"));
            }
        }
        if let Some(ids) = &self.superpoint_ids {
            if ids.len() != n {
                return Err(Error::data("superpoint count does not match point count"));
            }
            let s = ids.iter().max().map_or(0, |m| m + 1);
            let mut used = vec![false; s];
            for &id in ids {
                used[id] = true;
            }
            if used.iter().any(|u| !u) {
                return Err(Error::data("superpoint ids are not contiguous"));
            }
        }
        Ok(())
    }
}

/// Translates and uniformly scales positions so the bounding box fits the unit
/// cube with its minimum corner at the origin. A fully coincident cloud maps
/// to the cube center.
pub fn normalize(cloud: &PointCloud) -> PointCloud {
    let mut out = cloud.clone();
    if cloud.is_empty() {
        return out;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for row in cloud.positions.rows() {
        for a in 0..3 {
            lo[a] = lo[a].min(row[a]);
            hi[a] = hi[a].max(row[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent <= 0.0 {
        out.positions.fill(0.5);
        return out;
    }
    for mut row in out.positions.rows_mut() {
        for a in 0..3 {
            row[a] = (row[a] - lo[a]) / extent;
        }
    }
    out
}

/// Voxel key of every point; two points share a superpoint iff their keys match.
pub fn voxel_keys(cloud: &PointCloud, voxel_size: f64) -> Vec<[i64; 3]> {
    cloud
        .positions
        .rows()
        .into_iter()
        .map(|p| {
            [
                (p[0] / voxel_size).floor() as i64,
                (p[1] / voxel_size).floor() as i64,
                (p[2] / voxel_size).floor() as i64,
            ]
        })
        .collect()
}

/// Groups points by occupied voxel. Ids are compacted in lexicographic voxel
/// order so the result is independent of point order.
pub fn voxel_superpoints(cloud: &PointCloud, voxel_size: f64) -> Result<Vec<usize>> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::config(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    let keys = voxel_keys(cloud, voxel_size);
    let mut index: BTreeMap<[i64; 3], usize> = keys.iter().map(|&k| (k, 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    Ok(keys.iter().map(|k| index[k]).collect())
}

/// Compacts arbitrary ids onto `0..S` in ascending id order.
pub fn compact_ids(ids: &[i64]) -> Vec<usize> {
    let mut index: BTreeMap<i64, usize> = ids.iter().map(|&k| (k, 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    ids.iter().map(|k| index[k]).collect()
}

/// Per-channel mean of the colors, if present.
pub(crate) fn channel_means(colors: &Array2<f64>) -> [f64; 3] {
    let m = colors
        .mean_axis(Axis(0))
        .unwrap_or_else(|| ndarray::Array1::zeros(3));
    [m[0], m[1], m[2]]
}
