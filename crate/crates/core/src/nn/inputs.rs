use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Which per-point channels the extractor consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub use_colors: bool,
    /// k of the neighborhood-mean channel; 0 disables it.
    pub neighbors: usize,
}

impl InputSpec {
    pub fn base_dim(&self) -> usize {
        if self.use_colors {
            6
        } else {
            3
        }
    }

    pub fn dim(&self) -> usize {
        if self.neighbors > 0 {
            2 * self.base_dim()
        } else {
            self.base_dim()
        }
    }
}

/// k nearest neighbors of every point (self excluded), by brute force.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn build(positions: &Array2<f64>, k: usize) -> Self {
        let n = positions.nrows();
        let k = k.min(n.saturating_sub(1));
        let neighbors = (0..n)
            .map(|i| {
                if k == 0 {
                    return vec![i];
                }
                let pi = positions.row(i);
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let pj = positions.row(j);
                        let dist = (0..3).map(|a| (pi[a] - pj[a]).powi(2)).sum::<f64>();
                        (dist, j)
                    })
                    .collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < d.len() {
                    d.select_nth_unstable_by(k - 1, cmp);
                    d.truncate(k);
                }
                d.sort_by(cmp);
                d.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        NeighborIndex { neighbors }
    }
}

/// Assembles the extractor input matrix for a cloud.
pub fn build_inputs(
    cloud: &PointCloud,
    spec: &InputSpec,
    index: Option<&NeighborIndex>,
) -> Result<Array2<f64>> {
    let n = cloud.len();
    let base = spec.base_dim();
    let mut out = Array2::zeros((n, spec.dim()));
    out.slice_mut(s![.., 0..3]).assign(&cloud.positions);
    if spec.use_colors {
        let colors = cloud
            .colors
            .as_ref()
            .ok_or_else(|| Error::config("extractor expects colors but the cloud has none"))?;
        out.slice_mut(s![.., 3..6]).assign(colors);
    }
    if spec.neighbors > 0 {
        let owned;
        let index = match index {
            Some(ix) => ix,
            None => {
                owned = NeighborIndex::build(&cloud.positions, spec.neighbors);
                &owned
            }
        };
        if index.neighbors.len() != n {
            return Err(Error::config("neighbor index does not match cloud"));
        }
        for (i, nb) in index.neighbors.iter().enumerate() {
            let inv = 1.0 / nb.len() as f64;
            for c in 0..base {
                let mean = nb.iter().map(|&j| out[[j, c]]).sum::<f64>() * inv;
                out[[i, base + c]] = mean;
            }
        }
    }
    Ok(out)
}
