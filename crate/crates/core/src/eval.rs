//! Label alignment and segmentation metrics.
//!
//! Predicted categories carry arbitrary ids, so scores are computed after a
//! minimum-cost bijection (Hungarian algorithm) between predicted clusters
//! and ground-truth classes that maximizes the number of matched points.

use std::fmt;

use ndarray::Array2;

use crate::cluster::{kmeans, KMeansParams};
use crate::error::{Error, Result};

/// A prediction-cluster → ground-truth-class bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Shortest-augmenting-path Hungarian algorithm on a square matrix.
/// Returns the row → column matching and its cost.
pub fn min_cost_assignment(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let (perm, _, _) = solve(cost);
    let total = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    (perm, total)
}

/// Matching plus the optimal row and column potentials.
fn solve(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    if n == 0 {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Minimum-cost perfect matching; among optimal matchings the
/// lexicographically smallest permutation is returned.
///
/// Every optimal matching uses only edges that are tight under the optimal
/// potentials, so the tie-break walks rows in order and gives each the
/// smallest tight column that still admits a perfect completion.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::data(format!("cost matrix must be square, got {:?}", cost.dim())));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("cost matrix contains non-finite entries"));
    }
    let (mut perm, u, v) = solve(cost);
    let tol = 1e-9 * (1.0 + cost.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cost[[i, j]] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut owner = vec![0usize; n];
    for (i, &j) in perm.iter().enumerate() {
        owner[j] = i;
    }
    for row in 0..n {
        for &col in &tight[row] {
            if perm[row] == col {
                break;
            }
            if owner[col] < row {
                continue;
            }
            // Hand `col` to `row`; its previous owner must reach the column
            // `row` releases through an alternating path over later rows.
            let displaced = owner[col];
            let target = perm[row];
            let mut seen = vec![false; n];
            seen[col] = true;
            for &c in perm.iter().take(row) {
                seen[c] = true;
            }
            let mut path = Vec::new();
            if reroute(displaced, target, &tight, &owner, &mut seen, &mut path) {
                let mut r = displaced;
                for &c in &path {
                    let next = owner[c];
                    perm[r] = c;
                    owner[c] = r;
                    r = next;
                }
                perm[row] = col;
                owner[col] = row;
                break;
            }
        }
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(Assignment { perm, cost: total })
}

/// Depth-first alternating path from `row` to column `target`; `path` collects
/// the columns taken in order.
fn reroute(
    row: usize,
    target: usize,
    tight: &[Vec<usize>],
    owner: &[usize],
    seen: &mut [bool],
    path: &mut Vec<usize>,
) -> bool {
    for &c in &tight[row] {
        if seen[c] {
            continue;
        }
        seen[c] = true;
        path.push(c);
        if c == target || reroute(owner[c], target, tight, owner, seen, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Rows are ground truth, columns aligned predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            total: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt][pred] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.total += other.total;
    }

    pub fn scores(&self) -> Scores {
        let k = self.num_classes();
        let tp: Vec<u64> = (0..k).map(|c| self.counts[c][c]).collect();
        let gt: Vec<u64> = (0..k).map(|c| self.counts[c].iter().sum()).collect();
        let pred: Vec<u64> = (0..k).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect();
        let recall: Vec<Option<f64>> = (0..k)
            .map(|c| (gt[c] > 0).then(|| tp[c] as f64 / gt[c] as f64))
            .collect();
        let iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let union = gt[c] + pred[c] - tp[c];
                (union > 0).then(|| tp[c] as f64 / union as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let vals: Vec<f64> = v.iter().flatten().copied().collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let oa = if self.total > 0 {
            tp.iter().sum::<u64>() as f64 / self.total as f64
        } else {
            0.0
        };
        Scores {
            oa,
            macc: mean(&recall),
            miou: mean(&iou),
            recall,
            iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    /// Per-class recall; `None` for classes absent from the ground truth.
    pub recall: Vec<Option<f64>>,
    /// Per-class IoU; `None` for classes absent from both sides.
    pub iou: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedScores {
    pub assignment: Assignment,
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
}

/// Contingency table `[pred][gt]`.
fn contingency(pred: &[usize], gt: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; k]; k];
    for (&p, &g) in pred.iter().zip(gt) {
        t[p][g] += 1;
    }
    t
}

/// Hungarian alignment of predicted ids onto ground-truth classes, then
/// confusion matrix and OA / mAcc / mIoU.
///
/// Prediction rows are visited in an order fixed by their contingency counts
/// so the scores do not depend on how the predicted ids are numbered.
pub fn align_and_score(pred: &[usize], gt: &[usize], k: usize) -> Result<AlignedScores> {
    if pred.len() != gt.len() {
        return Err(Error::data(format!(
            "prediction length {} does not match ground truth length {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(gt).find(|&&v| v >= k) {
        return Err(Error::data(format!("label {bad} outside [0, {k})")));
    }
    let table = contingency(pred, gt, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| table[b].cmp(&table[a]).then(a.cmp(&b)));
    let cost = Array2::from_shape_fn((k, k), |(i, j)| -(table[order[i]][j] as f64));
    let canon = hungarian(&cost)?;
    let mut perm = vec![0usize; k];
    for (i, &g) in canon.perm.iter().enumerate() {
        perm[order[i]] = g;
    }
    let mut confusion = ConfusionMatrix::new(k);
    for (&p, &g) in pred.iter().zip(gt) {
        confusion.add(g, perm[p]);
    }
    let scores = confusion.scores();
    Ok(AlignedScores {
        assignment: Assignment { perm, cost: canon.cost },
        confusion,
        scores,
    })
}

/// Groups C primitive centroids into K categories with k-means.
pub fn primitives_to_categories(
    primitive_centroids: &Array2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Vec<usize>> {
    let c = primitive_centroids.nrows();
    if c < k {
        return Err(Error::config(format!(
            "cannot group {c} primitives into {k} categories"
        )));
    }
    let r = kmeans(primitive_centroids.view(), &KMeansParams::new(k, seed).with_restarts(restarts))?;
    Ok(r.assignments)
}

/// Metric report: per-class rows plus aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scores: Scores,
    pub confusion: ConfusionMatrix,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        MetricReport {
            scores: confusion.scores(),
            confusion,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,recall\n");
        for (c, (iou, rec)) in self.scores.iou.iter().zip(&self.scores.recall).enumerate() {
            out.push_str(&format!("{c},{},{}\n", fmt_opt(*iou), fmt_opt(*rec)));
        }
        out.push_str(&format!("oa,{:.6},\n", self.scores.oa));
        out.push_str(&format!("macc,{:.6},\n", self.scores.macc));
        out.push_str(&format!("miou,{:.6},\n", self.scores.miou));
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>9} {:>9}", "class", "IoU", "recall")?;
        for (c, (iou, rec)) in self.scores.iou.iter().zip(&self.scores.recall).enumerate() {
            writeln!(f, "{c:>6} {:>9} {:>9}", fmt_opt(*iou), fmt_opt(*rec))?;
        }
        writeln!(f, "{}", "-".repeat(26))?;
        writeln!(f, "{:>6} {:>9.4}", "OA", self.scores.oa)?;
        writeln!(f, "{:>6} {:>9.4}", "mAcc", self.scores.macc)?;
        write!(f, "{:>6} {:>9.4}", "mIoU", self.scores.miou)
    }
}
