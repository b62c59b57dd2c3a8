//! Lloyd's k-means with k-means++ seeding, nearest-centroid assignment, and
//! per-class centroids.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the largest centroid move (Euclidean) drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Independent k-means++ starts; the lowest inertia wins.
    pub restarts: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iters: 100,
            tol: 1e-8,
            seed,
            restarts: 10,
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each assignment step, ending with the final one.
    pub inertia_trace: Vec<f64>,
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (squared Euclidean) and its distance; ties go to the
/// lower index.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn assign(x: ArrayView2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    x.rows().into_iter().map(|r| nearest(r, centroids).0).collect()
}

fn assign_with_cost(x: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, r) in x.rows().into_iter().enumerate() {
        let (j, d) = nearest(r, centroids);
        labels[i] = j;
        dists[i] = d;
        total += d;
    }
    total
}

pub fn inertia(x: ArrayView2<f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    x.rows()
        .into_iter()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, centroids.row(l)))
        .sum()
}

fn kmeans_pp(x: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids. Empty clusters are re-seeded at
/// the point currently farthest from its own centroid.
pub fn lloyd(x: ArrayView2<f64>, init: Array2<f64>, max_iters: usize, tol: f64) -> KMeansResult {
    let (n, d) = x.dim();
    let k = init.nrows();
    let mut centroids = init;
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut trace = Vec::new();
    let mut iterations_run = 0;
    for _ in 0..max_iters {
        iterations_run += 1;
        trace.push(assign_with_cost(x, &centroids, &mut labels, &mut dists));

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (r, &l) in x.rows().into_iter().zip(&labels) {
            let mut s = sums.row_mut(l);
            s += &r;
            counts[l] += 1;
        }
        let mut next = centroids.clone();
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = next.row_mut(j);
                row.assign(&sums.row(j));
                row /= count as f64;
            }
        }
        for i in 0..n {
            dists[i] = sq_dist(x.row(i), next.row(labels[i]));
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = j;
                    counts[j] = 1;
                    dists[i] = 0.0;
                    next.row_mut(j).assign(&x.row(i));
                }
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let final_inertia = assign_with_cost(x, &centroids, &mut labels, &mut dists);
    trace.push(final_inertia);
    KMeansResult {
        centroids,
        assignments: labels,
        inertia: final_inertia,
        iterations_run,
        inertia_trace: trace,
    }
}

/// k-means with `restarts` independent k-means++ starts run in parallel; the
/// lowest-inertia run wins, ties going to the earliest restart.
pub fn kmeans(x: ArrayView2<f64>, params: &KMeansParams) -> Result<KMeansResult> {
    let n = x.nrows();
    if params.k == 0 {
        return Err(Error::config("k-means needs k >= 1"));
    }
    if n < params.k {
        return Err(Error::data(format!(
            "k-means needs at least k = {} points, got {n}",
            params.k
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("k-means input contains non-finite values"));
    }
    let restarts = params.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r);
            let init = kmeans_pp(x, params.k, &mut rng);
            lloyd(x, init, params.max_iters, params.tol)
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}

/// Per-class feature means and the member count of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCentroids {
    /// L×D; rows of absent classes are zero.
    pub means: Array2<f64>,
    pub counts: Vec<usize>,
}

impl ClassCentroids {
    pub fn presence(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0).collect()
    }
}

pub fn class_centroids(features: ArrayView2<f64>, labels: &[usize], num_classes: usize) -> ClassCentroids {
    let mut means = Array2::zeros((num_classes, features.ncols()));
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in features.rows().into_iter().zip(labels) {
        let mut m = means.row_mut(l);
        m += &row;
        counts[l] += 1;
    }
    for (mut row, &c) in means.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    ClassCentroids { means, counts }
}
