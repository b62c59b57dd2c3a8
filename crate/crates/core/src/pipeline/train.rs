//! The epoch loop: recluster, pseudo-label, split, update banks, optimize.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::Config;
use super::data::Scene;
use super::log::{label_hash, EpochRecord, TrainLog};
use crate::cluster::{kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::eval::min_cost_assignment;
use crate::loss::{batch_objective, similarity_matrices};
use crate::nn::{
    backward, extractor_forward, head_forward, pool_superpoints, InputSpec, Model, Sgd,
    SgdSettings,
};
use crate::protolib::{init_banks, PrototypeBank};
use crate::reliability::reliability_mask;

/// Largest similarity heatmap written next to the training log.
pub const MAX_HEATMAP_PROTOTYPES: usize = 64;

fn mix(seed: u64, a: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalized features of every scene, without augmentation.
pub fn scene_features(model: &Model, scenes: &[Scene], spec: &InputSpec) -> Result<Vec<Array2<f64>>> {
    scenes
        .par_iter()
        .map(|s| {
            let x = s.inputs(spec, None)?;
            Ok(extractor_forward(&model.extractor, &x)?.0)
        })
        .collect()
}

/// Stateful trainer. Construction runs the initial clustering, so the banks
/// and pseudo-labels are available before the first epoch.
pub struct Trainer {
    config: Config,
    spec: InputSpec,
    scenes: Vec<Scene>,
    model: Model,
    optimizer: Sgd,
    bank_consistent: PrototypeBank,
    bank_ambiguous: PrototypeBank,
    initial_centroids: Array2<f64>,
    centroids: Array2<f64>,
    pseudo: Vec<Vec<usize>>,
    epoch: usize,
    rng: ChaCha8Rng,
    log: TrainLog,
}

impl Trainer {
    pub fn new(config: &Config, scenes: Vec<Scene>) -> Result<Trainer> {
        config.validate()?;
        if scenes.is_empty() {
            return Err(Error::data("no training scenes"));
        }
        let spec = config.data.input_spec();
        let m = &config.model;
        let mut model = Model::new(spec.dim(), &m.hidden, m.feature_dim, m.primitives, m.leaky_slope, m.seed);
        let optimizer = Sgd::new(SgdSettings {
            momentum: config.train.momentum,
            weight_decay: config.train.weight_decay,
        });
        let (centroids, pseudo) = cluster_scenes(&model, &scenes, &spec, config, 0)?;
        let (bank_consistent, bank_ambiguous) = init_banks(&centroids, config.train.alpha)?;
        init_head(&mut model, &centroids, config.train.head_init_scale);
        Ok(Trainer {
            config: config.clone(),
            spec,
            scenes,
            model,
            optimizer,
            bank_consistent,
            bank_ambiguous,
            initial_centroids: centroids.clone(),
            centroids,
            pseudo,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(config.train.seed),
            log: TrainLog::default(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn banks(&self) -> (&PrototypeBank, &PrototypeBank) {
        (&self.bank_consistent, &self.bank_ambiguous)
    }

    pub fn initial_centroids(&self) -> &Array2<f64> {
        &self.initial_centroids
    }

    /// Current per-point pseudo-labels of every scene.
    pub fn pseudo_labels(&self) -> &[Vec<usize>] {
        &self.pseudo
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.epoch,
            self.spec,
            self.model.clone(),
            self.bank_consistent.clone(),
            self.bank_ambiguous.clone(),
        )
    }

    /// Consistent-bank relation matrix, truncated to the first
    /// [`MAX_HEATMAP_PROTOTYPES`] prototypes.
    pub fn prototype_similarity(&self) -> Array2<f64> {
        let sim = similarity_matrices(
            &self.bank_consistent.prototypes,
            &self.bank_ambiguous.prototypes,
            self.config.train.temperature,
        );
        let k = sim.p.nrows().min(MAX_HEATMAP_PROTOTYPES);
        sim.p.slice(s![..k, ..k]).to_owned()
    }

    fn recluster(&mut self) -> Result<()> {
        let (mut centroids, mut pseudo) = cluster_scenes(&self.model, &self.scenes, &self.spec, &self.config, self.epoch)?;
        // Keep primitive ids stable: primitive j of the new clustering takes
        // the id of the old centroid it is matched to.
        let c = centroids.nrows();
        let cost = Array2::from_shape_fn((c, c), |(i, j)| {
            centroids
                .row(i)
                .iter()
                .zip(self.centroids.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        });
        let (perm, _) = min_cost_assignment(&cost);
        let mut aligned = Array2::zeros(centroids.raw_dim());
        for (i, &j) in perm.iter().enumerate() {
            aligned.row_mut(j).assign(&centroids.row(i));
        }
        centroids = aligned;
        for labels in &mut pseudo {
            for l in labels.iter_mut() {
                *l = perm[*l];
            }
        }
        if self.config.train.reinit_banks_on_recluster {
            let (c, a) = init_banks(&centroids, self.config.train.alpha)?;
            self.bank_consistent = c;
            self.bank_ambiguous = a;
        }
        if self.config.train.reinit_head_on_recluster
            && init_head(&mut self.model, &centroids, self.config.train.head_init_scale)
        {
            self.optimizer = Sgd::new(self.optimizer.settings);
        }
        self.centroids = centroids;
        self.pseudo = pseudo;
        Ok(())
    }

    /// Runs one epoch and appends its record to the log.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let start = Instant::now();
        let t = self.config.train.clone();
        let epoch = self.epoch;
        let reclustered = epoch > 0 && epoch.is_multiple_of(t.recluster_interval);
        if reclustered {
            self.recluster()?;
        }
        let (lambda1, lambda2) = t.lambdas(epoch);
        let lr = t.learning_rate(epoch);
        let settings = t.objective_settings();
        let bank_c_start = self.bank_consistent.prototypes.clone();
        let bank_a_start = self.bank_ambiguous.prototypes.clone();

        let mut order: Vec<usize> = (0..self.scenes.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        let (mut n_consistent, mut n_points) = (0usize, 0usize);

        for (step, chunk) in order.chunks(t.batch_scenes).enumerate() {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut pseudo = Vec::new();
            for &si in chunk {
                let aug = t.augment.with_seed(mix(t.augment.seed ^ t.seed, self.rng.random()));
                inputs.push(self.scenes[si].inputs(&self.spec, Some(&aug))?);
                pseudo.extend_from_slice(&self.pseudo[si]);
            }
            let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
            let x = concatenate(Axis(0), &views).expect("equal input widths");

            let (features, cache) = extractor_forward(&self.model.extractor, &x)?;
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    epoch,
                    step,
                    msg: "non-finite features".into(),
                });
            }
            let probs = head_forward(&self.model.head, &features)?;
            let mask = reliability_mask(probs.view(), &pseudo, t.tau)?;
            let obj = batch_objective(
                probs.view(),
                features.view(),
                &pseudo,
                &mask,
                &self.bank_consistent,
                &self.bank_ambiguous,
                lambda1,
                lambda2,
                &settings,
            )?;
            if !obj.report.is_finite() {
                return Err(Error::Numerical {
                    epoch,
                    step,
                    msg: format!("non-finite loss {:?}", obj.report),
                });
            }
            self.bank_consistent
                .ema_update(obj.batch.consistent.means.view(), &obj.batch.consistent.presence());
            self.bank_ambiguous
                .ema_update(obj.batch.ambiguous.means.view(), &obj.batch.ambiguous.presence());
            let grads = backward(&self.model, &cache, &obj.grad_logits, &obj.grad_features);
            self.optimizer.step(&mut self.model, &grads, lr);
            if !self.model.is_finite() {
                return Err(Error::Numerical {
                    epoch,
                    step,
                    msg: "parameters became non-finite".into(),
                });
            }

            let r = &obj.report;
            for (acc, v) in sums.iter_mut().zip([r.l_ce, r.l_sl, r.l_cr, r.total]) {
                *acc += v;
            }
            batches += 1;
            n_consistent += mask.n_consistent;
            n_points += mask.len();
        }

        let drift = |a: &Array2<f64>, b: &Array2<f64>| {
            a.rows()
                .into_iter()
                .zip(b.rows())
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
                .sum::<f64>()
                / a.nrows().max(1) as f64
        };
        let nb = batches.max(1) as f64;
        let record = EpochRecord {
            epoch,
            lambda1,
            lambda2,
            lr,
            l_ce: sums[0] / nb,
            l_sl: sums[1] / nb,
            l_cr: sums[2] / nb,
            total: sums[3] / nb,
            consistent_fraction: if n_points > 0 {
                n_consistent as f64 / n_points as f64
            } else {
                0.0
            },
            drift_consistent: drift(&self.bank_consistent.prototypes, &bank_c_start),
            drift_ambiguous: drift(&self.bank_ambiguous.prototypes, &bank_a_start),
            reclustered: reclustered || epoch == 0,
            pseudo_label_hash: label_hash(self.pseudo.iter().flatten()),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "epoch {epoch}: ce {:.4} sl {:.4} cr {:.4} consistent {:.3}",
            record.l_ce,
            record.l_sl,
            record.l_cr,
            record.consistent_fraction
        );
        self.log.push(record);
        self.epoch += 1;
        Ok(self.log.records.last().expect("just pushed"))
    }
}

/// Head weights from unit-normalized centroids, so the initial prediction of
/// a point is its most cosine-similar primitive. Returns false when disabled.
fn init_head(model: &mut Model, centroids: &Array2<f64>, scale: f64) -> bool {
    if scale <= 0.0 {
        return false;
    }
    let w = &mut model.head.linear.weight;
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let norm = c.dot(&c).sqrt();
        let inv = if norm > 1e-12 { scale / norm } else { 0.0 };
        for (d, &v) in c.iter().enumerate() {
            w[[d, k]] = v * inv;
        }
    }
    model.head.linear.bias.fill(0.0);
    true
}

/// Extracts features, pools them per superpoint, and clusters the pooled rows
/// of all scenes into C primitives. Returns the centroids and the per-point
/// pseudo-labels of every scene.
fn cluster_scenes(
    model: &Model,
    scenes: &[Scene],
    spec: &InputSpec,
    config: &Config,
    epoch: usize,
) -> Result<(Array2<f64>, Vec<Vec<usize>>)> {
    let features = scene_features(model, scenes, spec)?;
    let pooled: Vec<Array2<f64>> = features
        .iter()
        .zip(scenes)
        .map(|(f, s)| pool_superpoints(f, s.superpoints()))
        .collect();
    let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
    let all = concatenate(Axis(0), &views).expect("equal feature widths");
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            epoch,
            step: 0,
            msg: "non-finite features before clustering".into(),
        });
    }
    let c = config.model.primitives;
    if all.nrows() < c {
        return Err(Error::data(format!(
            "{} superpoints in the training set, fewer than the {c} primitives requested",
            all.nrows()
        )));
    }
    let params = KMeansParams::new(c, mix(config.train.seed, epoch as u64 + 1))
        .with_restarts(config.train.kmeans_restarts)
        .with_max_iters(config.train.kmeans_max_iters);
    let result = kmeans(all.view(), &params)?;
    let mut offset = 0;
    let mut pseudo = Vec::with_capacity(scenes.len());
    for (p, s) in pooled.iter().zip(scenes) {
        let sp_labels = &result.assignments[offset..offset + p.nrows()];
        offset += p.nrows();
        pseudo.push(s.superpoints().iter().map(|&id| sp_labels[id]).collect());
    }
    Ok((result.centroids, pseudo))
}

/// Where training writes its artifacts; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub outdir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub similarity: Array2<f64>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";

/// Full training run.
pub fn train(config: &Config, scenes: Vec<Scene>, options: &TrainOptions) -> Result<TrainOutcome> {
    if let Some(dir) = &options.outdir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut trainer = Trainer::new(config, scenes)?;
    for _ in 0..config.train.epochs {
        trainer.run_epoch()?;
        let done = trainer.epoch();
        let interval = config.train.checkpoint_interval;
        if let Some(dir) = &options.outdir {
            if interval > 0 && done % interval == 0 && done < config.train.epochs {
                trainer.checkpoint().save(&dir.join(format!("checkpoint_epoch{done:04}.json")))?;
            }
        }
    }
    let outcome = TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log: trainer.log().clone(),
        similarity: trainer.prototype_similarity(),
    };
    if let Some(dir) = &options.outdir {
        outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        outcome.log.write(&dir.join(LOG_FILE))?;
        write_matrix_csv(&dir.join(SIMILARITY_FILE), &outcome.similarity)?;
    }
    Ok(outcome)
}

pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "ragged matrix row".into(),
            });
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_vec((rows.len(), cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::data(e.to_string()))
}
