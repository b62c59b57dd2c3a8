//! Run configuration, read from a sectioned `key = value` (TOML) file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{AugmentParams, SynthParams};
use crate::loss::{ObjectiveSettings, StructureVariant};
use crate::nn::InputSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_classes: usize,
    pub points_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    /// Seed of the shared class centers.
    pub synth_seed: u64,
    /// Seed of the per-scene point samples.
    pub sample_seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    pub voxel_size: f64,
    pub use_colors: bool,
    /// k of the neighborhood-mean input channel; 0 disables it.
    pub neighbors: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            n_classes: 5,
            points_per_class: 400,
            separation: 1.0,
            noise: 0.1,
            synth_seed: 0,
            sample_seed: 1,
            train_scenes: 8,
            test_scenes: 2,
            train_files: Vec::new(),
            test_files: Vec::new(),
            voxel_size: 0.05,
            use_colors: true,
            neighbors: 0,
        }
    }
}

impl DataConfig {
    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            n_classes: self.n_classes,
            points_per_class: self.points_per_class,
            separation: self.separation,
            noise: self.noise,
            seed: self.synth_seed,
        }
    }

    pub fn input_spec(&self) -> InputSpec {
        InputSpec {
            use_colors: self.use_colors,
            neighbors: self.neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub leaky_slope: f64,
    /// Number of semantic primitives C.
    pub primitives: usize,
    /// Number of categories K reported at test time.
    pub categories: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            feature_dim: 16,
            leaky_slope: 0.01,
            primitives: 300,
            categories: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_scenes: usize,
    pub lr: f64,
    /// Learning-rate factor applied from the λ switch on.
    pub lr_decay_at_switch: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs between reclustering events.
    pub recluster_interval: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub tau: f64,
    pub alpha: f64,
    pub temperature: f64,
    /// Fraction of the epochs trained with the prototype losses switched off.
    pub lambda_switch: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub structure_variant: StructureVariant,
    pub stop_grad_consistent: bool,
    pub reinit_banks_on_recluster: bool,
    /// After clustering, set the head weights to the unit-normalized
    /// centroids times this scale (biases zeroed); 0 keeps the random head.
    pub head_init_scale: f64,
    /// Repeat the head initialization after every reclustering, not only
    /// the first clustering.
    pub reinit_head_on_recluster: bool,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub augment: AugmentParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_scenes: 1,
            lr: 1e-2,
            lr_decay_at_switch: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            recluster_interval: 5,
            kmeans_restarts: 10,
            kmeans_max_iters: 100,
            tau: crate::reliability::DEFAULT_TAU,
            alpha: crate::protolib::DEFAULT_ALPHA,
            temperature: crate::loss::DEFAULT_TEMPERATURE,
            lambda_switch: 0.5,
            lambda1: 1.0,
            lambda2: 1.0,
            structure_variant: StructureVariant::Centroid,
            stop_grad_consistent: false,
            reinit_banks_on_recluster: false,
            head_init_scale: 30.0,
            reinit_head_on_recluster: true,
            checkpoint_interval: 0,
            seed: 0,
            augment: AugmentParams {
                shift_range: 0.05,
                contrast_range: 0.1,
                jitter_sigma: 0.01,
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    /// First epoch trained with the prototype losses on.
    pub fn switch_epoch(&self) -> usize {
        (self.lambda_switch * self.epochs as f64).round() as usize
    }

    /// (λ1, λ2) in force during `epoch`.
    pub fn lambdas(&self, epoch: usize) -> (f64, f64) {
        if epoch < self.switch_epoch() {
            (0.0, 0.0)
        } else {
            (self.lambda1, self.lambda2)
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.switch_epoch() {
            self.lr
        } else {
            self.lr * self.lr_decay_at_switch
        }
    }

    pub fn objective_settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            temperature: self.temperature,
            variant: self.structure_variant,
            stop_grad_consistent: self.stop_grad_consistent,
        }
    }
}

/// Which C×D matrix stands for the primitives when grouping them into
/// categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveSource {
    /// Unit-normalized head weight columns.
    Head,
    ConsistentBank,
    AmbiguousBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Align each test scene separately instead of the concatenated set.
    pub per_scene_alignment: bool,
    /// Assign primitives to superpoint-mean features rather than per point.
    pub superpoint_pooling: bool,
    pub primitive_source: PrimitiveSource,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            per_scene_alignment: false,
            superpoint_pooling: true,
            primitive_source: PrimitiveSource::Head,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(msg))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match d.source {
            DataSource::Synth => {
                d.synth_params().validate()?;
                check(d.train_scenes >= 1, "data.train_scenes must be at least 1")?;
            }
            DataSource::Files => {
                check(!d.train_files.is_empty(), "data.train_files must list at least one file")?;
            }
        }
        check(positive(d.voxel_size), "data.voxel_size must be positive")?;

        let m = &self.model;
        check(m.feature_dim >= 1, "model.feature_dim must be at least 1")?;
        check(m.hidden.iter().all(|&h| h >= 1), "model.hidden widths must be at least 1")?;
        check(
            m.leaky_slope.is_finite() && (0.0..1.0).contains(&m.leaky_slope),
            "model.leaky_slope must lie in [0, 1)",
        )?;
        check(m.categories >= 1, "model.categories must be at least 1")?;
        check(
            m.primitives >= m.categories,
            "model.primitives must be at least model.categories",
        )?;

        let t = &self.train;
        check(t.batch_scenes >= 1, "train.batch_scenes must be at least 1")?;
        check(positive(t.lr), "train.lr must be positive")?;
        check(
            t.lr_decay_at_switch.is_finite() && t.lr_decay_at_switch > 0.0,
            "train.lr_decay_at_switch must be positive",
        )?;
        check(
            t.momentum.is_finite() && (0.0..1.0).contains(&t.momentum),
            "train.momentum must lie in [0, 1)",
        )?;
        check(
            t.weight_decay.is_finite() && t.weight_decay >= 0.0,
            "train.weight_decay must be non-negative",
        )?;
        check(t.recluster_interval >= 1, "train.recluster_interval must be at least 1")?;
        check(t.kmeans_restarts >= 1, "train.kmeans_restarts must be at least 1")?;
        check(t.kmeans_max_iters >= 1, "train.kmeans_max_iters must be at least 1")?;
        check(unit_open(t.tau), "train.tau must lie in (0, 1)")?;
        check(unit_open(t.alpha), "train.alpha must lie in (0, 1)")?;
        check(positive(t.temperature), "train.temperature must be positive")?;
        check(
            (0.0..=1.0).contains(&t.lambda_switch),
            "train.lambda_switch must lie in [0, 1]",
        )?;
        check(
            t.lambda1.is_finite() && t.lambda1 >= 0.0 && t.lambda2.is_finite() && t.lambda2 >= 0.0,
            "train.lambda1 and train.lambda2 must be non-negative",
        )?;
        check(
            t.head_init_scale.is_finite() && t.head_init_scale >= 0.0,
            "train.head_init_scale must be non-negative",
        )?;
        check(t.augment.is_valid(), "train.augment ranges must be non-negative")?;

        check(self.eval.kmeans_restarts >= 1, "eval.kmeans_restarts must be at least 1")?;
        Ok(())
    }

    /// Parses and validates a configuration, applying `section.key=value`
    /// overrides first.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Config> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        let mut table = toml::Table::try_from(Config::default()).expect("default config serializes");
        merge(&mut table, user);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Recursively overlays `over` onto `base`; nested tables merge key by key.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `section.key` (any depth) to `value`. The value is read as a TOML
/// literal when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
