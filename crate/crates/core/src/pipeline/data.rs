//! Scene preparation: normalization, superpoints and input assembly.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use super::config::{Config, DataSource};
use crate::error::Result;
use crate::geom::{
    augment_colors, load_cloud, normalize, synth_suite, voxel_superpoints, AugmentParams, CloudFormat, PointCloud,
};
use crate::nn::{build_inputs, InputSpec, NeighborIndex};

/// A normalized cloud with superpoints and its neighbor index.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub cloud: PointCloud,
    pub neighbors: Option<NeighborIndex>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn superpoints(&self) -> &[usize] {
        self.cloud.superpoint_ids.as_deref().expect("prepared scenes carry superpoints")
    }

    /// Extractor inputs, optionally after color augmentation.
    pub fn inputs(&self, spec: &InputSpec, augment: Option<&AugmentParams>) -> Result<Array2<f64>> {
        match augment {
            Some(params) if self.cloud.colors.is_some() => {
                build_inputs(&augment_colors(&self.cloud, params), spec, self.neighbors.as_ref())
            }
            _ => build_inputs(&self.cloud, spec, self.neighbors.as_ref()),
        }
    }

    /// Normalized xyz and rgb side by side.
    pub fn raw_features(&self) -> Array2<f64> {
        match &self.cloud.colors {
            Some(c) => concatenate(Axis(1), &[self.cloud.positions.view(), c.view()]).expect("same row count"),
            None => self.cloud.positions.clone(),
        }
    }
}

/// Normalizes the cloud, assigns voxel superpoints unless ids are supplied,
/// and builds the neighbor index the input spec needs.
pub fn prepare_scene(name: impl Into<String>, cloud: &PointCloud, voxel_size: f64, spec: &InputSpec) -> Result<Scene> {
    cloud.validate()?;
    let mut cloud = normalize(cloud);
    if cloud.superpoint_ids.is_none() {
        cloud.superpoint_ids = Some(voxel_superpoints(&cloud, voxel_size)?);
    }
    let neighbors = (spec.neighbors > 0).then(|| NeighborIndex::build(&cloud.positions, spec.neighbors));
    Ok(Scene {
        name: name.into(),
        cloud,
        neighbors,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

fn prepare_all(named: Vec<(String, PointCloud)>, config: &Config) -> Result<Vec<Scene>> {
    let spec = config.data.input_spec();
    named
        .par_iter()
        .map(|(name, cloud)| prepare_scene(name.clone(), cloud, config.data.voxel_size, &spec))
        .collect()
}

fn load_files(paths: &[std::path::PathBuf]) -> Result<Vec<(String, PointCloud)>> {
    paths
        .iter()
        .map(|p| {
            let cloud = load_cloud(p, CloudFormat::from_path(p)?)?;
            Ok((p.display().to_string(), cloud))
        })
        .collect()
}

pub type NamedCloud = (String, PointCloud);

/// Raw clouds of the configured train and test sets.
pub fn raw_clouds(config: &Config) -> Result<(Vec<NamedCloud>, Vec<NamedCloud>)> {
    let d = &config.data;
    match d.source {
        DataSource::Synth => {
            let mut all = synth_suite(&d.synth_params(), d.train_scenes + d.test_scenes, d.sample_seed)?;
            let test = all.split_off(d.train_scenes);
            let name = |kind: &str, i: usize| format!("synth-{kind}-{i}");
            Ok((
                all.into_iter().enumerate().map(|(i, c)| (name("train", i), c)).collect(),
                test.into_iter().enumerate().map(|(i, c)| (name("test", i), c)).collect(),
            ))
        }
        DataSource::Files => Ok((load_files(&d.train_files)?, load_files(&d.test_files)?)),
    }
}

pub fn load_dataset(config: &Config) -> Result<Dataset> {
    let (train, test) = raw_clouds(config)?;
    Ok(Dataset {
        train: prepare_all(train, config)?,
        test: prepare_all(test, config)?,
    })
}
