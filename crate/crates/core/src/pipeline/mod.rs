//! Training and evaluation orchestration.

mod checkpoint;
mod config;
mod data;
mod evaluate;
mod log;
mod plots;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{apply_override, Config, DataConfig, DataSource, EvalConfig, ModelConfig, PrimitiveSource, TrainConfig};
pub use data::{load_dataset, prepare_scene, raw_clouds, Dataset, NamedCloud, Scene};
pub use evaluate::{
    category_mapping, evaluate, predict, predict_primitives, primitive_centroids, predictions_csv, raw_kmeans_oracle, score,
    write_predictions, Evaluation,
};
pub use log::{label_hash, EpochRecord, TrainLog};
pub use plots::{fraction_svg, heatmap_svg, loss_curve_svg, report_plots, FRACTION_PLOT, HEATMAP_PLOT, LOSS_PLOT};
pub use train::{
    read_matrix_csv, scene_features, train, write_matrix_csv, TrainOptions, TrainOutcome, Trainer, CHECKPOINT_FILE,
    LOG_FILE, MAX_HEATMAP_PROTOTYPES, SIMILARITY_FILE,
};
