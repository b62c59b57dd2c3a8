use protoseg::pipeline::{evaluate, load_dataset, train, Dataset, TrainOptions, Trainer};
use protoseg::{Checkpoint, Config, TrainLog};

const TINY: &str = r#"
[data]
n_classes = 3
points_per_class = 60
separation = 1.5
noise = 0.05
train_scenes = 3
test_scenes = 1
voxel_size = 0.15
neighbors = 4

[model]
hidden = [16]
feature_dim = 8
primitives = 6
categories = 3

[train]
epochs = 10
recluster_interval = 3
kmeans_restarts = 2
lambda1 = 0.5
lambda2 = 2.0
"#;

fn setup(overrides: &[&str]) -> (Config, Dataset) {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let config = Config::from_toml_str(TINY, &overrides).unwrap();
    let data = load_dataset(&config).unwrap();
    (config, data)
}

#[test]
fn banks_start_at_initial_centroids() {
    let (config, data) = setup(&[]);
    let trainer = Trainer::new(&config, data.train).unwrap();
    let (c, a) = trainer.banks();
    assert_eq!(&c.prototypes, trainer.initial_centroids());
    assert_eq!(&a.prototypes, trainer.initial_centroids());
    assert_eq!(trainer.initial_centroids().nrows(), config.model.primitives);
    assert_eq!(trainer.epoch(), 0);
    assert!(trainer.log().is_empty());
}

#[test]
fn lambdas_follow_the_switch_schedule() {
    let (config, data) = setup(&[]);
    let mut trainer = Trainer::new(&config, data.train).unwrap();
    let switch = config.train.switch_epoch();
    assert_eq!(switch, 5);
    for epoch in 0..config.train.epochs {
        let r = trainer.run_epoch().unwrap();
        assert_eq!(r.epoch, epoch);
        if epoch < switch {
            assert_eq!((r.lambda1, r.lambda2), (0.0, 0.0), "epoch {epoch}");
            assert_eq!(r.lr, config.train.lr);
        } else {
            assert_eq!((r.lambda1, r.lambda2), (0.5, 2.0), "epoch {epoch}");
            assert_eq!(r.lr, config.train.lr * config.train.lr_decay_at_switch);
        }
        let expect_total = r.l_ce + r.lambda1 * r.l_sl + r.lambda2 * r.l_cr;
        assert!((r.total - expect_total).abs() <= 1e-12 * (1.0 + r.total.abs()));
    }
}

#[test]
fn pseudo_labels_change_only_at_reclustering() {
    let (config, data) = setup(&[]);
    let mut trainer = Trainer::new(&config, data.train).unwrap();
    let mut hashes = Vec::new();
    for _ in 0..config.train.epochs {
        let r = trainer.run_epoch().unwrap();
        // Epoch 0 trains on the initial clustering, so it is flagged too.
        assert_eq!(r.reclustered, r.epoch % config.train.recluster_interval == 0);
        hashes.push((r.epoch, r.reclustered, r.pseudo_label_hash));
    }
    for w in hashes.windows(2) {
        let ((_, _, h0), (epoch, reclustered, h1)) = (w[0], w[1]);
        if !reclustered {
            assert_eq!(h0, h1, "pseudo-labels changed at epoch {epoch} without reclustering");
        }
    }
    let c = config.model.primitives;
    for labels in trainer.pseudo_labels() {
        assert!(labels.iter().all(|&l| l < c));
    }
}

#[test]
fn fraction_and_drift_are_well_formed() {
    let (config, data) = setup(&[]);
    let outcome = train(&config, data.train, &TrainOptions::default()).unwrap();
    assert_eq!(outcome.log.len(), config.train.epochs);
    for r in &outcome.log.records {
        assert!((0.0..=1.0).contains(&r.consistent_fraction));
        assert!(r.drift_consistent >= 0.0 && r.drift_ambiguous >= 0.0);
        assert!(r.l_ce >= 0.0 && r.l_sl >= 0.0 && r.l_cr >= 0.0);
    }
    let k = outcome.similarity.nrows();
    assert_eq!(k, config.model.primitives);
    for row in outcome.similarity.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn training_writes_reloadable_artifacts() {
    let (config, data) = setup(&["train.checkpoint_interval=4"]);
    let dir = tempfile::tempdir().unwrap();
    let options = TrainOptions {
        outdir: Some(dir.path().to_path_buf()),
    };
    let outcome = train(&config, data.train, &options).unwrap();
    for name in ["checkpoint_epoch0004.json", "checkpoint_epoch0008.json", "checkpoint.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck, outcome.checkpoint);
    assert_eq!(ck.epoch, config.train.epochs);
    let log = TrainLog::read(&dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.loss_columns(), outcome.log.loss_columns());

    let a = evaluate(&config, &ck, &data.test).unwrap();
    let b = evaluate(&config, &outcome.checkpoint, &data.test).unwrap();
    assert_eq!(a.predictions, b.predictions);
    let report = a.report.unwrap();
    assert!((0.0..=1.0).contains(&report.scores.miou));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let (config, data) = setup(&["train.epochs=2"]);
    let outcome = train(&config, data.train, &TrainOptions::default()).unwrap();
    let (other, _) = setup(&["model.primitives=5"]);
    assert!(evaluate(&other, &outcome.checkpoint, &data.test).is_err());
}
