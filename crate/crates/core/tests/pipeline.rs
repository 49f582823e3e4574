use std::path::PathBuf;

use thermo_netid::config::ExperimentConfig;
use thermo_netid::dataset::Split;
use thermo_netid::experiment::{generate, noisy_copy};
use thermo_netid::io::{read_csv_hash, read_dataset_csv, write_dataset_csv};
use thermo_netid::training::{evaluate_test, train};

fn small_benchmark() -> ExperimentConfig {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "configs",
        "benchmark.json",
    ]
    .iter()
    .collect();
    let mut cfg = ExperimentConfig::from_path(path).unwrap();
    let fem = cfg.fem.as_mut().unwrap();
    fem.nx = 16;
    fem.ny = 16;
    cfg.forcings.as_mut().unwrap().samples = 600;
    cfg.train.window_len = 60;
    cfg.train.max_epochs = 40;
    cfg.train.eval_window = 50;
    cfg.noise.level = 0.01;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn every_shipped_config_parses() {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"]
        .iter()
        .collect();
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::from_path(&path).unwrap();
            assert!(cfg.generation().is_ok(), "{}", path.display());
            count += 1;
        }
    }
    assert!(count >= 5);
}

#[test]
fn generated_data_round_trips_and_trains() {
    let cfg = small_benchmark();
    let g = generate(&cfg).unwrap();
    assert_eq!(g.dataset.len(), 600);
    assert_eq!(g.metadata.config_hash, cfg.hash());
    assert!(g.metadata.temperature_min > 200.0 && g.metadata.temperature_max < 400.0);

    // noise touches train and validation rows only
    let test = g.clean.range(Split::Test).unwrap();
    let valid = g.clean.range(Split::Valid).unwrap();
    for k in 0..600 {
        let same = g.clean.measurements.row(k) == g.dataset.measurements.row(k);
        assert_eq!(same, test.contains(&k), "row {k}");
    }
    assert_eq!(g.dataset.inputs, g.clean.inputs);
    assert_eq!(
        noisy_copy(&g.clean, 0.01, cfg.noise.seed).unwrap(),
        g.dataset
    );
    assert!(valid.end == test.start);

    let dir = tempfile_dir();
    let path = dir.join("dataset.csv");
    write_dataset_csv(&path, &g.dataset, &g.metadata.config_hash).unwrap();
    assert_eq!(
        read_csv_hash(&path).unwrap().as_deref(),
        Some(g.metadata.config_hash.as_str())
    );
    let back = read_dataset_csv(&path).unwrap();
    assert_eq!(back.measurements, g.dataset.measurements);
    assert_eq!(back.inputs, g.dataset.inputs);
    assert_eq!(back.dt, g.dataset.dt);

    let report = train(&cfg.graph, &g.dataset, &cfg.train).unwrap();
    assert_eq!(report.epochs_run, 40);
    assert!(report.valid_loss[report.best_epoch] < report.valid_loss[0]);
    let (again, predicted) = evaluate_test(
        &cfg.graph,
        &g.dataset,
        &report.final_params,
        &report.normalization,
        &report.config,
    )
    .unwrap();
    assert_eq!(again, report.test);
    assert_eq!(predicted.states.nrows(), test.len());
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("thermo-netid-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
