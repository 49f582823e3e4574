//! End-to-end helpers composing generation, splitting, noise and training.

use crate::config::ExperimentConfig;
use crate::datagen::forcing::ForcingSpec;
use crate::datagen::{add_noise_rows, generate_dataset, ForcingsConfig};
use crate::dataset::{split_ranges, Split, TelemetryDataset};
use crate::error::Result;
use crate::eval::{snr_study, StabilityReport};
use crate::io::DatasetMetadata;
use crate::training::{multi_run, MultiRun};

/// Seeds of every Gaussian-process forcing, faces first.
pub fn forcing_seeds(forcings: &ForcingsConfig) -> Vec<u64> {
    [
        &forcings.bottom,
        &forcings.right,
        &forcings.top,
        &forcings.left,
    ]
    .into_iter()
    .flatten()
    .chain(forcings.sources.iter().map(|s| &s.forcing))
    .filter_map(|f| match f {
        ForcingSpec::Gp { seed, .. } => Some(*seed),
        _ => None,
    })
    .collect()
}

/// Noise on every sample before the test split; test samples stay clean.
pub fn noisy_copy(clean: &TelemetryDataset, level: f64, seed: u64) -> Result<TelemetryDataset> {
    let test_start = clean.range(Split::Test)?.start;
    let mut noisy = clean.clone();
    noisy.measurements = add_noise_rows(&clean.measurements, 0..test_start, level, seed)?;
    Ok(noisy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Noise-free ground truth with split annotations.
    pub clean: TelemetryDataset,
    /// Training data with the configured noise applied.
    pub dataset: TelemetryDataset,
    pub metadata: DatasetMetadata,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Generated> {
    let (fem, forcings, sensors) = cfg.generation()?;
    let raw = generate_dataset(fem, forcings, sensors)?;
    let split = split_ranges(raw.len(), cfg.split.fractions(), cfg.train.window_len)?;
    let clean = raw.with_split(split.clone())?;
    let dataset = noisy_copy(&clean, cfg.noise.level, cfg.noise.seed)?;
    let (lo, hi) = dataset
        .measurements
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let metadata = DatasetMetadata {
        config_hash: cfg.hash(),
        samples: dataset.len(),
        dt: dataset.dt,
        node_count: dataset.node_count(),
        split,
        noise: cfg.noise,
        forcing_seeds: forcing_seeds(forcings),
        sensors: Some(sensors.clone()),
        temperature_min: lo,
        temperature_max: hi,
    };
    Ok(Generated {
        clean,
        dataset,
        metadata,
    })
}

/// `runs` trainings on independently noised copies of `clean`; run `k`
/// draws its noise with seed `noise.seed + k`.
pub fn stability_study(
    cfg: &ExperimentConfig,
    clean: &TelemetryDataset,
    runs: usize,
) -> Result<(MultiRun, StabilityReport)> {
    let level = cfg.noise.level;
    let noise_seed = cfg.noise.seed;
    let out = multi_run(
        &cfg.graph,
        |k, _| noisy_copy(clean, level, noise_seed.wrapping_add(k as u64)),
        &cfg.train,
        runs,
    )?;
    let report = snr_study(&out.reports)?;
    Ok((out, report))
}
