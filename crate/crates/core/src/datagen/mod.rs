//! Synthetic telemetry from finite element ground truth.

pub mod fem;
pub mod forcing;
pub mod sensors;

use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::TelemetryDataset;
use crate::error::{Error, Result};
use fem::{simulate_with, FemConfig, ForcingSeries, Side};
use forcing::ForcingSpec;
use sensors::{probes, SensorLayout, SensorRole};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceForcing {
    /// Name of a configured subdomain.
    pub subdomain: String,
    pub forcing: ForcingSpec,
}

/// Forcing assignment for a generated series of `samples` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingsConfig {
    pub samples: usize,
    /// Incoming flux on each face, W m^-2.
    #[serde(default)]
    pub bottom: Option<ForcingSpec>,
    #[serde(default)]
    pub right: Option<ForcingSpec>,
    #[serde(default)]
    pub top: Option<ForcingSpec>,
    #[serde(default)]
    pub left: Option<ForcingSpec>,
    /// Volumetric heaters, W m^-3.
    #[serde(default)]
    pub sources: Vec<SourceForcing>,
}

impl ForcingsConfig {
    fn face(&self, side: Side) -> Option<&ForcingSpec> {
        match side {
            Side::Bottom => self.bottom.as_ref(),
            Side::Right => self.right.as_ref(),
            Side::Top => self.top.as_ref(),
            Side::Left => self.left.as_ref(),
        }
    }

    /// Samples every configured forcing on the simulation grid.
    pub fn series(&self, fem: &FemConfig) -> Result<ForcingSeries> {
        if self.samples < 2 {
            return Err(Error::Config(format!(
                "forcings.samples must be at least 2, got {}",
                self.samples
            )));
        }
        let mut series = ForcingSeries::zero(fem.subdomains.len());
        for (slot, side) in series.flux.iter_mut().zip(Side::ALL) {
            if let Some(spec) = self.face(side) {
                *slot = spec.sample(self.samples, fem.dt)?;
            }
        }
        for src in &self.sources {
            let idx = fem
                .subdomains
                .iter()
                .position(|s| s.name == src.subdomain)
                .ok_or_else(|| {
                    Error::Config(format!("forcing names unknown subdomain {}", src.subdomain))
                })?;
            if !series.source[idx].is_empty() {
                return Err(Error::Config(format!(
                    "subdomain {} has two sources",
                    src.subdomain
                )));
            }
            series.source[idx] = src.forcing.sample(self.samples, fem.dt)?;
        }
        Ok(series)
    }
}

/// Subdomain whose material applies at a point (the last one containing it).
fn subdomain_at(fem: &FemConfig, x: f64, y: f64) -> Option<usize> {
    fem.subdomains.iter().rposition(|s| s.rect.contains(x, y))
}

/// Nodal input power (W) of every sensor node at every sample. Face nodes
/// receive the flux integrated over their face; internal nodes share the
/// power of the heater in their subdomain equally.
pub fn node_inputs(
    fem: &FemConfig,
    layout: &SensorLayout,
    series: &ForcingSeries,
    samples: usize,
) -> Result<Array2<f64>> {
    let owners: Vec<Option<usize>> = layout
        .sensors
        .iter()
        .map(|s| match s.role {
            SensorRole::Internal => subdomain_at(fem, s.x, s.y),
            _ => None,
        })
        .collect();
    let mut inputs = Array2::zeros((samples, layout.len()));
    for (n, sensor) in layout.sensors.iter().enumerate() {
        let (values, weight) = match sensor.role.side() {
            Some(side) => {
                let k = Side::ALL.iter().position(|s| *s == side).unwrap();
                (&series.flux[k], fem.side_length(side) * fem.z_len)
            }
            None => match owners[n] {
                Some(j) => {
                    let sharing = owners.iter().filter(|o| **o == Some(j)).count() as f64;
                    (
                        &series.source[j],
                        fem.subdomains[j].rect.area() * fem.z_len / sharing,
                    )
                }
                None => continue,
            },
        };
        for (k, v) in values.iter().take(samples).enumerate() {
            inputs[(k, n)] = weight * v;
        }
    }
    Ok(inputs)
}

/// Runs the finite element model and samples sensors and node inputs.
pub fn generate_dataset(
    fem: &FemConfig,
    forcings: &ForcingsConfig,
    layout: &SensorLayout,
) -> Result<TelemetryDataset> {
    fem.validate()?;
    layout.validate(fem)?;
    let series = forcings.series(fem)?;
    let probes = probes(fem, layout)?;
    let samples = forcings.samples;
    let mut measurements = Array2::zeros((samples, layout.len()));
    simulate_with(fem, &series, samples - 1, |k, field| {
        for (s, p) in probes.iter().enumerate() {
            measurements[(k, s)] = p.read(field);
        }
        Ok(())
    })?;
    let inputs = node_inputs(fem, layout, &series, samples)?;
    TelemetryDataset::new(fem.dt, inputs, measurements)
}

/// Gaussian perturbation of every sample with standard deviation
/// `level * mean(measurements)`.
pub fn add_noise(measurements: &Array2<f64>, level: f64, seed: u64) -> Result<Array2<f64>> {
    add_noise_rows(measurements, 0..measurements.nrows(), level, seed)
}

/// As [`add_noise`] but only perturbs `rows`; the standard deviation still
/// refers to the global mean of the clean data.
pub fn add_noise_rows(
    measurements: &Array2<f64>,
    rows: Range<usize>,
    level: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    if rows.end > measurements.nrows() {
        return Err(Error::Config(format!(
            "noise rows {rows:?} exceed the {} available samples",
            measurements.nrows()
        )));
    }
    let mut noisy = measurements.clone();
    if level == 0.0 || measurements.is_empty() {
        return Ok(noisy);
    }
    let mean = measurements.mean().unwrap_or(0.0);
    let normal = Normal::new(0.0, level * mean.abs())
        .map_err(|e| Error::Config(format!("invalid noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in rows {
        for v in noisy.row_mut(k).iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(noisy)
}
