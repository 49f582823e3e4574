//! Point sensors read from the bilinear field.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::fem::{FemConfig, Side};
use crate::error::{Error, Result};

pub const SENSOR_COUNT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorRole {
    FaceBottom,
    FaceRight,
    FaceTop,
    FaceLeft,
    Internal,
}

impl SensorRole {
    pub fn side(self) -> Option<Side> {
        match self {
            SensorRole::FaceBottom => Some(Side::Bottom),
            SensorRole::FaceRight => Some(Side::Right),
            SensorRole::FaceTop => Some(Side::Top),
            SensorRole::FaceLeft => Some(Side::Left),
            SensorRole::Internal => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub name: String,
    /// m.
    pub x: f64,
    pub y: f64,
    pub role: SensorRole,
}

/// Sensors in graph node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorLayout {
    pub sensors: Vec<Sensor>,
}

impl SensorLayout {
    pub fn validate(&self, fem: &FemConfig) -> Result<()> {
        if self.sensors.len() != SENSOR_COUNT {
            return Err(Error::Config(format!(
                "sensor layout needs {SENSOR_COUNT} sensors, got {}",
                self.sensors.len()
            )));
        }
        for side in Side::ALL {
            let count = self
                .sensors
                .iter()
                .filter(|s| s.role.side() == Some(side))
                .count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "sensor layout needs exactly one sensor on the {side:?} face, got {count}"
                )));
            }
        }
        for s in &self.sensors {
            if !(s.x >= 0.0 && s.x <= fem.lx && s.y >= 0.0 && s.y <= fem.ly) {
                return Err(Error::Config(format!(
                    "sensor {} at ({}, {}) lies outside the domain [0, {}] x [0, {}]",
                    s.name, s.x, s.y, fem.lx, fem.ly
                )));
            }
            let on_face = match s.role.side() {
                Some(Side::Bottom) => s.y == 0.0,
                Some(Side::Top) => s.y == fem.ly,
                Some(Side::Left) => s.x == 0.0,
                Some(Side::Right) => s.x == fem.lx,
                None => true,
            };
            if !on_face {
                return Err(Error::Config(format!(
                    "sensor {} has role {:?} but does not lie on that face",
                    s.name, s.role
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// Bilinear interpolation stencil of one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl Probe {
    pub fn new(fem: &FemConfig, x: f64, y: f64) -> Result<Self> {
        if !(x >= 0.0 && x <= fem.lx && y >= 0.0 && y <= fem.ly) {
            return Err(Error::Config(format!(
                "point ({x}, {y}) lies outside the domain"
            )));
        }
        let locate = |v: f64, h: f64, cells: usize| {
            let c = ((v / h).floor() as usize).min(cells - 1);
            (c, v / h - c as f64)
        };
        let (i, u) = locate(x, fem.hx(), fem.nx);
        let (j, w) = locate(y, fem.hy(), fem.ny);
        Ok(Probe {
            nodes: [
                fem.node_index(i, j),
                fem.node_index(i + 1, j),
                fem.node_index(i + 1, j + 1),
                fem.node_index(i, j + 1),
            ],
            weights: [(1.0 - u) * (1.0 - w), u * (1.0 - w), u * w, (1.0 - u) * w],
        })
    }

    pub fn read(&self, field: &[f64]) -> f64 {
        // exact nodal value when the point sits on a node
        if let Some(k) = self.weights.iter().position(|w| *w == 1.0) {
            return field[self.nodes[k]];
        }
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| field[*n] * w)
            .sum()
    }
}

pub fn probes(fem: &FemConfig, layout: &SensorLayout) -> Result<Vec<Probe>> {
    layout
        .sensors
        .iter()
        .map(|s| {
            Probe::new(fem, s.x, s.y).map_err(|_| {
                Error::Config(format!(
                    "sensor {} at ({}, {}) lies outside the domain",
                    s.name, s.x, s.y
                ))
            })
        })
        .collect()
}

/// Sensor readings per snapshot, `snapshots x sensors`.
pub fn extract_sensors(
    fem: &FemConfig,
    snapshots: &[Vec<f64>],
    layout: &SensorLayout,
) -> Result<Array2<f64>> {
    let probes = probes(fem, layout)?;
    let dofs = fem.dof_count();
    if let Some(bad) = snapshots.iter().position(|s| s.len() != dofs) {
        return Err(Error::Dimension {
            what: "snapshot length",
            expected: dofs,
            got: snapshots[bad].len(),
        });
    }
    Ok(Array2::from_shape_fn(
        (snapshots.len(), probes.len()),
        |(k, s)| probes[s].read(&snapshots[k]),
    ))
}
