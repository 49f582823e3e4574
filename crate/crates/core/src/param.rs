//! Bounded embedding of unconstrained optimization variables onto the
//! admissible parameter box.
//!
//! `p = (s/2) (tanh(2 r) + 1)`, evaluated in the equivalent logistic form
//! `s / (1 + exp(-4 r))` so that the lower bound stays strictly positive
//! far into the saturated tail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::{PhysicalParameters, ThermalGraph};

/// Unconstrained variables: `n` entries for gamma then `|E|` for delta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawParameters(pub Vec<f64>);

/// Per-parameter upper bound `s_p`, same layout as [`RawParameters`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleVector(Vec<f64>);

impl ScaleVector {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if let Some(pos) = scales.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!(
                "scale {pos} must be positive, got {}",
                scales[pos]
            )));
        }
        Ok(ScaleVector(scales))
    }

    /// `gamma_scale` of every node followed by `delta_scale` of every edge.
    pub fn from_graph(graph: &ThermalGraph) -> Self {
        ScaleVector(
            graph
                .nodes()
                .iter()
                .map(|n| n.gamma_scale)
                .chain(graph.edges().iter().map(|e| e.delta_scale))
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// All raw variables zero, i.e. every parameter at half its scale.
    #[default]
    Midpoint,
    /// i.i.d. uniform raw variables in [-0.5, 0.5].
    UniformJitter,
}

#[inline]
pub fn embed_scalar(raw: f64, scale: f64) -> f64 {
    scale / (1.0 + (-4.0 * raw).exp())
}

#[inline]
pub fn embed_derivative_scalar(raw: f64, scale: f64) -> f64 {
    // s * sech^2(2r) = 4 s e^{-4|r|} / (1 + e^{-4|r|})^2
    let e = (-4.0 * raw.abs()).exp();
    4.0 * scale * e / ((1.0 + e) * (1.0 + e))
}

/// Maps raw variables to physical parameters, split as gamma then delta.
pub fn embed(
    raw: &RawParameters,
    scales: &ScaleVector,
    n_nodes: usize,
) -> Result<PhysicalParameters> {
    check_len("raw parameters", scales.len(), raw.0.len())?;
    if n_nodes > raw.0.len() {
        return Err(Error::Dimension {
            what: "node count",
            expected: raw.0.len(),
            got: n_nodes,
        });
    }
    let values: Vec<f64> = raw
        .0
        .iter()
        .zip(scales.as_slice())
        .map(|(&r, &s)| embed_scalar(r, s))
        .collect();
    let delta = values[n_nodes..].to_vec();
    let mut gamma = values;
    gamma.truncate(n_nodes);
    Ok(PhysicalParameters { gamma, delta })
}

/// Inverse of [`embed`], `r = ln(p / (s - p)) / 4`.
pub fn inverse_embed(params: &PhysicalParameters, scales: &ScaleVector) -> Result<RawParameters> {
    let flat = params.to_vec();
    check_len("physical parameters", scales.len(), flat.len())?;
    flat.iter()
        .zip(scales.as_slice())
        .enumerate()
        .map(|(k, (&p, &s))| {
            if p > 0.0 && p < s {
                Ok(0.25 * (p / (s - p)).ln())
            } else {
                Err(Error::Domain(format!(
                    "parameter {k} = {p} outside the open interval (0, {s})"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(RawParameters)
}

/// Diagonal of `d embed / d raw`.
pub fn embed_jacobian(raw: &RawParameters, scales: &ScaleVector) -> Result<Vec<f64>> {
    check_len("raw parameters", scales.len(), raw.0.len())?;
    Ok(raw
        .0
        .iter()
        .zip(scales.as_slice())
        .map(|(&r, &s)| embed_derivative_scalar(r, s))
        .collect())
}

pub fn init_raw(seed: u64, graph: &ThermalGraph, strategy: InitStrategy) -> RawParameters {
    let len = graph.parameter_count();
    match strategy {
        InitStrategy::Midpoint => RawParameters(vec![0.0; len]),
        InitStrategy::UniformJitter => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            RawParameters((0..len).map(|_| rng.random_range(-0.5..=0.5)).collect())
        }
    }
}
