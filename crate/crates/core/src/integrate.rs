//! Fixed-step forward integration of the network ODE.
//!
//! Classical four-stage Runge-Kutta with inputs held constant over each
//! step, followed (optionally) by a smooth temperature limiter applied to
//! the post-step state. Batched rollouts advance a `B x n` state array
//! whose rows never interact, so they reproduce sequential rollouts
//! bit for bit.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::WindowBatch;
use crate::error::{check_len, Error, Result};
use crate::graph::{Network, PhysicalParameters, ThermalGraph};

/// Default limiter knot, K.
pub const DEFAULT_LIMITER_V: f64 = 200.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputHold {
    /// Piecewise-constant inputs over each step.
    #[default]
    ZeroOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Step size, s.
    pub dt: f64,
    pub limiter_enabled: bool,
    pub limiter_v: f64,
    /// Include the `-kappa T^4` deep-space sink.
    pub radiative: bool,
    pub input_hold: InputHold,
}

impl RolloutConfig {
    pub fn new(dt: f64) -> Self {
        RolloutConfig {
            dt,
            limiter_enabled: false,
            limiter_v: DEFAULT_LIMITER_V,
            radiative: true,
            input_hold: InputHold::ZeroOrder,
        }
    }

    pub fn with_limiter(mut self, enabled: bool) -> Self {
        self.limiter_enabled = enabled;
        self
    }

    pub fn with_radiative(mut self, on: bool) -> Self {
        self.radiative = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.limiter_v > 0.0 && self.limiter_v.is_finite()) {
            return Err(Error::Config(format!(
                "limiter_v must be positive, got {}",
                self.limiter_v
            )));
        }
        Ok(())
    }

    pub(crate) fn limiter(&self) -> Option<f64> {
        self.limiter_enabled.then_some(self.limiter_v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per time, one column per node.
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Smooth saturation: identity on `[v, 2v]`, tanh branches outside with
/// asymptotes `0` and `3v`.
#[inline]
pub fn limiter(t: f64, v: f64) -> f64 {
    if t < v {
        v * (t / v - 1.0).tanh() + v
    } else if t > 2.0 * v {
        v * (t / v - 2.0).tanh() + 2.0 * v
    } else {
        t
    }
}

#[inline]
pub fn limiter_derivative(t: f64, v: f64) -> f64 {
    if t < v {
        let th = (t / v - 1.0).tanh();
        1.0 - th * th
    } else if t > 2.0 * v {
        let th = (t / v - 2.0).tanh();
        1.0 - th * th
    } else {
        1.0
    }
}

/// Scratch buffers for one RK4 step; stage results are kept so the adjoint
/// can reuse them.
#[derive(Clone, Debug)]
pub(crate) struct Rk4Stages {
    /// Stage states `Y1 = T, Y2, Y3, Y4`.
    pub y: [Vec<f64>; 4],
    /// Stage drives `u - L Y - kappa Y^4`.
    pub g: [Vec<f64>; 4],
    /// Stage rates `gamma * g`.
    pub k: [Vec<f64>; 4],
    /// Pre-limiter combination.
    pub s: Vec<f64>,
}

impl Rk4Stages {
    pub fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Rk4Stages {
            y: [z(), z(), z(), z()],
            g: [z(), z(), z(), z()],
            k: [z(), z(), z(), z()],
            s: z(),
        }
    }

    /// Evaluates all stages from `state` with input `input`, and writes the
    /// (optionally limited) next state into `out`.
    #[inline]
    pub fn advance(
        &mut self,
        net: &Network,
        dt: f64,
        limiter_v: Option<f64>,
        state: &[f64],
        input: &[f64],
        out: &mut [f64],
    ) {
        let n = net.n;
        let half = 0.5 * dt;
        self.y[0].copy_from_slice(state);
        for stage in 0..4 {
            if stage > 0 {
                let c = if stage == 3 { dt } else { half };
                let (prev_k, y) = (&self.k[stage - 1], &mut self.y[stage]);
                for i in 0..n {
                    y[i] = state[i] + c * prev_k[i];
                }
            }
            net.drive(&self.y[stage], input, &mut self.g[stage]);
            let (g, k) = (&self.g[stage], &mut self.k[stage]);
            for i in 0..n {
                k[i] = net.gamma[i] * g[i];
            }
        }
        let sixth = dt / 6.0;
        for (i, (s, x)) in self.s.iter_mut().zip(state).enumerate() {
            *s =
                x + sixth * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        match limiter_v {
            Some(v) => {
                for (o, &s) in out.iter_mut().zip(&self.s) {
                    *o = limiter(s, v);
                }
            }
            None => out.copy_from_slice(&self.s),
        }
    }
}

/// One RK4 step from `state` with input held at `input`.
pub fn step(
    graph: &ThermalGraph,
    params: &PhysicalParameters,
    state: &[f64],
    input: &[f64],
    config: &RolloutConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = graph.node_count();
    check_len("state", n, state.len())?;
    check_len("input", n, input.len())?;
    if let Some(node) = state.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteState { node });
    }
    let net = Network::new(graph, params, config.radiative);
    let mut stages = Rk4Stages::new(n);
    let mut out = vec![0.0; n];
    stages.advance(&net, config.dt, config.limiter(), state, input, &mut out);
    if out.iter().any(|t| !t.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(out)
}

/// Advances a block of independent rows in lockstep. `initial` is `B x n`,
/// `inputs[b]` is the `K x n` input series of row `b`. Returns `B` state
/// arrays of shape `K x n`.
pub(crate) fn block_rollout(
    net: &Network,
    config: &RolloutConfig,
    initial: &[&[f64]],
    inputs: &[ArrayView2<f64>],
    steps: usize,
) -> Result<Vec<Array2<f64>>> {
    let n = net.n;
    let rows = initial.len();
    let mut states: Vec<Array2<f64>> = (0..rows).map(|_| Array2::zeros((steps, n))).collect();
    if steps == 0 {
        return Ok(states);
    }
    for (b, init) in initial.iter().enumerate() {
        states[b]
            .row_mut(0)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(init);
    }
    let mut stages = Rk4Stages::new(n);
    let mut next = vec![0.0; n];
    let limiter_v = config.limiter();
    for k in 0..steps - 1 {
        for b in 0..rows {
            let cur = states[b].row(k);
            let u = inputs[b].row(k);
            stages.advance(
                net,
                config.dt,
                limiter_v,
                cur.as_slice().unwrap(),
                u.as_slice().unwrap(),
                &mut next,
            );
            if next.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence { step: k });
            }
            states[b]
                .row_mut(k + 1)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&next);
        }
    }
    Ok(states)
}

fn uniform_times(start: f64, dt: f64, len: usize) -> Vec<f64> {
    (0..len).map(|k| start + k as f64 * dt).collect()
}

/// Integrates from `initial` using one input row per step; the trajectory has
/// as many states as `inputs` has rows (the last input row is not consumed).
pub fn rollout(
    graph: &ThermalGraph,
    params: &PhysicalParameters,
    initial: &[f64],
    inputs: ArrayView2<f64>,
    config: &RolloutConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let n = graph.node_count();
    check_len("initial state", n, initial.len())?;
    check_len("input columns", n, inputs.ncols())?;
    if let Some(node) = initial.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteState { node });
    }
    let inputs = inputs.as_standard_layout();
    let net = Network::new(graph, params, config.radiative);
    let steps = inputs.nrows();
    let mut states = block_rollout(&net, config, &[initial], &[inputs.view()], steps)?;
    Ok(Trajectory {
        times: uniform_times(0.0, config.dt, steps),
        states: states.pop().unwrap(),
    })
}

/// Rolls out every window of `batch` as one block-diagonal system.
pub fn batched_rollout(
    graph: &ThermalGraph,
    params: &PhysicalParameters,
    batch: &WindowBatch,
    config: &RolloutConfig,
) -> Result<Vec<Trajectory>> {
    config.validate()?;
    let n = graph.node_count();
    let steps = batch.window_len;
    for w in &batch.windows {
        if w.inputs.nrows() != steps || w.targets.nrows() != steps {
            return Err(Error::Config(format!(
                "window starting at {} has length {} but the batch length is {steps}",
                w.start,
                w.inputs.nrows()
            )));
        }
        check_len("window state", n, w.initial.len())?;
        check_len("window input columns", n, w.inputs.ncols())?;
    }
    let net = Network::new(graph, params, config.radiative);
    let initial: Vec<&[f64]> = batch.windows.iter().map(|w| w.initial.as_slice()).collect();
    let inputs: Vec<ArrayView2<f64>> = batch.windows.iter().map(|w| w.inputs.view()).collect();
    let states = block_rollout(&net, config, &initial, &inputs, steps)?;
    Ok(batch
        .windows
        .iter()
        .zip(states)
        .map(|(w, states)| Trajectory {
            times: uniform_times(w.start as f64 * config.dt, config.dt, steps),
            states,
        })
        .collect())
}
