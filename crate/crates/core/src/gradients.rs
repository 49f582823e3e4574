//! Trajectory-matching loss and its discrete adjoint.
//!
//! The gradient is the exact derivative of the computed loss through the
//! unrolled RK4 stepper: stage states are recomputed from the stored step
//! states during the reverse sweep, so memory grows linearly with the number
//! of steps. A central finite-difference gradient is provided as an oracle.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Window, WindowBatch};
use crate::error::{check_len, Error, Result};
use crate::graph::{Network, ThermalGraph};
use crate::integrate::{
    batched_rollout, block_rollout, limiter_derivative, Rk4Stages, RolloutConfig, Trajectory,
};
use crate::param::{embed, embed_jacobian, RawParameters, ScaleVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub grad_raw: Vec<f64>,
    /// Integration steps taken over all windows.
    pub n_steps: usize,
}

fn window_sum_sq(states: ArrayView2<f64>, targets: ArrayView2<f64>, normalization: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (row, target) in states.rows().into_iter().zip(targets.rows()) {
        for ((t, y), s) in row.iter().zip(target.iter()).zip(normalization) {
            let r = (t - y) / s;
            sum += r * r;
        }
    }
    sum
}

/// Mean over windows, steps and nodes of `((T - y) / scale)^2`.
pub fn trajectory_loss(
    predicted: &[Trajectory],
    targets: &WindowBatch,
    normalization: &[f64],
) -> Result<f64> {
    check_len("trajectories", targets.len(), predicted.len())?;
    if targets.is_empty() {
        return Err(Error::Config("empty window batch".into()));
    }
    let n = normalization.len();
    if normalization.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain(
            "normalization scales must be positive".into(),
        ));
    }
    let mut total = 0.0;
    for (traj, window) in predicted.iter().zip(&targets.windows) {
        if traj.states.dim() != window.targets.dim() {
            return Err(Error::Dimension {
                what: "trajectory rows",
                expected: window.targets.nrows(),
                got: traj.states.nrows(),
            });
        }
        check_len("trajectory columns", n, traj.states.ncols())?;
        total += window_sum_sq(traj.states.view(), window.targets.view(), normalization);
    }
    Ok(total / (targets.len() * targets.window_len * n) as f64)
}

/// Everything needed to evaluate the training objective apart from the
/// parameters and the batch.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub graph: &'a ThermalGraph,
    pub scales: &'a ScaleVector,
    /// Per-node residual scale, K.
    pub normalization: &'a [f64],
    pub config: &'a RolloutConfig,
}

struct WindowGrad {
    sum_sq: f64,
    grad: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        graph: &'a ThermalGraph,
        scales: &'a ScaleVector,
        normalization: &'a [f64],
        config: &'a RolloutConfig,
    ) -> Result<Self> {
        check_len("scales", graph.parameter_count(), scales.len())?;
        check_len("normalization", graph.node_count(), normalization.len())?;
        if normalization.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(
                "normalization scales must be positive".into(),
            ));
        }
        config.validate()?;
        Ok(Objective {
            graph,
            scales,
            normalization,
            config,
        })
    }

    fn check_batch(&self, batch: &WindowBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Config("empty window batch".into()));
        }
        let n = self.graph.node_count();
        for w in &batch.windows {
            if w.inputs.nrows() != batch.window_len || w.targets.nrows() != batch.window_len {
                return Err(Error::Config(format!(
                    "window starting at {} does not have length {}",
                    w.start, batch.window_len
                )));
            }
            check_len("window columns", n, w.targets.ncols())?;
            check_len("window input columns", n, w.inputs.ncols())?;
            check_len("window state", n, w.initial.len())?;
        }
        Ok(())
    }

    pub fn loss(&self, raw: &RawParameters, batch: &WindowBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let params = embed(raw, self.scales, self.graph.node_count())?;
        let predicted = batched_rollout(self.graph, &params, batch, self.config)?;
        trajectory_loss(&predicted, batch, self.normalization)
    }

    pub fn loss_and_gradient(
        &self,
        raw: &RawParameters,
        batch: &WindowBatch,
    ) -> Result<LossReport> {
        self.check_batch(batch)?;
        let n = self.graph.node_count();
        let params = embed(raw, self.scales, n)?;
        let net = Network::new(self.graph, &params, self.config.radiative);
        let weight = 1.0 / (batch.len() * batch.window_len * n) as f64;

        // per-window passes are independent; the reduction below runs in
        // window order so the result does not depend on the worker count
        let passes: Vec<Result<WindowGrad>> = batch
            .windows
            .par_iter()
            .map(|w| self.window_pass(&net, w, batch.window_len, weight))
            .collect();

        let mut total = 0.0;
        let mut grad_phys = vec![0.0; self.graph.parameter_count()];
        for pass in passes {
            let pass = pass?;
            total += pass.sum_sq;
            for (g, p) in grad_phys.iter_mut().zip(&pass.grad) {
                *g += p;
            }
        }
        let jac = embed_jacobian(raw, self.scales)?;
        let grad_raw = grad_phys.iter().zip(&jac).map(|(g, j)| g * j).collect();
        Ok(LossReport {
            loss: total / (batch.len() * batch.window_len * n) as f64,
            grad_raw,
            n_steps: batch.len() * batch.window_len.saturating_sub(1),
        })
    }

    fn window_pass(
        &self,
        net: &Network,
        window: &Window,
        steps: usize,
        weight: f64,
    ) -> Result<WindowGrad> {
        let n = net.n;
        let cfg = self.config;
        let states = block_rollout(
            net,
            cfg,
            &[window.initial.as_slice()],
            &[window.inputs.view()],
            steps,
        )?
        .pop()
        .unwrap();
        let sum_sq = window_sum_sq(states.view(), window.targets.view(), self.normalization);

        let n_edges = net.ends.len();
        let mut grad = vec![0.0; n + n_edges];
        let (bar_gamma, bar_delta) = grad.split_at_mut(n);
        let residual_grad = |k: usize, out: &mut [f64]| {
            for i in 0..n {
                let s = self.normalization[i];
                out[i] = 2.0 * weight * (states[(k, i)] - window.targets[(k, i)]) / (s * s);
            }
        };

        let dt = cfg.dt;
        let half = 0.5 * dt;
        let sixth = dt / 6.0;
        let limiter_v = cfg.limiter();
        let mut stages = Rk4Stages::new(n);
        let mut next = vec![0.0; n];
        let mut lam = vec![0.0; n];
        let mut lam_s = vec![0.0; n];
        let mut bar_k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut bar_t = vec![0.0; n];
        let mut bar_y = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut data_term = vec![0.0; n];

        residual_grad(steps - 1, &mut lam);
        for k in (0..steps - 1).rev() {
            let state = states.row(k);
            let input = window.inputs.row(k);
            stages.advance(
                net,
                dt,
                limiter_v,
                state.as_slice().unwrap(),
                input.as_slice().unwrap(),
                &mut next,
            );
            match limiter_v {
                Some(v) => {
                    for i in 0..n {
                        lam_s[i] = lam[i] * limiter_derivative(stages.s[i], v);
                    }
                }
                None => lam_s.copy_from_slice(&lam),
            }
            for i in 0..n {
                bar_k[0][i] = sixth * lam_s[i];
                bar_k[1][i] = 2.0 * sixth * lam_s[i];
                bar_k[2][i] = 2.0 * sixth * lam_s[i];
                bar_k[3][i] = sixth * lam_s[i];
            }
            bar_t.copy_from_slice(&lam_s);
            for stage in (0..4).rev() {
                bar_y.iter_mut().for_each(|b| *b = 0.0);
                net.rate_vjp(
                    &stages.y[stage],
                    &stages.g[stage],
                    &bar_k[stage],
                    &mut bar_y,
                    bar_gamma,
                    bar_delta,
                    &mut scratch,
                );
                for i in 0..n {
                    bar_t[i] += bar_y[i];
                }
                if stage > 0 {
                    let c = if stage == 3 { dt } else { half };
                    for i in 0..n {
                        bar_k[stage - 1][i] += c * bar_y[i];
                    }
                }
            }
            residual_grad(k, &mut data_term);
            for i in 0..n {
                lam[i] = bar_t[i] + data_term[i];
            }
        }
        Ok(WindowGrad { sum_sq, grad })
    }

    /// Central differences of [`Objective::loss`], `2 (n + |E|)` rollouts.
    pub fn finite_difference_gradient(
        &self,
        raw: &RawParameters,
        batch: &WindowBatch,
        h: f64,
    ) -> Result<Vec<f64>> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("step must be positive, got {h}")));
        }
        (0..raw.0.len())
            .map(|p| {
                let mut plus = raw.clone();
                plus.0[p] += h;
                let mut minus = raw.clone();
                minus.0[p] -= h;
                Ok((self.loss(&plus, batch)? - self.loss(&minus, batch)?) / (2.0 * h))
            })
            .collect()
    }
}

pub fn loss_and_gradient(
    graph: &ThermalGraph,
    raw: &RawParameters,
    scales: &ScaleVector,
    batch: &WindowBatch,
    normalization: &[f64],
    config: &RolloutConfig,
) -> Result<LossReport> {
    Objective::new(graph, scales, normalization, config)?.loss_and_gradient(raw, batch)
}

pub fn finite_difference_gradient(
    graph: &ThermalGraph,
    raw: &RawParameters,
    scales: &ScaleVector,
    batch: &WindowBatch,
    normalization: &[f64],
    config: &RolloutConfig,
    h: f64,
) -> Result<Vec<f64>> {
    Objective::new(graph, scales, normalization, config)?.finite_difference_gradient(raw, batch, h)
}
