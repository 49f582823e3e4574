//! Full-batch Adam training with validation-based early stopping, the
//! continuous test evaluation, and repeated runs for the stability study.

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_windows, Split, TelemetryDataset};
use crate::error::{check_len, Error, Result};
use crate::eval::{compute_metrics, windowed_errors, MetricSet, WindowedErrors};
use crate::gradients::Objective;
use crate::graph::{PhysicalParameters, ThermalGraph};
use crate::integrate::{rollout, RolloutConfig, Trajectory, DEFAULT_LIMITER_V};
use crate::param::{embed, init_raw, InitStrategy, RawParameters, ScaleVector};

fn default_lr() -> f64 {
    1e-2
}
fn default_max_epochs() -> usize {
    5000
}
fn default_patience() -> Option<usize> {
    Some(200)
}
fn default_window_len() -> usize {
    1000
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}
fn default_limiter_v() -> f64 {
    DEFAULT_LIMITER_V
}
fn default_scale_floor() -> f64 {
    1e-6
}
fn default_max_rejected() -> usize {
    10
}
fn default_eval_window() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; `None`
    /// disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    /// Window length `T_b` in samples.
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Limiter on training rollouts; validation and test never use it.
    #[serde(default = "default_true")]
    pub limiter: bool,
    #[serde(default = "default_limiter_v")]
    pub limiter_v: f64,
    #[serde(default = "default_true")]
    pub radiative: bool,
    #[serde(default)]
    pub init: InitStrategy,
    /// Lower bound on the per-node loss normalization, K.
    #[serde(default = "default_scale_floor")]
    pub scale_floor: f64,
    /// Consecutive rejected epochs tolerated before giving up.
    #[serde(default = "default_max_rejected")]
    pub max_rejected: usize,
    /// Window length of the test error distribution, samples.
    #[serde(default = "default_eval_window")]
    pub eval_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("train.{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("train.eps must be positive, got {}", self.eps));
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs must be positive".into());
        }
        if self.patience == Some(0) {
            return bad("train.patience must be positive".into());
        }
        if self.window_len < 2 {
            return bad(format!(
                "train.window_len must be at least 2, got {}",
                self.window_len
            ));
        }
        if self.eval_window == 0 {
            return bad("train.eval_window must be positive".into());
        }
        if !(self.limiter_v > 0.0) {
            return bad(format!(
                "train.limiter_v must be positive, got {}",
                self.limiter_v
            ));
        }
        if !(self.scale_floor > 0.0) {
            return bad(format!(
                "train.scale_floor must be positive, got {}",
                self.scale_floor
            ));
        }
        Ok(())
    }

    fn rollout_config(&self, dt: f64, limiter: bool) -> RolloutConfig {
        let mut cfg = RolloutConfig::new(dt)
            .with_limiter(limiter)
            .with_radiative(self.radiative);
        cfg.limiter_v = self.limiter_v;
        cfg
    }
}

/// Optimizer iterate together with its moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub raw: RawParameters,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(raw: RawParameters) -> Self {
        let len = raw.0.len();
        AdamState {
            raw,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. A non-finite gradient is reported as a
/// numerical error and leaves `state` untouched.
pub fn adam_update(
    state: &AdamState,
    grad: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<AdamState> {
    check_len("gradient", state.raw.0.len(), grad.len())?;
    if let Some(p) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "gradient entry {p} is not finite"
        )));
    }
    let step = state.step + 1;
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    let mut next = state.clone();
    next.step = step;
    for (p, &g) in grad.iter().enumerate() {
        next.m[p] = beta1 * state.m[p] + (1.0 - beta1) * g;
        next.v[p] = beta2 * state.v[p] + (1.0 - beta2) * g * g;
        let m_hat = next.m[p] / c1;
        let v_hat = next.v[p] / c2;
        next.raw.0[p] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterTrace {
    pub id: String,
    /// Physical value at the start of every epoch.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub start: usize,
    pub end: usize,
    pub metrics: MetricSet,
    pub windowed: WindowedErrors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub parameter_names: Vec<String>,
    /// Per-node residual scale of the loss, K.
    pub normalization: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub rejected_steps: usize,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub traces: Vec<ParameterTrace>,
    pub best_valid_loss: f64,
    pub final_raw: RawParameters,
    pub final_params: PhysicalParameters,
    pub test: TestEvaluation,
}

impl RunReport {
    pub fn best_train_loss(&self) -> f64 {
        self.train_loss[self.best_epoch]
    }

    /// Physical parameters recorded at the start of `epoch`.
    pub fn snapshot(&self, epoch: usize) -> Option<Vec<f64>> {
        (epoch < self.epochs_run).then(|| self.traces.iter().map(|t| t.values[epoch]).collect())
    }
}

/// Continuous rollout over the test split from the measured state at its
/// first sample, compared against the measurements.
pub fn evaluate_test(
    graph: &ThermalGraph,
    dataset: &TelemetryDataset,
    params: &PhysicalParameters,
    normalization: &[f64],
    config: &TrainConfig,
) -> Result<(TestEvaluation, Trajectory)> {
    let range = dataset.range(Split::Test)?;
    if range.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let initial = dataset.measurements.row(range.start).to_vec();
    let inputs = dataset.inputs.slice(s![range.clone(), ..]);
    let reference = dataset.measurements.slice(s![range.clone(), ..]);
    let mut predicted = rollout(
        graph,
        params,
        &initial,
        inputs,
        &config.rollout_config(dataset.dt, false),
    )?;
    for t in predicted.times.iter_mut() {
        *t += range.start as f64 * dataset.dt;
    }
    let metrics = compute_metrics(predicted.states.view(), reference, normalization)?;
    let windowed = windowed_errors(
        predicted.states.view(),
        reference,
        normalization,
        config.eval_window,
    )?;
    Ok((
        TestEvaluation {
            start: range.start,
            end: range.end,
            metrics,
            windowed,
        },
        predicted,
    ))
}

fn check_dataset(graph: &ThermalGraph, dataset: &TelemetryDataset) -> Result<()> {
    if dataset.node_count() != graph.node_count() {
        return Err(Error::Config(format!(
            "dataset has {} measurement columns but the graph has {} nodes",
            dataset.node_count(),
            graph.node_count()
        )));
    }
    Ok(())
}

pub fn train(
    graph: &ThermalGraph,
    dataset: &TelemetryDataset,
    config: &TrainConfig,
) -> Result<RunReport> {
    config.validate()?;
    check_dataset(graph, dataset)?;
    let normalization = dataset.train_scales(config.scale_floor)?;
    let train_batch = make_windows(dataset, Split::Train, config.window_len)?;
    let valid_batch = make_windows(dataset, Split::Valid, config.window_len)?;
    let scales = ScaleVector::from_graph(graph);
    let train_cfg = config.rollout_config(dataset.dt, config.limiter);
    let valid_cfg = config.rollout_config(dataset.dt, false);
    let train_obj = Objective::new(graph, &scales, &normalization, &train_cfg)?;
    let valid_obj = Objective::new(graph, &scales, &normalization, &valid_cfg)?;

    let names = graph.parameter_names();
    let mut traces: Vec<ParameterTrace> = names
        .iter()
        .map(|id| ParameterTrace {
            id: id.clone(),
            values: Vec::new(),
        })
        .collect();
    let mut train_loss = Vec::new();
    let mut valid_loss = Vec::new();

    let mut state = AdamState::new(init_raw(config.seed, graph, config.init));
    let mut best: Option<(usize, f64, RawParameters)> = None;
    let mut since_best = 0usize;
    let mut consecutive_rejected = 0usize;
    let mut rejected_steps = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    while train_loss.len() < config.max_epochs {
        let epoch = train_loss.len();
        let evaluated = train_obj
            .loss_and_gradient(&state.raw, &train_batch)
            .and_then(|report| Ok((report, valid_obj.loss(&state.raw, &valid_batch)?)))
            .and_then(|(report, valid)| {
                let next = adam_update(
                    &state,
                    &report.grad_raw,
                    config.lr,
                    config.beta1,
                    config.beta2,
                    config.eps,
                )?;
                Ok((report.loss, valid, next))
            });
        let (loss, valid, next) = match evaluated {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                rejected_steps += 1;
                consecutive_rejected += 1;
                log::warn!("epoch {epoch}: step rejected ({e})");
                if consecutive_rejected > config.max_rejected {
                    return Err(Error::TrainingFailure(format!(
                        "{consecutive_rejected} consecutive rejected steps at epoch {epoch}; last error: {e}"
                    )));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        consecutive_rejected = 0;

        let physical = embed(&state.raw, &scales, graph.node_count())?.to_vec();
        for (trace, value) in traces.iter_mut().zip(physical) {
            trace.values.push(value);
        }
        train_loss.push(loss);
        valid_loss.push(valid);
        log::debug!("epoch {epoch}: train {loss:.6e} valid {valid:.6e}");

        if best.as_ref().is_none_or(|(_, b, _)| valid < *b) {
            best = Some((epoch, valid, state.raw.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            stop_reason = StopReason::Patience;
            break;
        }
        state = next;
    }

    let (best_epoch, best_valid_loss, final_raw) = best.expect("at least one epoch");
    let final_params = embed(&final_raw, &scales, graph.node_count())?;
    let (test, _) = evaluate_test(graph, dataset, &final_params, &normalization, config)?;
    log::info!(
        "trained {} epochs ({:?}); best epoch {best_epoch}, valid {best_valid_loss:.4e}, test rmse {:.4e}, pcc {:.5}",
        train_loss.len(),
        stop_reason,
        test.metrics.rmse_normalized,
        test.metrics.pcc
    );
    Ok(RunReport {
        config: config.clone(),
        seed: config.seed,
        parameter_names: names,
        normalization,
        epochs_run: train_loss.len(),
        best_epoch,
        stop_reason,
        rejected_steps,
        train_loss,
        valid_loss,
        traces,
        best_valid_loss,
        final_raw,
        final_params,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub reports: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
}

/// `runs` independent trainings with seeds `seed + k`, each on the dataset
/// produced by `generator(k, seed + k)`.
pub fn multi_run<G>(
    graph: &ThermalGraph,
    generator: G,
    config: &TrainConfig,
    runs: usize,
) -> Result<MultiRun>
where
    G: Fn(usize, u64) -> Result<TelemetryDataset> + Sync,
{
    if runs < 2 {
        return Err(Error::Config(format!(
            "multi_run needs at least 2 runs, got {runs}"
        )));
    }
    config.validate()?;
    let outcomes: Vec<(usize, u64, Result<RunReport>)> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let seed = config.seed.wrapping_add(k as u64);
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            (
                k,
                seed,
                generator(k, seed).and_then(|d| train(graph, &d, &cfg)),
            )
        })
        .collect();
    let mut result = MultiRun {
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for (run, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => result.reports.push(r),
            Err(e) => {
                log::warn!("run {run} (seed {seed}) failed: {e}");
                result.failures.push(RunFailure {
                    run,
                    seed,
                    message: e.to_string(),
                })
            }
        }
    }
    if result.reports.is_empty() {
        return Err(Error::TrainingFailure(format!("all {runs} runs failed")));
    }
    Ok(result)
}
