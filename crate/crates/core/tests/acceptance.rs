//! Acceptance gate. Every test prints one `[PASS]`/`[FAIL]` line with the
//! measured quantities before asserting, so `--nocapture` output doubles as
//! the acceptance report.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermo_netid::config::ExperimentConfig;
use thermo_netid::datagen::fem::{
    build_fem_operators, FemConfig, FemSolver, Material, Rect, StepForcing, Subdomain,
};
use thermo_netid::datagen::forcing::sample_gp_forcing;
use thermo_netid::datagen::generate_dataset;
use thermo_netid::dataset::{split_ranges, Window, WindowBatch};
use thermo_netid::experiment::{generate, noisy_copy, stability_study, Generated};
use thermo_netid::graph::{
    assemble_laplacian, dissipation_rate, laplacian_apply, quadratic_energy, thermal_content,
    EdgeSpec, NodeKind, NodeSpec, PhysicalParameters, ThermalGraph,
};
use thermo_netid::integrate::{batched_rollout, limiter, rollout, RolloutConfig};
use thermo_netid::param::{embed, RawParameters, ScaleVector};
use thermo_netid::training::{train, RunReport, TrainConfig};
use thermo_netid::{Objective, TelemetryDataset};

fn verdict(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn config(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name]
        .iter()
        .collect();
    ExperimentConfig::from_path(&path).unwrap()
}

fn benchmark_config() -> &'static ExperimentConfig {
    static CFG: OnceLock<ExperimentConfig> = OnceLock::new();
    CFG.get_or_init(|| config("benchmark.json"))
}

fn benchmark_data() -> &'static Generated {
    static DATA: OnceLock<Generated> = OnceLock::new();
    DATA.get_or_init(|| generate(benchmark_config()).unwrap())
}

/// Noise-free benchmark run with its wall time.
fn benchmark_run() -> &'static (RunReport, Duration) {
    static RUN: OnceLock<(RunReport, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = benchmark_config();
        let start = Instant::now();
        let report = train(&cfg.graph, &benchmark_data().clean, &cfg.train).unwrap();
        (report, start.elapsed())
    })
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, radiative: bool) -> ThermalGraph {
    let nodes = (0..n)
        .map(|id| {
            let boundary = radiative && rng.random_bool(0.5);
            NodeSpec {
                id,
                kind: if boundary {
                    NodeKind::Boundary
                } else {
                    NodeKind::Internal
                },
                kappa_rad: if boundary {
                    rng.random_range(1e-9..5e-9)
                } else {
                    0.0
                },
                gamma_scale: rng.random_range(0.01..0.05),
            }
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random_bool(0.4) {
                edges.push(EdgeSpec {
                    i,
                    j,
                    delta_scale: rng.random_range(1.0..8.0),
                });
            }
        }
    }
    ThermalGraph::new(nodes, edges).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, graph: &ThermalGraph) -> PhysicalParameters {
    let gamma = graph
        .nodes()
        .iter()
        .map(|s| s.gamma_scale * rng.random_range(0.1..0.9))
        .collect();
    let delta = graph
        .edges()
        .iter()
        .map(|e| e.delta_scale * rng.random_range(0.1..0.9))
        .collect();
    PhysicalParameters::new(graph, gamma, delta).unwrap()
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for system in 0..50 {
        let n = rng.random_range(1..=5);
        let steps = rng.random_range(2..=50);
        let limiter_on = system % 2 == 1;
        let graph = random_graph(&mut rng, n, true);
        let scales = ScaleVector::from_graph(&graph);
        let truth = random_params(&mut rng, &graph);
        let cfg = RolloutConfig::new(1.0).with_limiter(limiter_on);
        let windows = (0..2)
            .map(|w| {
                let inputs = Array2::from_shape_fn((steps, n), |_| rng.random_range(-50.0..80.0));
                // starting outside [v, 2v] exercises the limiter's outer branches
                let init: Vec<f64> = (0..n)
                    .map(|_| {
                        if limiter_on {
                            rng.random_range(150.0..460.0)
                        } else {
                            rng.random_range(270.0..330.0)
                        }
                    })
                    .collect();
                let mut targets = rollout(&graph, &truth, &init, inputs.view(), &cfg)
                    .unwrap()
                    .states;
                targets.mapv_inplace(|v| v + rng.random_range(-2.0..2.0));
                Window {
                    start: w * steps,
                    initial: init,
                    inputs,
                    targets,
                }
            })
            .collect();
        let batch = WindowBatch {
            windows,
            window_len: steps,
        };
        let raw = RawParameters(
            (0..graph.parameter_count())
                .map(|_| rng.random_range(-0.6..0.6))
                .collect(),
        );
        let norm: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let obj = Objective::new(&graph, &scales, &norm, &cfg).unwrap();
        let adjoint = obj.loss_and_gradient(&raw, &batch).unwrap().grad_raw;
        let fd = obj.finite_difference_gradient(&raw, &batch, 1e-5).unwrap();
        let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-300);
        for (a, f) in adjoint.iter().zip(&fd) {
            worst = worst.max((a - f).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "gradient correctness",
        worst <= 1e-5 && elapsed < Duration::from_secs(120),
        format!(
            "50 systems, max relative error {worst:.2e} (<= 1e-5), {:.2} s (< 120 s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn structural_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut row_sums_exact = true;
    let mut symmetric = true;
    let mut min_eig = f64::INFINITY;
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let graph = random_graph(&mut rng, n, false);
        let params = random_params(&mut rng, &graph);
        let applied = laplacian_apply(&graph, &params.delta, &vec![1.0; n]).unwrap();
        let lap = assemble_laplacian(&graph, &params.delta).unwrap();
        row_sums_exact &= applied.iter().all(|v| *v == 0.0);
        // off-diagonals in column order, then the diagonal
        row_sums_exact &= (0..n).all(|i| {
            let off = (0..n).filter(|j| *j != i).fold(0.0, |s, j| s + lap[(i, j)]);
            off + lap[(i, i)] == 0.0
        });
        symmetric &= lap == lap.transpose();
        let scale = lap.amax().max(1.0);
        min_eig = min_eig.min(lap.symmetric_eigenvalues().min() / scale);
    }
    let v = 200.0;
    let identity_exact = (0..=200_000).all(|k| {
        let t = v + v * k as f64 / 200_000.0;
        limiter(t, v) == t
    });
    let scales = ScaleVector::new((0..64).map(|k| 0.5 + k as f64).collect()).unwrap();
    let mut embed_inside = true;
    for _ in 0..2000 {
        let raw = RawParameters((0..64).map(|_| rng.random_range(-8.0..8.0)).collect());
        let p = embed(&raw, &scales, 32).unwrap();
        embed_inside &= p
            .to_vec()
            .iter()
            .zip(scales.as_slice())
            .all(|(x, s)| *x > 0.0 && x < s);
    }
    let mut batched_exact = true;
    for _ in 0..20 {
        let n = rng.random_range(1..=6);
        let graph = random_graph(&mut rng, n, true);
        let params = random_params(&mut rng, &graph);
        let cfg = RolloutConfig::new(1.0).with_limiter(rng.random_bool(0.5));
        let len = rng.random_range(1..40);
        let windows: Vec<Window> = (0..rng.random_range(1..5))
            .map(|w| Window {
                start: w * len,
                initial: (0..n).map(|_| rng.random_range(250.0..350.0)).collect(),
                inputs: Array2::from_shape_fn((len, n), |_| rng.random_range(-20.0..40.0)),
                targets: Array2::zeros((len, n)),
            })
            .collect();
        let batch = WindowBatch {
            windows,
            window_len: len,
        };
        let together = batched_rollout(&graph, &params, &batch, &cfg).unwrap();
        for (w, t) in batch.windows.iter().zip(&together) {
            let alone = rollout(&graph, &params, &w.initial, w.inputs.view(), &cfg).unwrap();
            let offset = w.start as f64 * cfg.dt;
            batched_exact &= alone.states == t.states
                && alone
                    .times
                    .iter()
                    .zip(&t.times)
                    .all(|(a, b)| (a + offset - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    let pass = row_sums_exact
        && symmetric
        && min_eig >= -1e-12
        && identity_exact
        && embed_inside
        && batched_exact
        && elapsed < Duration::from_secs(60);
    verdict(
        "structural invariants",
        pass,
        format!(
            "L1=0 exact {row_sums_exact}, symmetric {symmetric}, min scaled eigenvalue {min_eig:.1e}, \
             limiter identity exact {identity_exact}, embedding inside (0,s) {embed_inside}, \
             batched equals sequential {batched_exact}, {:.2} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    );
}

/// Largest eigenvalue of `Gamma L`, via the similar matrix `G^1/2 L G^1/2`.
fn max_rate(graph: &ThermalGraph, params: &PhysicalParameters) -> f64 {
    let lap = assemble_laplacian(graph, &params.delta).unwrap();
    let root = DVector::from_iterator(params.gamma.len(), params.gamma.iter().map(|g| g.sqrt()));
    let sym = DMatrix::from_diagonal(&root) * lap * DMatrix::from_diagonal(&root);
    sym.symmetric_eigenvalues().max()
}

#[test]
fn conservation_and_dissipation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut drift = 0.0f64;
    let mut monotone = true;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut dissipation_err = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(2..=8);
        let graph = random_graph(&mut rng, n, false);
        let params = random_params(&mut rng, &graph);
        // half the RK4 stability interval on the negative real axis
        let dt = 0.5 * 2.785 / max_rate(&graph, &params);
        let cfg = RolloutConfig::new(dt).with_radiative(false);
        let init: Vec<f64> = (0..n).map(|_| rng.random_range(250.0..350.0)).collect();
        let traj = rollout(
            &graph,
            &params,
            &init,
            Array2::zeros((1001, n)).view(),
            &cfg,
        )
        .unwrap();
        let h0 = thermal_content(&params, &init).unwrap();
        let mut prev = quadratic_energy(&params, &init).unwrap();
        for row in traj.states.rows() {
            let state = row.to_vec();
            drift = drift.max(((thermal_content(&params, &state).unwrap() - h0) / h0).abs());
            let e = quadratic_energy(&params, &state).unwrap();
            worst_rise = worst_rise.max((e - prev) / prev);
            monotone &= e <= prev * (1.0 + 1e-14);
            prev = e;
        }
        for _ in 0..20 {
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-400.0..400.0)).collect();
            let lt = laplacian_apply(&graph, &params.delta, &t).unwrap();
            let quad: f64 = t.iter().zip(&lt).map(|(a, b)| a * b).sum();
            let d = dissipation_rate(&graph, &params.delta, &t).unwrap();
            dissipation_err = dissipation_err.max((d - quad).abs() / quad.abs().max(1.0));
        }
    }
    verdict(
        "conservation and dissipation",
        drift < 1e-10 && monotone && dissipation_err <= 1e-12,
        format!(
            "thermal content drift {drift:.1e} (< 1e-10) over 1000 steps, energy monotone {monotone} (largest relative step change {worst_rise:.1e}), \
             dissipation identity error {dissipation_err:.1e} (<= 1e-12)"
        ),
    );
}

#[test]
fn self_consistency_identification() {
    let start = Instant::now();
    let nodes = (0..4)
        .map(|id| NodeSpec {
            id,
            kind: if id < 2 {
                NodeKind::Boundary
            } else {
                NodeKind::Internal
            },
            kappa_rad: if id < 2 { 5e-8 } else { 0.0 },
            gamma_scale: 2e-4,
        })
        .collect();
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
        .iter()
        .map(|&(i, j)| EdgeSpec {
            i,
            j,
            delta_scale: 50.0,
        })
        .collect();
    let graph = ThermalGraph::new(nodes, edges).unwrap();
    let truth = PhysicalParameters::new(
        &graph,
        vec![6e-5, 1.1e-4, 8e-5, 1.4e-4],
        vec![12.0, 30.0, 8.0, 21.0, 17.0],
    )
    .unwrap();
    let (samples, dt) = (4000, 10.0);
    let mut inputs = Array2::zeros((samples, 4));
    for (i, offset) in [400.0, 300.0, 200.0, 150.0].into_iter().enumerate() {
        let draw =
            sample_gp_forcing(600.0, 80.0 * 80.0, offset, samples, dt, 100 + i as u64).unwrap();
        inputs.column_mut(i).assign(&ndarray::Array1::from(draw));
    }
    let states = rollout(
        &graph,
        &truth,
        &[320.0; 4],
        inputs.view(),
        &RolloutConfig::new(dt),
    )
    .unwrap()
    .states;
    let train_cfg = TrainConfig {
        window_len: 200,
        ..TrainConfig::default()
    };
    let split = split_ranges(samples, (0.7, 0.15, 0.15), train_cfg.window_len).unwrap();
    let dataset = TelemetryDataset::new(dt, inputs, states)
        .unwrap()
        .with_split(split)
        .unwrap();
    let report = train(&graph, &dataset, &train_cfg).unwrap();
    let worst = report
        .final_params
        .to_vec()
        .iter()
        .zip(truth.to_vec())
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        "self-consistency identification",
        worst <= 0.01 && elapsed < Duration::from_secs(300),
        format!(
            "4 nodes, 9 parameters, max relative error {worst:.2e} (<= 1e-2) after {} epochs, {:.1} s (< 300 s)",
            report.epochs_run,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn benchmark_reproduction() {
    let start = Instant::now();
    let g = benchmark_data();
    let (report, train_time) = benchmark_run();
    let m = &report.test.metrics;
    let elapsed = start.elapsed().max(*train_time);
    verdict(
        "benchmark reproduction",
        m.pcc >= 0.97 && m.rmse_normalized <= 4e-2 && elapsed < Duration::from_secs(1800),
        format!(
            "{}x{} mesh, {} samples, test PCC {:.5} (>= 0.97), normalized RMSE {:.3e} (<= 4e-2), \
             RMSE {:.3} K, {:.1} s (< 1800 s)",
            benchmark_config().fem.as_ref().unwrap().nx,
            benchmark_config().fem.as_ref().unwrap().ny,
            g.clean.len(),
            m.pcc,
            m.rmse_normalized,
            m.rmse_kelvin,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn window_length_trend() {
    let cfg = config("window_sweep.json");
    let data = generate(&cfg).unwrap();
    let mut rows = Vec::new();
    for window_len in [500, 2000, 4000] {
        let mut train_cfg = cfg.train.clone();
        train_cfg.window_len = window_len;
        let start = Instant::now();
        let report = train(&cfg.graph, &data.dataset, &train_cfg).unwrap();
        rows.push((
            window_len,
            report.test.metrics.rmse_normalized,
            start.elapsed().as_secs_f64(),
        ));
    }
    let (short, mid, long) = (rows[0], rows[1], rows[2]);
    let rmse_ratio = short.1 / mid.1;
    let time_ratio = long.2 / short.2;
    verdict(
        "window-length trend",
        rmse_ratio >= 1.5 && time_ratio >= 2.0,
        format!(
            "test RMSE T_b=500 {:.3e}, T_b=2000 {:.3e}, T_b=4000 {:.3e}; ratio 500/2000 {rmse_ratio:.2} (>= 1.5); \
             wall time {:.1} s / {:.1} s / {:.1} s, ratio 4000/500 {time_ratio:.2} (>= 2)",
            short.1, mid.1, long.1, short.2, mid.2, long.2
        ),
    );
}

#[test]
fn noise_robustness() {
    let cfg = benchmark_config();
    let clean = &benchmark_data().clean;
    let mut runs = vec![(0.0, benchmark_run().0.clone())];
    for level in [0.01, 0.05] {
        let noisy = noisy_copy(clean, level, cfg.noise.seed).unwrap();
        runs.push((level, train(&cfg.graph, &noisy, &cfg.train).unwrap()));
    }
    let rmse: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.test.metrics.rmse_normalized)
        .collect();
    let taus: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.test.windowed.trend_tau)
        .collect();
    let non_decreasing = rmse.windows(2).all(|w| w[1] >= w[0]);
    let pcc_1 = runs[1].1.test.metrics.pcc;
    let max_tau = taus[1..].iter().fold(0.0f64, |m, t| m.max(t.abs()));
    verdict(
        "noise robustness",
        non_decreasing && pcc_1 >= 0.95 && max_tau < 0.5,
        format!(
            "test RMSE at 0/1/5% noise {:.3e} / {:.3e} / {:.3e} (non-decreasing {non_decreasing}); \
             PCC at 1% {pcc_1:.5} (>= 0.95); windowed-error Kendall tau at 1%/5% {:.2} / {:.2} (|tau| < 0.5)",
            rmse[0], rmse[1], rmse[2], taus[1], taus[2]
        ),
    );
}

#[test]
fn stability_study_over_ten_runs() {
    let cfg = config("stability.json");
    let clean = &benchmark_data().clean;
    assert_eq!(
        cfg.generation().unwrap(),
        benchmark_config().generation().unwrap()
    );
    let (multi, report) = stability_study(&cfg, clean, 10).unwrap();
    let completed = multi.reports.len() == 10 && multi.failures.is_empty();
    let min_metric = report
        .metrics
        .iter()
        .map(|q| q.snr)
        .fold(f64::INFINITY, f64::min);
    let metric_snrs: Vec<String> = report
        .metrics
        .iter()
        .map(|q| format!("{} {:.1}", q.id, q.snr))
        .collect();
    let strong = report.strong_fraction();
    verdict(
        "stability study",
        completed && min_metric > 30.0 && strong >= 0.7,
        format!(
            "{} of 10 runs completed; metric SNRs [{}] (all > 30); strong parameters {}/{} = {:.0}% (>= 70%)",
            multi.reports.len(),
            metric_snrs.join(", "),
            report.counts.strong,
            report.parameters.len(),
            100.0 * strong
        ),
    );
}

fn mass_content(mass: &nalgebra_sparse::CscMatrix<f64>, t: &[f64]) -> f64 {
    let col = DMatrix::from_column_slice(t.len(), 1, t);
    (mass * &col).sum()
}

#[test]
fn fem_oracles() {
    let cfg = FemConfig {
        lx: 2.0,
        ly: 2.0,
        nx: 16,
        ny: 16,
        background: Material {
            conductivity: 30.0,
            heat_capacity: 1.2e5,
        },
        subdomains: vec![Subdomain {
            name: "insert".into(),
            rect: Rect {
                x0: 0.5,
                x1: 1.5,
                y0: 0.5,
                y1: 1.0,
            },
            material: Material {
                conductivity: 150.0,
                heat_capacity: 2.5e5,
            },
        }],
        emissivity: 0.0,
        z_len: 1.0,
        dt: 10.0,
        initial_temperature: 290.0,
    };
    let ops = build_fem_operators(&cfg).unwrap();
    let n = cfg.dof_count();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let k_ones = (&ops.stiffness * &ones).amax();
    let mut solver = FemSolver::new(ops.clone()).unwrap();
    let mut t: Vec<f64> = (0..n).map(|k| 280.0 + (k % 11) as f64 * 2.0).collect();
    let h0 = mass_content(&ops.mass, &t);
    let zero = StepForcing {
        flux: [0.0; 4],
        source: vec![0.0],
    };
    let mut drift = 0.0f64;
    for _ in 0..200 {
        solver.step(&mut t, &zero).unwrap();
        drift = drift.max(((mass_content(&ops.mass, &t) - h0) / h0).abs());
    }
    let source = 400.0;
    let heat = StepForcing {
        flux: [0.0; 4],
        source: vec![source],
    };
    let gain = cfg.dt * source * cfg.subdomains[0].rect.area() * cfg.z_len;
    let mut balance = 0.0f64;
    for _ in 0..200 {
        let before = mass_content(&ops.mass, &t);
        solver.step(&mut t, &heat).unwrap();
        balance = balance.max(((mass_content(&ops.mass, &t) - before) - gain).abs() / gain);
    }

    let coarse_cfg = benchmark_config();
    let (fem, forcings, sensors) = coarse_cfg.generation().unwrap();
    let coarse = &benchmark_data().clean;
    let fine_fem = FemConfig {
        nx: 2 * fem.nx,
        ny: 2 * fem.ny,
        ..fem.clone()
    };
    let fine = generate_dataset(&fine_fem, forcings, sensors).unwrap();
    let mut mesh_rel = 0.0f64;
    let mut mesh_abs = 0.0f64;
    for (a, b) in fine.measurements.iter().zip(coarse.measurements.iter()) {
        mesh_abs = mesh_abs.max((a - b).abs());
        mesh_rel = mesh_rel.max((a - b).abs() / b.abs());
    }
    verdict(
        "fem oracles",
        k_ones <= 1e-10 && drift <= 1e-10 && balance <= 1e-8 && mesh_rel <= 0.01,
        format!(
            "|K 1|max {k_ones:.1e}, insulated content drift {drift:.1e} (<= 1e-10), source balance error {balance:.1e}, \
             {}x{} vs {}x{} sensor series max relative difference {mesh_rel:.2e} (<= 1e-2), max {mesh_abs:.3} K",
            fine_fem.nx, fine_fem.ny, fem.nx, fem.ny
        ),
    );
}
