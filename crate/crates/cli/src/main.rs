use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use thermo_netid::config::ExperimentConfig;
use thermo_netid::dataset::split_ranges;
use thermo_netid::experiment::{generate, noisy_copy, stability_study};
use thermo_netid::io::{
    self, format_float, metadata_path, read_csv_hash, read_dataset_csv, ReportDocument,
};
use thermo_netid::training::{evaluate_test, train};
use thermo_netid::{Error, TelemetryDataset};

const THREADS_VAR: &str = "THERMO_NETID_THREADS";

#[derive(Parser)]
#[command(
    name = "thermo-netid",
    version,
    about = "Identify lumped thermal network models from telemetry"
)]
struct Cli {
    /// Directory for all outputs; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepParam {
    #[value(name = "T_b", alias = "window_len")]
    WindowLen,
    Lr,
    Noise,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the finite element ground truth and write the dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model on a dataset and write the run report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Override `train.max_epochs`.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Recompute test metrics of a report and write plot-ready predictions.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate even if the dataset hash differs from the report.
        #[arg(long)]
        force: bool,
    },
    /// Train once per value of one setting and tabulate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dataset to train on; generated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Repeated noisy trainings and the parameter stability table.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(value) = std::env::var(THREADS_VAR) {
        let n: usize = value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_VAR} must be a positive integer, got {value:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn output_dir(cli_dir: &Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli_dir
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(path: &Path, max_epochs: Option<usize>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(e) = max_epochs {
        cfg.train.max_epochs = e;
        cfg.train.validate()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Generate { config } => {
            let cfg = load_config(config, None)?;
            cmd_generate(&cfg, &output_dir(&cli.output_dir, Some(&cfg)))
        }
        Command::Train {
            config,
            dataset,
            max_epochs,
        } => {
            let cfg = load_config(config, *max_epochs)?;
            cmd_train(&cfg, dataset, &output_dir(&cli.output_dir, Some(&cfg)))
        }
        Command::Evaluate {
            report,
            dataset,
            force,
        } => cmd_evaluate(report, dataset, *force, &output_dir(&cli.output_dir, None)),
        Command::Sweep {
            config,
            dataset,
            param,
            values,
            max_epochs,
        } => {
            let cfg = load_config(config, *max_epochs)?;
            cmd_sweep(
                &cfg,
                dataset.as_deref(),
                *param,
                values,
                &output_dir(&cli.output_dir, Some(&cfg)),
            )
        }
        Command::Stability {
            config,
            runs,
            max_epochs,
        } => {
            let cfg = load_config(config, *max_epochs)?;
            cmd_stability(&cfg, *runs, &output_dir(&cli.output_dir, Some(&cfg)))
        }
    }
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let generated = generate(cfg)?;
    let csv = out.join("dataset.csv");
    io::write_dataset_csv(&csv, &generated.dataset, &generated.metadata.config_hash)?;
    io::write_json(metadata_path(&csv), &generated.metadata)?;
    let m = &generated.metadata;
    println!("wrote {}", csv.display());
    println!(
        "samples {}  dt {} s  sensors {}  temperature [{:.3}, {:.3}] K",
        m.samples, m.dt, m.node_count, m.temperature_min, m.temperature_max
    );
    println!(
        "split train {:?} valid {:?} test {:?}",
        m.split.train, m.split.valid, m.split.test
    );
    println!("config_hash {}", m.config_hash);
    Ok(())
}

fn load_split_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<TelemetryDataset, Error> {
    let dataset = read_dataset_csv(path)?;
    if dataset.node_count() != cfg.graph.node_count() {
        return Err(Error::Config(format!(
            "{} has {} sensor columns but the graph has {} nodes",
            path.display(),
            dataset.node_count(),
            cfg.graph.node_count()
        )));
    }
    let split = split_ranges(dataset.len(), cfg.split.fractions(), cfg.train.window_len)?;
    dataset.with_split(split)
}

fn train_and_write(
    cfg: &ExperimentConfig,
    dataset: &TelemetryDataset,
    dataset_hash: Option<String>,
    out: &Path,
) -> Result<ReportDocument, Error> {
    let report = train(&cfg.graph, dataset, &cfg.train)?;
    let hash = cfg.hash();
    let doc = ReportDocument {
        config_hash: hash.clone(),
        dataset_hash,
        graph: cfg.graph.clone(),
        split: dataset.split.clone().expect("split assigned"),
        report,
    };
    io::write_json(out.join("report.json"), &doc)?;
    io::write_parameter_csv(out.join("parameters.csv"), &cfg.graph, &doc.report, &hash)?;
    Ok(doc)
}

fn print_report(doc: &ReportDocument) {
    let r = &doc.report;
    let m = &r.test.metrics;
    println!(
        "epochs {} ({:?}), best epoch {}, train loss {:.4e}, valid loss {:.4e}",
        r.epochs_run,
        r.stop_reason,
        r.best_epoch,
        r.best_train_loss(),
        r.best_valid_loss
    );
    println!(
        "test rmse {:.4e} (normalized) {:.4e} K, pcc {:.5}",
        m.rmse_normalized, m.rmse_kelvin, m.pcc
    );
}

fn cmd_train(cfg: &ExperimentConfig, dataset_path: &Path, out: &Path) -> Result<(), Error> {
    let dataset = load_split_dataset(cfg, dataset_path)?;
    let doc = train_and_write(cfg, &dataset, read_csv_hash(dataset_path)?, out)?;
    print_report(&doc);
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_evaluate(
    report_path: &Path,
    dataset_path: &Path,
    force: bool,
    out: &Path,
) -> Result<(), Error> {
    let doc: ReportDocument = io::read_json(report_path)?;
    let dataset_hash = read_csv_hash(dataset_path)?;
    if dataset_hash != doc.dataset_hash && !force {
        return Err(Error::Config(format!(
            "dataset hash {:?} does not match the report ({:?}); pass --force to evaluate anyway",
            dataset_hash, doc.dataset_hash
        )));
    }
    let dataset = read_dataset_csv(dataset_path)?;
    if dataset.node_count() != doc.graph.node_count() {
        return Err(Error::Config(format!(
            "dataset has {} sensor columns but the report's graph has {} nodes",
            dataset.node_count(),
            doc.graph.node_count()
        )));
    }
    let dataset = dataset.with_split(doc.split.clone())?;
    let r = &doc.report;
    let (test, predicted) = evaluate_test(
        &doc.graph,
        &dataset,
        &r.final_params,
        &r.normalization,
        &r.config,
    )?;
    let stored = &r.test.metrics;
    let deviation = [
        (test.metrics.rmse_normalized - stored.rmse_normalized).abs(),
        (test.metrics.rmse_kelvin - stored.rmse_kelvin).abs(),
        (test.metrics.pcc - stored.pcc).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let reference = dataset
        .measurements
        .slice(ndarray::s![test.start..test.end, ..]);
    io::write_prediction_csv(
        out.join("predictions.csv"),
        &predicted,
        reference,
        &doc.config_hash,
    )?;
    let metrics = serde_json::json!({
        "config_hash": doc.config_hash,
        "dataset_hash": dataset_hash,
        "test": test,
        "max_deviation_from_report": deviation,
        "matches_report": deviation <= 1e-10,
    });
    io::write_json(out.join("metrics.json"), &metrics)?;
    println!(
        "test rmse {:.4e} (normalized) {:.4e} K, pcc {:.5}; max deviation from report {:.2e}",
        test.metrics.rmse_normalized, test.metrics.rmse_kelvin, test.metrics.pcc, deviation
    );
    if deviation > 1e-10 {
        return Err(Error::Numerical(format!(
            "recomputed metrics deviate from the report by {deviation:e}"
        )));
    }
    Ok(())
}

fn sweep_label(param: SweepParam) -> &'static str {
    match param {
        SweepParam::WindowLen => "T_b",
        SweepParam::Lr => "lr",
        SweepParam::Noise => "noise",
    }
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    dataset_path: Option<&Path>,
    param: SweepParam,
    values: &[f64],
    out: &Path,
) -> Result<(), Error> {
    // noise sweeps need the clean series; other sweeps use the given file
    let (base, base_hash) = match (param, dataset_path) {
        (SweepParam::Noise, _) | (_, None) => {
            let g = generate(cfg)?;
            let data = if matches!(param, SweepParam::Noise) {
                g.clean
            } else {
                g.dataset
            };
            (data, Some(g.metadata.config_hash))
        }
        (_, Some(p)) => (load_split_dataset(cfg, p)?, read_csv_hash(p)?),
    };
    let mut rows = Vec::new();
    for &value in values {
        let mut run_cfg = cfg.clone();
        let mut data = base.clone();
        let prepared = match param {
            SweepParam::WindowLen => {
                if value.fract() != 0.0 || value < 2.0 {
                    Err(Error::Config(format!(
                        "T_b values must be integers >= 2, got {value}"
                    )))
                } else {
                    run_cfg.train.window_len = value as usize;
                    run_cfg.train.validate()
                }
            }
            SweepParam::Lr => {
                run_cfg.train.lr = value;
                run_cfg.train.validate()
            }
            SweepParam::Noise => {
                run_cfg.noise.level = value;
                noisy_copy(&base, value, cfg.noise.seed).map(|d| data = d)
            }
        };
        let dir = out.join(format!("{}_{}", sweep_label(param), format_float(value)));
        let start = Instant::now();
        let outcome =
            prepared.and_then(|_| train_and_write(&run_cfg, &data, base_hash.clone(), &dir));
        let wall = start.elapsed().as_secs_f64();
        let row = match &outcome {
            Ok(doc) => {
                let r = &doc.report;
                let m = &r.test.metrics;
                println!(
                    "{}={}: epochs {}, test rmse {:.4e}, pcc {:.5}, {:.1} s",
                    sweep_label(param),
                    value,
                    r.epochs_run,
                    m.rmse_normalized,
                    m.pcc,
                    wall
                );
                vec![
                    format_float(value),
                    "ok".into(),
                    r.epochs_run.to_string(),
                    format_float(r.best_train_loss()),
                    format_float(r.best_valid_loss),
                    format_float(m.rmse_normalized),
                    format_float(m.rmse_kelvin),
                    format_float(m.pcc),
                    format_float(wall),
                ]
            }
            Err(e) => {
                eprintln!("{}={}: failed: {e}", sweep_label(param), value);
                let mut row = vec![format_float(value), format!("failed: {e}")];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(format_float(wall));
                row
            }
        };
        rows.push(row);
    }
    let header = [
        sweep_label(param),
        "status",
        "epochs",
        "train_loss",
        "valid_loss",
        "test_rmse",
        "test_rmse_kelvin",
        "test_pcc",
        "wall_time_s",
    ];
    let path = out.join("sweep.csv");
    io::write_table(&path, &header, &rows, &cfg.hash())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_stability(cfg: &ExperimentConfig, runs: usize, out: &Path) -> Result<(), Error> {
    let generated = generate(cfg)?;
    let (multi, report) = stability_study(cfg, &generated.clean, runs)?;
    let hash = cfg.hash();
    io::write_stability_csv(out.join("stability.csv"), &report, &hash)?;
    let summary = serde_json::json!({
        "config_hash": hash,
        "runs": runs,
        "failed_runs": multi.failures,
        "stability": report,
    });
    io::write_json(out.join("stability.json"), &summary)?;
    let c = &report.counts;
    println!(
        "{} of {} runs succeeded; parameters strong {} stable {} marginal {} unstable {} (total {})",
        multi.reports.len(),
        runs,
        c.strong,
        c.stable,
        c.marginal,
        c.unstable,
        c.total()
    );
    for q in &report.metrics {
        println!("{}: mean {:.4e} snr {}", q.id, q.mean, format_float(q.snr));
    }
    println!("wrote {}", out.join("stability.csv").display());
    Ok(())
}
