//! File formats: dataset CSV with metadata sidecar, JSON documents and the
//! tidy CSV outputs. Every CSV starts with a `# config_hash=<hex>` line;
//! floats use the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::NoiseConfig;
use crate::datagen::sensors::SensorLayout;
use crate::dataset::{SplitRanges, TelemetryDataset};
use crate::error::{Error, Result};
use crate::eval::StabilityReport;
use crate::graph::ThermalGraph;
use crate::integrate::Trajectory;
use crate::training::RunReport;

pub const HASH_PREFIX: &str = "# config_hash=";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = create(path)?;
    writeln!(file, "{HASH_PREFIX}{hash}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Hash recorded on the first line of a CSV written by this module.
pub fn read_csv_hash(path: impl AsRef<Path>) -> Result<Option<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(first
        .trim_end()
        .strip_prefix(HASH_PREFIX)
        .map(str::to_string))
}

/// Writes `t,u_1..u_n,y_1..y_n`, one row per sample.
pub fn write_dataset_csv(
    path: impl AsRef<Path>,
    dataset: &TelemetryDataset,
    hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let n = dataset.node_count();
    let mut w = csv_writer(path, hash)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("u_{i}")))
        .chain((1..=n).map(|i| format!("y_{i}")))
        .collect();
    w.write_record(&header)?;
    for k in 0..dataset.len() {
        let row: Vec<String> = std::iter::once(num(k as f64 * dataset.dt))
            .chain(dataset.inputs.row(k).iter().map(|v| num(*v)))
            .chain(dataset.measurements.row(k).iter().map(|v| num(*v)))
            .collect();
        w.write_record(&row)?;
    }
    finish(path, w)
}

/// Reads a dataset CSV; `dt` is taken from the time column, which must be
/// uniform. The split is left unset.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<TelemetryDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 || &header[0] != "t" {
        return Err(Error::Config(format!(
            "{}: expected header t,u_1..u_n,y_1..y_n, got {} columns",
            path.display(),
            cols
        )));
    }
    let n = (cols - 1) / 2;
    for i in 0..n {
        if header[1 + i] != format!("u_{}", i + 1) || header[1 + n + i] != format!("y_{}", i + 1) {
            return Err(Error::Config(format!(
                "{}: unexpected column names",
                path.display()
            )));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!(
                    "{}: row {}: cannot parse {s:?} as a number",
                    path.display(),
                    line + 1
                ))
            })
        };
        times.push(parse(&rec[0])?);
        for v in rec.iter().skip(1) {
            values.push(parse(v)?);
        }
    }
    let len = times.len();
    if len < 2 {
        return Err(Error::Config(format!(
            "{}: dataset needs at least two rows",
            path.display()
        )));
    }
    let dt = times[1] - times[0];
    let uniform = times.iter().enumerate().all(|(k, t)| {
        (t - times[0] - k as f64 * dt).abs() <= 1e-9 * dt.abs().max(1.0) * (k as f64 + 1.0)
    });
    if !uniform {
        return Err(Error::Config(format!(
            "{}: time column is not uniformly spaced",
            path.display()
        )));
    }
    let all = Array2::from_shape_vec((len, 2 * n), values).expect("rows have equal length");
    let inputs = all.slice(ndarray::s![.., ..n]).to_owned();
    let measurements = all.slice(ndarray::s![.., n..]).to_owned();
    TelemetryDataset::new(dt, inputs, measurements)
}

/// Companion of a generated dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config_hash: String,
    pub samples: usize,
    pub dt: f64,
    pub node_count: usize,
    pub split: SplitRanges,
    pub noise: NoiseConfig,
    /// Seeds of the stochastic forcings, in configuration order.
    pub forcing_seeds: Vec<u64>,
    pub sensors: Option<SensorLayout>,
    pub temperature_min: f64,
    pub temperature_max: f64,
}

/// Sidecar path `<stem>.meta.json` next to a dataset CSV.
pub fn metadata_path(dataset: impl AsRef<Path>) -> PathBuf {
    dataset.as_ref().with_extension("meta.json")
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config(format!("{}: {field}: {}", path.display(), e.into_inner()))
    })
}

/// Training output together with what is needed to re-evaluate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config_hash: String,
    /// Hash carried by the dataset the model was trained on.
    pub dataset_hash: Option<String>,
    pub graph: ThermalGraph,
    pub split: SplitRanges,
    pub report: RunReport,
}

/// `id,value,scale` for every learned parameter.
pub fn write_parameter_csv(
    path: impl AsRef<Path>,
    graph: &ThermalGraph,
    report: &RunReport,
    hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path, hash)?;
    w.write_record(["id", "value", "scale"])?;
    let scales = graph
        .nodes()
        .iter()
        .map(|n| n.gamma_scale)
        .chain(graph.edges().iter().map(|e| e.delta_scale));
    for ((id, value), scale) in report
        .parameter_names
        .iter()
        .zip(report.final_params.to_vec())
        .zip(scales)
    {
        w.write_record([id.clone(), num(value), num(scale)])?;
    }
    finish(path, w)
}

/// `id,mean,std,snr,class` for parameters, then the metric rows.
pub fn write_stability_csv(
    path: impl AsRef<Path>,
    report: &StabilityReport,
    hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path, hash)?;
    w.write_record(["id", "mean", "std", "snr", "class"])?;
    for q in report.parameters.iter().chain(&report.metrics) {
        w.write_record([
            q.id.clone(),
            num(q.mean),
            num(q.std),
            num(q.snr),
            q.class.as_str().to_string(),
        ])?;
    }
    finish(path, w)
}

/// `t,pred_1..pred_n,ref_1..ref_n` over a predicted trajectory.
pub fn write_prediction_csv(
    path: impl AsRef<Path>,
    predicted: &Trajectory,
    reference: ndarray::ArrayView2<f64>,
    hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let n = predicted.states.ncols();
    if reference.dim() != predicted.states.dim() {
        return Err(Error::Config(
            "prediction and reference differ in shape".into(),
        ));
    }
    let mut w = csv_writer(path, hash)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("pred_{i}")))
        .chain((1..=n).map(|i| format!("ref_{i}")))
        .collect();
    w.write_record(&header)?;
    for (k, t) in predicted.times.iter().enumerate() {
        let row: Vec<String> = std::iter::once(num(*t))
            .chain(predicted.states.row(k).iter().map(|v| num(*v)))
            .chain(reference.row(k).iter().map(|v| num(*v)))
            .collect();
        w.write_record(&row)?;
    }
    finish(path, w)
}

/// Generic tidy table with the hash line.
pub fn write_table(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: &[Vec<String>],
    hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path, hash)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    finish(path, w)
}

pub fn format_float(v: f64) -> String {
    num(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("thermo-netid-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let inputs = Array2::from_shape_fn((5, 2), |(k, i)| 0.1 * k as f64 + 1.0 / 3.0 + i as f64);
        let meas = Array2::from_shape_fn((5, 2), |(k, i)| {
            300.0 + (k as f64).sqrt() * std::f64::consts::PI + i as f64
        });
        let d = TelemetryDataset::new(10.0, inputs, meas).unwrap();
        let p = tmp("round.csv");
        write_dataset_csv(&p, &d, "abc").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# config_hash=abc"));
        assert_eq!(lines.next(), Some("t,u_1,u_2,y_1,y_2"));
        assert_eq!(read_csv_hash(&p).unwrap().as_deref(), Some("abc"));
        let back = read_dataset_csv(&p).unwrap();
        assert_eq!(back, d);
        write_dataset_csv(&p, &d, "abc").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
    }

    #[test]
    fn malformed_datasets_rejected() {
        let p = tmp("bad.csv");
        std::fs::write(&p, "t,u_1,y_1\n0,1,2\n1,1,x\n").unwrap();
        assert!(matches!(read_dataset_csv(&p), Err(Error::Config(_))));
        std::fs::write(&p, "t,u_1\n0,1\n").unwrap();
        assert!(read_dataset_csv(&p).is_err());
        std::fs::write(&p, "t,u_1,y_1\n0,1,2\n1,1,2\n3,1,2\n").unwrap();
        assert!(read_dataset_csv(&p).is_err());
        assert!(matches!(
            read_dataset_csv(tmp("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn number_format_round_trips() {
        for v in [
            0.1,
            1.0 / 3.0,
            1e-300,
            6.02214076e23,
            -0.0,
            289.99999999999994,
        ] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
