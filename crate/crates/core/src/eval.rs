//! Trajectory metrics, windowed error summaries and the cross-run
//! parameter stability study.

use std::cmp::Ordering;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::training::RunReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub rmse_normalized: f64,
    pub rmse_kelvin: f64,
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse_normalized: f64,
    pub rmse_kelvin: f64,
    /// Pearson coefficient of the concatenated node series.
    pub pcc: f64,
    pub per_node: Vec<NodeMetrics>,
}

fn check_shapes(pred: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(Error::Config(format!(
            "prediction shape {:?} differs from reference {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("empty series".into()));
    }
    Ok(())
}

/// Root mean square of `(pred - ref) / scale` over all samples and nodes.
pub fn rmse(pred: ArrayView2<f64>, reference: ArrayView2<f64>, scale: &[f64]) -> Result<f64> {
    check_shapes(&pred, &reference)?;
    check_len("scale", pred.ncols(), scale.len())?;
    let mut sum = 0.0;
    for (p, r) in pred.rows().into_iter().zip(reference.rows()) {
        for ((a, b), s) in p.iter().zip(r.iter()).zip(scale) {
            let e = (a - b) / s;
            sum += e * e;
        }
    }
    Ok((sum / pred.len() as f64).sqrt())
}

/// Pearson correlation coefficient.
pub fn pcc(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("pcc series", reference.len(), pred.len())?;
    if pred.len() < 2 {
        return Err(Error::UndefinedMetric(
            "pcc needs at least two samples".into(),
        ));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = reference.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(reference) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pcc of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn compute_metrics(
    pred: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    scale: &[f64],
) -> Result<MetricSet> {
    check_shapes(&pred, &reference)?;
    let ones = vec![1.0; pred.ncols()];
    let pooled = |a: &ArrayView2<f64>| a.t().iter().copied().collect::<Vec<f64>>();
    let per_node = (0..pred.ncols())
        .map(|i| {
            let p = pred.slice(s![.., i..i + 1]);
            let r = reference.slice(s![.., i..i + 1]);
            let pv: Vec<f64> = p.iter().copied().collect();
            let rv: Vec<f64> = r.iter().copied().collect();
            Ok(NodeMetrics {
                rmse_normalized: rmse(p, r, &scale[i..i + 1])?,
                rmse_kelvin: rmse(p, r, &[1.0])?,
                pcc: pcc(&pv, &rv).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSet {
        rmse_normalized: rmse(pred, reference, scale)?,
        rmse_kelvin: rmse(pred, reference, &ones)?,
        pcc: pcc(&pooled(&pred), &pooled(&reference))?,
        per_node,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl QuartileSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Quantiles by linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Result<QuartileSummary> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("quartiles of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok(QuartileSummary {
        min: sorted[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Kendall tau-b; zero when either argument is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("kendall series", x.len(), y.len())?;
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for a in 0..x.len() {
        for b in a + 1..x.len() {
            let dx = x[b].partial_cmp(&x[a]).unwrap_or(Ordering::Equal);
            let dy = y[b].partial_cmp(&y[a]).unwrap_or(Ordering::Equal);
            match (dx == Ordering::Equal, dy == Ordering::Equal) {
                (true, true) => {}
                (true, false) => ties_x += 1,
                (false, true) => ties_y += 1,
                (false, false) if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_x) as f64;
    let n2 = (concordant + discordant + ties_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedErrors {
    pub window_len: usize,
    pub rmse: Vec<f64>,
    pub summary: QuartileSummary,
    /// Kendall tau of window index against window RMSE.
    pub trend_tau: f64,
}

/// RMSE over consecutive windows of `window_len` samples; a trailing partial
/// window is kept when it is non-empty.
pub fn windowed_errors(
    pred: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    scale: &[f64],
    window_len: usize,
) -> Result<WindowedErrors> {
    check_shapes(&pred, &reference)?;
    if window_len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    let rows = pred.nrows();
    let values = (0..rows.div_ceil(window_len))
        .map(|w| {
            let r = w * window_len..((w + 1) * window_len).min(rows);
            rmse(
                pred.slice(s![r.clone(), ..]),
                reference.slice(s![r, ..]),
                scale,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let index: Vec<f64> = (0..values.len()).map(|k| k as f64).collect();
    Ok(WindowedErrors {
        window_len,
        summary: quartiles(&values)?,
        trend_tau: kendall_tau(&index, &values)?,
        rmse: values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Unstable,
    Marginal,
    Stable,
    Strong,
}

impl StabilityClass {
    pub fn from_snr(snr: f64) -> Self {
        if snr >= 3.0 {
            StabilityClass::Strong
        } else if snr >= 2.0 {
            StabilityClass::Stable
        } else if snr >= 1.0 {
            StabilityClass::Marginal
        } else {
            StabilityClass::Unstable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StabilityClass::Unstable => "unstable",
            StabilityClass::Marginal => "marginal",
            StabilityClass::Stable => "stable",
            StabilityClass::Strong => "strong",
        }
    }
}

mod snr_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Flag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Finite(*v).serialize(s)
        } else if *v > 0.0 {
            Repr::Flag("inf".into()).serialize(s)
        } else {
            Repr::Flag("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Flag(f) if f == "inf" => Ok(f64::INFINITY),
            Repr::Flag(f) if f == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Flag(f) => Err(serde::de::Error::custom(format!("unexpected snr flag {f}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityStability {
    pub id: String,
    pub mean: f64,
    pub std: f64,
    /// Infinite when `std == 0`.
    #[serde(with = "snr_repr")]
    pub snr: f64,
    pub class: StabilityClass,
}

impl QuantityStability {
    pub fn from_samples(id: impl Into<String>, samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::UndefinedMetric(
                "stability needs at least two samples".into(),
            ));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        let (snr, class) = if std == 0.0 {
            (f64::INFINITY, StabilityClass::Strong)
        } else {
            let snr = mean / std;
            (snr, StabilityClass::from_snr(snr))
        };
        Ok(QuantityStability {
            id: id.into(),
            mean,
            std,
            snr,
            class,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub unstable: usize,
    pub marginal: usize,
    pub stable: usize,
    pub strong: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.unstable + self.marginal + self.stable + self.strong
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub parameters: Vec<QuantityStability>,
    pub metrics: Vec<QuantityStability>,
    pub counts: ClassCounts,
}

impl StabilityReport {
    pub fn strong_fraction(&self) -> f64 {
        self.counts.strong as f64 / self.parameters.len().max(1) as f64
    }
}

/// Mean, sample std and SNR of every physical parameter and of the headline
/// metrics across runs.
pub fn snr_study(reports: &[RunReport]) -> Result<StabilityReport> {
    if reports.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "stability study needs at least two runs, got {}",
            reports.len()
        )));
    }
    let names = &reports[0].parameter_names;
    if let Some(k) = reports.iter().position(|r| &r.parameter_names != names) {
        return Err(Error::Graph(format!(
            "run {k} was trained on a different graph"
        )));
    }
    let parameters = names
        .iter()
        .enumerate()
        .map(|(p, id)| {
            let samples: Vec<f64> = reports.iter().map(|r| r.final_params.to_vec()[p]).collect();
            QuantityStability::from_samples(id.clone(), &samples)
        })
        .collect::<Result<Vec<_>>>()?;
    let metric = |id: &str, f: &dyn Fn(&RunReport) -> f64| {
        let samples: Vec<f64> = reports.iter().map(f).collect();
        QuantityStability::from_samples(id, &samples)
    };
    let metrics = vec![
        metric("train_loss", &|r| r.best_train_loss())?,
        metric("valid_loss", &|r| r.best_valid_loss)?,
        metric("test_rmse", &|r| r.test.metrics.rmse_normalized)?,
        metric("test_rmse_kelvin", &|r| r.test.metrics.rmse_kelvin)?,
        metric("test_pcc", &|r| r.test.metrics.pcc)?,
    ];
    let mut counts = ClassCounts::default();
    for q in &parameters {
        match q.class {
            StabilityClass::Unstable => counts.unstable += 1,
            StabilityClass::Marginal => counts.marginal += 1,
            StabilityClass::Stable => counts.stable += 1,
            StabilityClass::Strong => counts.strong += 1,
        }
    }
    Ok(StabilityReport {
        runs: reports.len(),
        parameters,
        metrics,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn rmse_examples() {
        let a = Array2::from_shape_fn((10, 3), |(k, i)| (k + i) as f64);
        assert_eq!(rmse(a.view(), a.view(), &[1.0; 3]).unwrap(), 0.0);
        let b = &a + 0.5;
        assert!((rmse(b.view(), a.view(), &[1.0; 3]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(b.view(), a.view(), &[0.5; 3]).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(a.view(), a.slice(s![..5, ..]), &[1.0; 3]).is_err());
    }

    #[test]
    fn rmse_is_permutation_invariant() {
        let a = Array2::from_shape_fn((6, 2), |(k, i)| ((k * 7 + i * 3) % 5) as f64);
        let b = Array2::from_shape_fn((6, 2), |(k, i)| (k * i) as f64);
        let order = [3, 0, 5, 1, 4, 2];
        let pa = Array2::from_shape_fn((6, 2), |(k, i)| a[(order[k], i)]);
        let pb = Array2::from_shape_fn((6, 2), |(k, i)| b[(order[k], i)]);
        let x = rmse(a.view(), b.view(), &[1.0, 2.0]).unwrap();
        let y = rmse(pa.view(), pb.view(), &[1.0, 2.0]).unwrap();
        assert!((x - y).abs() < 1e-14);
    }

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 5.0).collect();
        assert!((pcc(&affine, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&neg, &x).unwrap() + 1.0).abs() < 1e-12);
        assert!((pcc(&[1.0, 3.0, 2.0, 4.0], &x).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pcc(&x, &[2.0; 4]), Err(Error::UndefinedMetric(_))));
        assert!(pcc(&[1.0], &[1.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn pcc_affine_invariance(
            x in proptest::collection::vec(-1e3f64..1e3, 3..40),
            a in 1e-3f64..1e3,
            b in -1e3f64..1e3,
        ) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            proptest::prop_assume!(spread > 1e-3);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let z: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            proptest::prop_assert!((pcc(&y, &x).unwrap() - 1.0).abs() < 1e-12);
            proptest::prop_assert!((pcc(&z, &x).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_set_pools_nodes() {
        let reference =
            Array2::from_shape_fn((50, 2), |(k, i)| 300.0 + (k as f64 * 0.1).sin() + i as f64);
        let pred = &reference + 0.1;
        let m = compute_metrics(pred.view(), reference.view(), &[0.1, 0.2]).unwrap();
        assert!((m.rmse_kelvin - 0.1).abs() < 1e-12);
        assert!((m.per_node[1].rmse_normalized - 0.5).abs() < 1e-12);
        assert!((m.pcc - 1.0).abs() < 1e-12);
        assert!(m.per_node.iter().all(|n| n.pcc.is_some()));
    }

    #[test]
    fn quartile_examples() {
        let q = quartiles(&[3.0, 1.0, 2.0, 5.0, 4.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = quartiles(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        assert!(quartiles(&[]).is_err());
    }

    #[test]
    fn kendall_examples() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(kendall_tau(&x, &[1.0; 4]).unwrap(), 0.0);
        // 5 concordant, 1 discordant
        assert!((kendall_tau(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn windowed_examples() {
        let reference = Array2::<f64>::zeros((30, 1));
        let pred = Array2::from_elem((30, 1), 0.7);
        let w = windowed_errors(pred.view(), reference.view(), &[1.0], 10).unwrap();
        assert_eq!(w.rmse.len(), 3);
        assert!(w.rmse.iter().all(|r| (r - 0.7).abs() < 1e-15));
        assert_eq!(w.summary.iqr(), 0.0);

        let pred = Array2::from_shape_fn((30, 1), |(k, _)| (k / 10) as f64 * 0.5);
        let w = windowed_errors(pred.view(), reference.view(), &[1.0], 10).unwrap();
        assert_eq!(w.rmse, vec![0.0, 0.5, 1.0]);
        assert_eq!(w.summary.median, 0.5);
        assert_eq!(w.trend_tau, 1.0);

        let w = windowed_errors(pred.view(), reference.view(), &[1.0], 7).unwrap();
        assert_eq!(w.rmse.len(), 5);
        assert!(windowed_errors(pred.view(), reference.view(), &[1.0], 0).is_err());
    }

    #[test]
    fn stability_classes() {
        let q = QuantityStability::from_samples("a", &[1.5, 2.5]).unwrap();
        assert!((q.mean - 2.0).abs() < 1e-15);
        assert!((q.std - 0.5f64.sqrt()).abs() < 1e-15);
        let q = QuantityStability::from_samples("b", &[2.0, 2.0, 2.0]).unwrap();
        assert!(q.snr.is_infinite() && q.class == StabilityClass::Strong);
        for (snr, class) in [
            (0.99, StabilityClass::Unstable),
            (1.0, StabilityClass::Marginal),
            (2.0, StabilityClass::Stable),
            (2.999, StabilityClass::Stable),
            (3.0, StabilityClass::Strong),
            (4.0, StabilityClass::Strong),
        ] {
            assert_eq!(StabilityClass::from_snr(snr), class);
        }
        assert!(QuantityStability::from_samples("c", &[1.0]).is_err());
    }

    #[test]
    fn infinite_snr_round_trips() {
        let q = QuantityStability::from_samples("b", &[2.0, 2.0]).unwrap();
        let text = serde_json::to_string(&q).unwrap();
        assert!(text.contains("\"inf\""));
        let back: QuantityStability = serde_json::from_str(&text).unwrap();
        assert_eq!(back, q);
    }
}
