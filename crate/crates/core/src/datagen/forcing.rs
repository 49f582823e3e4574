//! Forcing signals: orbital sinusoids and Gaussian-process draws.

use faer::{Col, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Series longer than this are drawn on a coarse grid and interpolated.
pub const DENSE_GP_LIMIT: usize = 5000;
const JITTER: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingSpec {
    Constant {
        value: f64,
    },
    Sinusoid {
        amplitude: f64,
        /// s.
        period: f64,
        /// rad.
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
        /// Clip negative half-waves to zero (eclipse).
        #[serde(default = "default_true")]
        rectified: bool,
    },
    Gp {
        /// Correlation length in samples.
        lengthscale: f64,
        variance: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        seed: u64,
        /// Clip the draw at zero (heaters cannot extract heat).
        #[serde(default)]
        nonnegative: bool,
    },
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ForcingSpec::Constant { .. } => Ok(()),
            ForcingSpec::Sinusoid { period, .. } if !(period > 0.0) => Err(Error::Config(format!(
                "sinusoid period must be positive, got {period}"
            ))),
            ForcingSpec::Gp { lengthscale, .. } if !(lengthscale > 0.0) => Err(Error::Config(
                format!("gp lengthscale must be positive, got {lengthscale}"),
            )),
            ForcingSpec::Gp { variance, .. } if !(variance >= 0.0) => Err(Error::Config(format!(
                "gp variance must be non-negative, got {variance}"
            ))),
            _ => Ok(()),
        }
    }

    /// Samples at `t_k = k dt`, `k = 0..len`.
    pub fn sample(&self, len: usize, dt: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            ForcingSpec::Constant { value } => Ok(vec![value; len]),
            ForcingSpec::Sinusoid {
                amplitude,
                period,
                phase,
                offset,
                rectified,
            } => Ok(sinusoidal_forcing(
                amplitude, period, phase, offset, rectified, len, dt,
            )),
            ForcingSpec::Gp {
                lengthscale,
                variance,
                offset,
                seed,
                nonnegative,
            } => {
                let mut s = sample_gp_forcing(lengthscale * dt, variance, offset, len, dt, seed)?;
                if nonnegative {
                    s.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                Ok(s)
            }
        }
    }
}

/// `offset + amplitude * sin(2 pi t / period + phase)`, with the sine
/// clipped at zero when `rectified`.
pub fn sinusoidal_forcing(
    amplitude: f64,
    period: f64,
    phase: f64,
    offset: f64,
    rectified: bool,
    len: usize,
    dt: f64,
) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let s = (std::f64::consts::TAU * k as f64 * dt / period + phase).sin();
            offset + amplitude * if rectified { s.max(0.0) } else { s }
        })
        .collect()
}

fn rbf(lengthscale: f64, variance: f64, lag: f64) -> f64 {
    variance * (-lag * lag / (2.0 * lengthscale * lengthscale)).exp()
}

/// Zero-mean draw at the given times; Cholesky of the jittered kernel matrix
/// with jitter escalated tenfold up to three times.
fn draw(times: &[f64], lengthscale: f64, variance: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = times.len();
    let mut jitter = JITTER * variance;
    let mut chol = None;
    for _ in 0..=JITTER_RETRIES {
        let k = Mat::from_fn(n, n, |a, b| {
            rbf(lengthscale, variance, times[a] - times[b]) + if a == b { jitter } else { 0.0 }
        });
        if let Ok(c) = k.llt(faer::Side::Lower) {
            chol = Some(c);
            break;
        }
        jitter *= 10.0;
    }
    let chol = chol.ok_or_else(|| {
        Error::Numerical(format!(
            "gp covariance of size {n} is not positive definite after jitter {jitter:e}"
        ))
    })?;
    let z = Col::<f64>::from_fn(n, |_| StandardNormal.sample(rng));
    let draw = chol.L() * z;
    Ok(draw.iter().copied().collect())
}

/// Catmull-Rom interpolation of the uniformly spaced `knots` (spacing
/// `step`) at `t`.
fn cubic_at(knots: &[f64], step: f64, t: f64) -> f64 {
    let pos = t / step;
    let seg = (pos.floor() as usize).min(knots.len() - 2);
    let u = pos - seg as f64;
    let p = |i: isize| knots[i.clamp(0, knots.len() as isize - 1) as usize];
    let s = seg as isize;
    let (p0, p1, p2, p3) = (p(s - 1), p(s), p(s + 1), p(s + 2));
    0.5 * (2.0 * p1
        + (p2 - p0) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u)
}

/// Draw of `N(offset, K)` sampled at `t_k = k dt` with the RBF kernel of
/// the given `lengthscale` (s) and `variance`.
pub fn sample_gp_forcing(
    lengthscale: f64,
    variance: f64,
    offset: f64,
    len: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::Config("gp series needs at least one sample".into()));
    }
    if !(lengthscale > 0.0) || !(variance >= 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!(
            "gp needs positive lengthscale and dt and non-negative variance, got {lengthscale}, {dt}, {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(vec![offset; len]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = if len <= DENSE_GP_LIMIT {
        let times: Vec<f64> = (0..len).map(|k| k as f64 * dt).collect();
        draw(&times, lengthscale, variance, &mut rng)?
    } else {
        let span = (len - 1) as f64 * dt;
        let step = lengthscale / 8.0;
        let knots = (span / step).ceil() as usize + 1;
        let times: Vec<f64> = (0..knots).map(|k| k as f64 * step).collect();
        let coarse = draw(&times, lengthscale, variance, &mut rng)?;
        (0..len)
            .map(|k| cubic_at(&coarse, step, k as f64 * dt))
            .collect()
    };
    Ok(values.into_iter().map(|v| v + offset).collect())
}
