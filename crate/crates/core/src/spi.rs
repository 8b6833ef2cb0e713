//! Standardized Precipitation Index.
//!
//! k-month accumulations are fitted per calendar month with a mixed
//! distribution: a point mass `q0` at zero plus a two-parameter gamma on the
//! positive part. The cumulative probability is
//!
//! ```text
//! H(x) = q0 + (1 - q0) G(x)   for x > 0
//! H(0) = q0 / 2
//! ```
//!
//! and SPI = Φ⁻¹(H), with H clamped to [1e-6, 1 - 1e-6].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr};

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, trigamma};
use crate::timeseries::{MonthRange, MonthStamp, MonthlySeries};

pub const MIN_FIT_SAMPLES: usize = 10;
pub const PROB_CLAMP: f64 = 1e-6;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaMixedFit {
    pub zero_prob: f64,
    pub shape: f64,
    pub scale: f64,
    /// False when Newton iteration did not converge and the Thom
    /// approximation was kept.
    pub converged: bool,
}

impl GammaMixedFit {
    /// Mixed cumulative probability H(x), with the zero mass centred at q0/2.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.zero_prob / 2.0
        } else {
            self.zero_prob + (1.0 - self.zero_prob) * gamma_lr(self.shape, x / self.scale)
        }
    }

    pub fn spi(&self, x: f64) -> f64 {
        normal_quantile(self.cdf(x).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
    }
}

/// Sum over trailing windows of `k` months; the first `k - 1` entries (and
/// any window touching a missing month) are `NaN`.
pub fn accumulate(precip: &MonthlySeries, k: usize) -> Result<MonthlySeries> {
    if k < 1 {
        return Err(Error::InvalidArgument(
            "accumulation window must be >= 1".into(),
        ));
    }
    if k > precip.len() {
        return Err(Error::InsufficientData(format!(
            "window {k} longer than {} series ({} months)",
            precip.variable_id,
            precip.len()
        )));
    }
    let v = precip.values();
    let out = (0..v.len())
        .map(|t| {
            if t + 1 < k {
                f64::NAN
            } else {
                v[t + 1 - k..=t].iter().sum()
            }
        })
        .collect();
    Ok(MonthlySeries::new(
        format!("{}_ACC{k}", precip.variable_id),
        precip.unit.clone(),
        precip.start(),
        out,
    ))
}

/// Fit the mixed zero/gamma distribution by maximum likelihood.
///
/// The shape starts from Thom's estimate `(1 + sqrt(1 + 4A/3)) / 4A` with
/// `A = ln(mean) - mean(ln x)` and is refined by Newton steps on
/// `ln α - ψ(α) = A`.
pub fn fit_gamma_mixed(samples: &[f64]) -> Result<GammaMixedFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "gamma fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("precipitation sample {x}")));
    }
    if let Some(x) = samples.iter().find(|&&x| x < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative precipitation sample {x}"
        )));
    }
    let positive: Vec<f64> = samples.iter().copied().filter(|&x| x > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::AllZero);
    }
    let zero_prob = (samples.len() - positive.len()) as f64 / samples.len() as f64;
    let n = positive.len() as f64;
    let mean = positive.iter().sum::<f64>() / n;
    let mean_ln = positive.iter().map(|x| x.ln()).sum::<f64>() / n;
    let a = mean.ln() - mean_ln;
    if !(a > 1e-12) {
        return Err(Error::Numeric(format!(
            "gamma fit needs at least two distinct positive samples (log-moment statistic {a})"
        )));
    }
    let thom = (1.0 + (1.0 + 4.0 * a / 3.0).sqrt()) / (4.0 * a);

    let mut shape = thom;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let f = shape.ln() - digamma(shape) - a;
        let df = 1.0 / shape - trigamma(shape);
        let mut next = shape - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = shape / 2.0;
        }
        let step = (next - shape).abs();
        shape = next;
        if step <= NEWTON_TOL * shape {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("gamma shape Newton iteration did not converge; using Thom estimate");
        shape = thom;
    }
    Ok(GammaMixedFit {
        zero_prob,
        shape,
        scale: mean / shape,
        converged,
    })
}

/// Per-calendar-month SPI fits for one timescale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiModel {
    pub timescale: usize,
    /// Index 0 is January.
    pub fits: Vec<GammaMixedFit>,
    /// Months whose accumulations were used for fitting.
    pub fit_window: MonthRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiSeries {
    pub timescale: usize,
    pub series: MonthlySeries,
    pub model: SpiModel,
}

impl SpiSeries {
    pub fn values(&self) -> &[f64] {
        self.series.values()
    }
}

impl SpiModel {
    /// Fit on accumulations ending inside `window` (whole record when `None`).
    pub fn fit(precip: &MonthlySeries, k: usize, window: Option<MonthRange>) -> Result<SpiModel> {
        let acc = accumulate(precip, k)?;
        let full = acc
            .range()
            .ok_or_else(|| Error::Empty(precip.variable_id.clone()))?;
        let window = match window {
            Some(w) => w.intersect(&full).ok_or(Error::EmptyIntersection)?,
            None => full,
        };
        let mut per_month: Vec<Vec<f64>> = vec![Vec::new(); 12];
        for (i, &v) in acc.values().iter().enumerate() {
            let stamp = acc.stamp(i);
            if window.contains(stamp) && !v.is_nan() {
                per_month[stamp.month() as usize - 1].push(v);
            }
        }
        let fits = per_month
            .iter()
            .enumerate()
            .map(|(m, samples)| {
                if samples.len() < MIN_FIT_SAMPLES {
                    return Err(Error::InsufficientData(format!(
                        "SPI-{k}: calendar month {} has {} accumulations, need {MIN_FIT_SAMPLES}",
                        m + 1,
                        samples.len()
                    )));
                }
                fit_gamma_mixed(samples).map_err(|e| match e {
                    Error::AllZero => Error::Numeric(format!(
                        "SPI-{k}: calendar month {} accumulations are all zero",
                        m + 1
                    )),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpiModel {
            timescale: k,
            fits,
            fit_window: window,
        })
    }

    pub fn fit_for(&self, month: MonthStamp) -> &GammaMixedFit {
        &self.fits[month.month() as usize - 1]
    }

    /// SPI for every month of `precip`, using these fits.
    pub fn apply(&self, precip: &MonthlySeries) -> Result<SpiSeries> {
        let acc = accumulate(precip, self.timescale)?;
        let values = acc
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if x.is_nan() {
                    f64::NAN
                } else {
                    self.fit_for(acc.stamp(i)).spi(x)
                }
            })
            .collect();
        Ok(SpiSeries {
            timescale: self.timescale,
            series: MonthlySeries::new(spi_id(self.timescale), "-", acc.start(), values),
            model: self.clone(),
        })
    }
}

pub fn spi_id(k: usize) -> String {
    format!("SPI{k}")
}

/// SPI-k fitted over the whole record.
pub fn compute_spi(precip: &MonthlySeries, k: usize) -> Result<SpiSeries> {
    SpiModel::fit(precip, k, None)?.apply(precip)
}
