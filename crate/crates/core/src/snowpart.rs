//! Wet-bulb temperature and sigmoid rain/snow partitioning.
//!
//! Saturation vapour pressure over water uses the Magnus form (Bolton 1980):
//!
//! ```text
//! e_s(T) = 611.2 * exp(17.67 * (T - 273.15) / (T - 29.65))   [Pa, T in K]
//! ```
//!
//! Vapour pressure from specific humidity is `e = q p / (0.622 + 0.378 q)`.
//! The wet-bulb temperature solves the psychrometric balance
//! `e_s(Tw) - e = γ p (T - Tw)` with `γ = 6.6e-4 K⁻¹`.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{MonthStamp, MonthlySeries};

pub const MAGNUS_E0_PA: f64 = 611.2;
pub const MAGNUS_A: f64 = 17.67;
pub const MAGNUS_T0_K: f64 = 273.15;
pub const MAGNUS_C_K: f64 = 29.65;
pub const EPSILON_RD_RV: f64 = 0.622;
pub const PSYCHROMETRIC_FACTOR: f64 = 6.6e-4;
pub const WET_BULB_TOL_K: f64 = 1e-4;

pub fn saturation_vapor_pressure(t_k: f64) -> f64 {
    MAGNUS_E0_PA * (MAGNUS_A * (t_k - MAGNUS_T0_K) / (t_k - MAGNUS_C_K)).exp()
}

pub fn vapor_pressure(q: f64, p: f64) -> f64 {
    q * p / (EPSILON_RD_RV + (1.0 - EPSILON_RD_RV) * q)
}

/// Specific humidity at which air of temperature `t_k` and pressure `p` is saturated.
pub fn saturation_specific_humidity(t_k: f64, p: f64) -> f64 {
    let es = saturation_vapor_pressure(t_k);
    EPSILON_RD_RV * es / (p - (1.0 - EPSILON_RD_RV) * es)
}

/// Wet-bulb temperature (K) by bisection on `[t_air - 60, t_air]`.
///
/// Saturated or supersaturated air returns `t_air`.
pub fn wet_bulb_temperature(t_air: f64, q: f64, p: f64) -> Result<f64> {
    if !(t_air > 180.0 && t_air < 340.0) {
        return Err(Error::OutOfRange(format!("air temperature {t_air} K")));
    }
    if !(0.0..0.05).contains(&q) {
        return Err(Error::OutOfRange(format!("specific humidity {q} kg/kg")));
    }
    if !(p > 10_000.0 && p < 110_000.0) {
        return Err(Error::OutOfRange(format!("pressure {p} Pa")));
    }
    let e = vapor_pressure(q, p);
    let balance =
        |tw: f64| saturation_vapor_pressure(tw) - e - PSYCHROMETRIC_FACTOR * p * (t_air - tw);
    if balance(t_air) <= 0.0 {
        return Ok(t_air);
    }
    let mut lo = t_air - 60.0;
    let mut hi = t_air;
    if balance(lo) > 0.0 {
        return Err(Error::Numeric(format!(
            "wet-bulb root not bracketed for T={t_air} q={q} p={p}"
        )));
    }
    while hi - lo > WET_BULB_TOL_K {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Logistic snow-fraction curve in wet-bulb temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    /// Wet-bulb temperature (K) at which half the precipitation is snow.
    pub midpoint_tw: f64,
    /// Per kelvin.
    pub steepness: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        SigmoidParams {
            midpoint_tw: 273.65,
            steepness: 1.2,
        }
    }
}

impl SigmoidParams {
    pub const PLAUSIBLE_MIDPOINT_K: (f64, f64) = (250.0, 290.0);

    pub fn new(midpoint_tw: f64, steepness: f64) -> Result<Self> {
        let (lo, hi) = Self::PLAUSIBLE_MIDPOINT_K;
        if !(lo..=hi).contains(&midpoint_tw) {
            return Err(Error::InvalidArgument(format!(
                "sigmoid midpoint {midpoint_tw} K outside {lo}..{hi} K"
            )));
        }
        Self::new_unchecked_midpoint(midpoint_tw, steepness)
    }

    /// Like [`SigmoidParams::new`] but accepts any finite midpoint.
    pub fn new_unchecked_midpoint(midpoint_tw: f64, steepness: f64) -> Result<Self> {
        if !(steepness > 0.0) || !steepness.is_finite() || !midpoint_tw.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigmoid needs finite midpoint and steepness > 0, got {midpoint_tw}, {steepness}"
            )));
        }
        Ok(SigmoidParams {
            midpoint_tw,
            steepness,
        })
    }
}

/// Fraction of precipitation falling as snow, `1 / (1 + exp(s (tw - m)))`.
pub fn snow_fraction(tw: f64, params: &SigmoidParams) -> f64 {
    let x = params.steepness * (tw - params.midpoint_tw);
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySnowFraction {
    pub series: MonthlySeries,
    /// Months with zero total precipitation, which carry the unweighted mean.
    pub dry_months: Vec<MonthStamp>,
}

pub const SNOW_FRACTION_ID: &str = "SNOWFRAC";

/// Precipitation-weighted monthly mean of per-step snow fraction.
///
/// `precip` and `tw` must carry the same timestamps in the same order.
pub fn monthly_snow_fraction(
    precip: &[(NaiveDateTime, f64)],
    tw: &[(NaiveDateTime, f64)],
    params: &SigmoidParams,
) -> Result<MonthlySnowFraction> {
    if precip.len() != tw.len() {
        return Err(Error::TimestampMismatch(precip.len().min(tw.len())));
    }
    if precip.is_empty() {
        return Err(Error::Empty("sub-monthly precipitation".into()));
    }
    // per month: (sum p*f, sum p, sum f, steps)
    let mut acc: BTreeMap<MonthStamp, (f64, f64, f64, usize)> = BTreeMap::new();
    for (i, ((tp, p), (tt, t))) in precip.iter().zip(tw).enumerate() {
        if tp != tt {
            return Err(Error::TimestampMismatch(i));
        }
        if !p.is_finite() || *p < 0.0 || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step {i} ({tp}): precipitation {p}, wet-bulb {t}"
            )));
        }
        let f = snow_fraction(*t, params);
        let e = acc
            .entry(MonthStamp::of_date(tp.date()))
            .or_insert((0.0, 0.0, 0.0, 0));
        e.0 += p * f;
        e.1 += p;
        e.2 += f;
        e.3 += 1;
    }
    let first = *acc.keys().next().expect("non-empty");
    let last = *acc.keys().next_back().expect("non-empty");
    let n = first.months_until(last) as usize + 1;
    let mut values = vec![f64::NAN; n];
    let mut dry_months = Vec::new();
    for (month, (pf, p, f, steps)) in acc {
        let v = if p > 0.0 {
            (pf / p).clamp(0.0, 1.0)
        } else {
            dry_months.push(month);
            f / steps as f64
        };
        values[first.months_until(month) as usize] = v;
    }
    Ok(MonthlySnowFraction {
        series: MonthlySeries::new(SNOW_FRACTION_ID, "1", first, values),
        dry_months,
    })
}

/// Snow fraction from monthly mean temperature, humidity and pressure.
pub fn snow_fraction_from_monthly(
    t_air: &MonthlySeries,
    q: &MonthlySeries,
    p: &MonthlySeries,
    params: &SigmoidParams,
) -> Result<MonthlySeries> {
    let start = t_air.start().max(q.start()).max(p.start());
    let end = t_air.end().min(q.end()).min(p.end());
    if end < start {
        return Err(Error::EmptyIntersection);
    }
    let n = start.months_until(end) as usize + 1;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let m = start.add_months(i as i64);
        let (t, qq, pp) = (
            t_air.get(m).unwrap_or(f64::NAN),
            q.get(m).unwrap_or(f64::NAN),
            p.get(m).unwrap_or(f64::NAN),
        );
        if t.is_nan() || qq.is_nan() || pp.is_nan() {
            values.push(f64::NAN);
            continue;
        }
        let tw = wet_bulb_temperature(t, qq, pp).map_err(|e| match e {
            Error::OutOfRange(msg) => Error::OutOfRange(format!("{msg} at {m}")),
            other => other,
        })?;
        values.push(snow_fraction(tw, params));
    }
    Ok(MonthlySeries::new(SNOW_FRACTION_ID, "1", start, values))
}
