//! Weighted composite index and its evaluation against indicator series.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mi::WeightVector;
use crate::stats::{mean, pearson, population_std};
use crate::timeseries::{DesignMatrix, MonthRange, MonthStamp, MonthlySeries, ZScoreParams};

pub const INDEX_ID: &str = "SNODRI";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_ref: String,
    pub weight_hash: String,
}

/// Standardized index values plus the raw weighted sums they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub start: MonthStamp,
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    /// Mean/std of the raw sum over the fitting period.
    pub params: ZScoreParams,
    pub provenance: Provenance,
}

impl IndexSeries {
    pub fn series(&self) -> MonthlySeries {
        MonthlySeries::new(INDEX_ID, "-", self.start, self.values.clone())
    }

    pub fn stamps(&self) -> impl Iterator<Item = MonthStamp> + '_ {
        (0..self.values.len()).map(|i| self.start.add_months(i as i64))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,snodri,raw_weighted_sum\n");
        for (i, m) in self.stamps().enumerate() {
            out.push_str(&format!("{m},{},{}\n", self.values[i], self.raw[i]));
        }
        out
    }

    /// Parse text written by [`Self::to_csv`], optionally preceded by a
    /// `#` line carrying `model=`, `weight_hash=`, `index_mean=` and
    /// `index_std=` tokens. Without the last two, the standardization
    /// parameters are recovered from the two most distant index values.
    pub fn from_csv(text: &str) -> Result<IndexSeries> {
        let mut provenance = Provenance {
            model_ref: String::new(),
            weight_hash: String::new(),
        };
        let mut rows: Vec<(MonthStamp, f64, f64)> = Vec::new();
        let mut header = false;
        let mut stored: (Option<f64>, Option<f64>) = (None, None);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(c) = line.strip_prefix('#') {
                for tok in c.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("model=") {
                        provenance.model_ref = v.to_string();
                    } else if let Some(v) = tok.strip_prefix("weight_hash=") {
                        provenance.weight_hash = v.to_string();
                    } else if let Some(v) = tok.strip_prefix("index_mean=") {
                        stored.0 = v.parse().ok();
                    } else if let Some(v) = tok.strip_prefix("index_std=") {
                        stored.1 = v.parse().ok();
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header {
                if line != "date,snodri,raw_weighted_sum" {
                    return Err(Error::Parse(format!("unexpected index header {line:?}")));
                }
                header = true;
                continue;
            }
            let bad = || Error::Parse(format!("index line {}: {line:?}", n + 1));
            let mut f = line.split(',');
            let (Some(d), Some(v), Some(r), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            let m: MonthStamp = d.trim().parse().map_err(|_| bad())?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            let r: f64 = r.trim().parse().map_err(|_| bad())?;
            if let Some(&(prev, _, _)) = rows.last() {
                if prev.add_months(1) != m {
                    return Err(Error::Parse(format!("index rows not contiguous at {m}")));
                }
            }
            rows.push((m, v, r));
        }
        let start = rows
            .first()
            .ok_or_else(|| Error::Empty("index file has no rows".into()))?
            .0;
        let params = if let (Some(mean), Some(std)) = stored {
            ZScoreParams::new(mean, std)?
        } else {
            let (mut lo, mut hi) = (0, 0);
            for (i, r) in rows.iter().enumerate() {
                if r.1 < rows[lo].1 {
                    lo = i;
                }
                if r.1 > rows[hi].1 {
                    hi = i;
                }
            }
            if rows[hi].1 <= rows[lo].1 {
                return Err(Error::ZeroVariance(INDEX_ID.into()));
            }
            let std = (rows[hi].2 - rows[lo].2) / (rows[hi].1 - rows[lo].1);
            ZScoreParams::new(rows[lo].2 - std * rows[lo].1, std)?
        };
        Ok(IndexSeries {
            start,
            values: rows.iter().map(|r| r.1).collect(),
            raw: rows.iter().map(|r| r.2).collect(),
            params,
            provenance,
        })
    }
}

/// Short hex digest of the weight vector (ids and exact bit patterns).
pub fn weight_hash(w: &WeightVector) -> String {
    let mut h = Sha256::new();
    for (id, v) in w.variable_ids.iter().zip(&w.weights) {
        h.update(id.as_bytes());
        h.update([0u8]);
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn raw_sum(z: &DesignMatrix, w: &WeightVector) -> Result<Vec<f64>> {
    if z.column_ids != w.variable_ids {
        return Err(Error::InvalidArgument(format!(
            "weight ids {:?} do not match design columns {:?}",
            w.variable_ids, z.column_ids
        )));
    }
    if !w.weights.iter().any(|&v| v > 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(z.values
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&w.weights).map(|(x, wi)| x * wi).sum())
        .collect())
}

/// `raw(t) = Σ w_i z_i(t)`, standardized with mean/std fitted over
/// `fit_period` (all rows when `None`).
pub fn compose_index(
    z: &DesignMatrix,
    w: &WeightVector,
    fit_period: Option<MonthRange>,
) -> Result<IndexSeries> {
    let raw = raw_sum(z, w)?;
    let range = fit_period.unwrap_or_else(|| z.range());
    let lo = z.start.months_until(range.start);
    let hi = z.start.months_until(range.end);
    if lo < 0 || hi >= raw.len() as i64 || hi < lo {
        return Err(Error::InvalidArgument(format!(
            "fit period {}..{} outside index rows",
            range.start, range.end
        )));
    }
    let params = ZScoreParams::fit(&raw[lo as usize..=hi as usize], INDEX_ID)?;
    compose_index_with(z, w, params)
}

/// As [`compose_index`] but with stored standardization parameters.
pub fn compose_index_with(
    z: &DesignMatrix,
    w: &WeightVector,
    params: ZScoreParams,
) -> Result<IndexSeries> {
    let raw = raw_sum(z, w)?;
    Ok(IndexSeries {
        start: z.start,
        values: raw.iter().map(|&r| params.apply(r)).collect(),
        raw,
        params,
        provenance: Provenance {
            model_ref: String::new(),
            weight_hash: weight_hash(w),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub window: MonthRange,
    pub months: usize,
    /// NaN when no index month falls in the window.
    pub mean_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overlap_months: usize,
    pub pearson_corr_swe_anomaly: f64,
    pub pearson_corr_discharge: f64,
    /// Share of counted months where the index and SWE anomaly share a sign.
    pub sign_coincidence: f64,
    pub sign_months: usize,
    pub events: Vec<EventSummary>,
    /// Over overlap months inside / outside any event window.
    pub mean_inside_events: f64,
    pub mean_outside_events: f64,
}

/// Months with |SWE anomaly| below this many standard deviations are left
/// out of the sign count.
pub const SIGN_EXCLUSION_STD: f64 = 0.1;
pub const MIN_EVAL_OVERLAP: usize = 12;

pub fn evaluate_index(
    idx: &IndexSeries,
    swe_anomaly: &MonthlySeries,
    discharge: &MonthlySeries,
    event_windows: &[MonthRange],
) -> Result<EvaluationReport> {
    let mut months = Vec::new();
    let (mut iv, mut av, mut qv) = (Vec::new(), Vec::new(), Vec::new());
    for (i, m) in idx.stamps().enumerate() {
        let v = idx.values[i];
        let a = swe_anomaly.get(m).unwrap_or(f64::NAN);
        let q = discharge.get(m).unwrap_or(f64::NAN);
        if v.is_finite() && a.is_finite() && q.is_finite() {
            months.push(m);
            iv.push(v);
            av.push(a);
            qv.push(q);
        }
    }
    if months.len() < MIN_EVAL_OVERLAP {
        return Err(Error::InsufficientData(format!(
            "index and indicators overlap in {} months, need {MIN_EVAL_OVERLAP}",
            months.len()
        )));
    }
    let cutoff = SIGN_EXCLUSION_STD * population_std(&av);
    let (mut agree, mut counted) = (0usize, 0usize);
    for (v, a) in iv.iter().zip(&av) {
        if a.abs() < cutoff || *a == 0.0 {
            continue;
        }
        counted += 1;
        if (*v > 0.0) == (*a > 0.0) {
            agree += 1;
        }
    }
    let events = event_windows
        .iter()
        .map(|w| {
            let vals: Vec<f64> = idx
                .stamps()
                .zip(&idx.values)
                .filter(|(m, v)| w.contains(*m) && v.is_finite())
                .map(|(_, v)| *v)
                .collect();
            EventSummary {
                window: *w,
                months: vals.len(),
                mean_index: if vals.is_empty() {
                    f64::NAN
                } else {
                    mean(&vals)
                },
            }
        })
        .collect();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (m, v) in months.iter().zip(&iv) {
        if event_windows.iter().any(|w| w.contains(*m)) {
            inside.push(*v);
        } else {
            outside.push(*v);
        }
    }
    let mean_or_nan = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
    Ok(EvaluationReport {
        overlap_months: months.len(),
        pearson_corr_swe_anomaly: pearson(&iv, &av),
        pearson_corr_discharge: pearson(&iv, &qv),
        sign_coincidence: if counted == 0 {
            f64::NAN
        } else {
            agree as f64 / counted as f64
        },
        sign_months: counted,
        events,
        mean_inside_events: mean_or_nan(&inside),
        mean_outside_events: mean_or_nan(&outside),
    })
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item,start,end,value\n");
        let metrics = [
            ("overlap_months", self.overlap_months as f64),
            ("pearson_corr_swe_anomaly", self.pearson_corr_swe_anomaly),
            ("pearson_corr_discharge", self.pearson_corr_discharge),
            ("sign_coincidence", self.sign_coincidence),
            ("sign_months", self.sign_months as f64),
            ("mean_inside_events", self.mean_inside_events),
            ("mean_outside_events", self.mean_outside_events),
        ];
        for (k, v) in metrics {
            out.push_str(&format!("{k},,,{v}\n"));
        }
        for e in &self.events {
            out.push_str(&format!(
                "event_mean,{},{},{}\n",
                e.window.start, e.window.end, e.mean_index
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "overlap months:            {}\n\
             corr(index, SWE anomaly):  {:.4}\n\
             corr(index, discharge):    {:.4}\n\
             sign coincidence:          {:.4} ({} months counted)\n",
            self.overlap_months,
            self.pearson_corr_swe_anomaly,
            self.pearson_corr_discharge,
            self.sign_coincidence,
            self.sign_months,
        );
        if self.events.is_empty() {
            s.push_str("event windows:             none configured\n");
        } else {
            s.push_str(&format!(
                "mean index inside events:  {:.4}\n\
                 mean index outside events: {:.4}\n",
                self.mean_inside_events, self.mean_outside_events,
            ));
        }
        for e in &self.events {
            s.push_str(&format!(
                "event {}..{}: mean index {:.4} over {} months\n",
                e.window.start, e.window.end, e.mean_index, e.months
            ));
        }
        s
    }
}
