//! Monthly series, temporal aggregation, z-scoring and alignment.
//!
//! Missing values are stored as `NaN`. Z-scores use the population standard
//! deviation (divide by `n`, not `n - 1`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthStamp {
    year: i32,
    month: u32,
}

impl MonthStamp {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!(
                "month {month} not in 1..=12"
            )));
        }
        Ok(MonthStamp { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    /// Calendar month, 1..=12.
    pub fn month(self) -> u32 {
        self.month
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        MonthStamp {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn add_months(self, k: i64) -> Self {
        Self::from_ordinal(self.ordinal() + k)
    }

    /// Signed number of months from `self` to `later`.
    pub fn months_until(self, later: MonthStamp) -> i64 {
        later.ordinal() - self.ordinal()
    }

    pub fn of_date(date: NaiveDate) -> Self {
        MonthStamp {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn days_in_month(self) -> usize {
        let next = self.add_months(1);
        let first = NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month");
        let first_next = NaiveDate::from_ymd_opt(next.year, next.month, 1).expect("valid month");
        (first_next - first).num_days() as usize
    }
}

impl fmt::Display for MonthStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthStamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::Parse(format!("bad month stamp {s:?}, expected YYYY-MM")))?;
        let year = y
            .parse::<i32>()
            .map_err(|_| Error::Parse(format!("bad year in {s:?}")))?;
        let month = m
            .parse::<u32>()
            .map_err(|_| Error::Parse(format!("bad month in {s:?}")))?;
        MonthStamp::new(year, month)
    }
}

impl TryFrom<String> for MonthStamp {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MonthStamp> for String {
    fn from(m: MonthStamp) -> String {
        m.to_string()
    }
}

/// Inclusive range of months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: MonthStamp,
    pub end: MonthStamp,
}

impl MonthRange {
    pub fn new(start: MonthStamp, end: MonthStamp) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidArgument(format!(
                "range {start}..{end} is reversed"
            )));
        }
        Ok(MonthRange { start, end })
    }

    pub fn contains(&self, m: MonthStamp) -> bool {
        self.start <= m && m <= self.end
    }

    pub fn len(&self) -> usize {
        (self.start.months_until(self.end) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intersect(&self, other: &MonthRange) -> Option<MonthRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(MonthRange { start, end })
    }
}

/// One variable's contiguous monthly record. `NaN` marks a missing month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub variable_id: String,
    pub unit: String,
    start: MonthStamp,
    values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(
        variable_id: impl Into<String>,
        unit: impl Into<String>,
        start: MonthStamp,
        values: Vec<f64>,
    ) -> Self {
        MonthlySeries {
            variable_id: variable_id.into(),
            unit: unit.into(),
            start,
            values,
        }
    }

    /// Build from explicit stamps, which must be strictly increasing and gap-free.
    pub fn from_stamps(
        variable_id: impl Into<String>,
        unit: impl Into<String>,
        stamps: &[MonthStamp],
        values: Vec<f64>,
    ) -> Result<Self> {
        if stamps.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: stamps.len(),
                got: values.len(),
            });
        }
        let start = *stamps
            .first()
            .ok_or_else(|| Error::Empty("monthly series".into()))?;
        for (i, pair) in stamps.windows(2).enumerate() {
            if pair[0].months_until(pair[1]) != 1 {
                return Err(Error::InvalidArgument(format!(
                    "stamps not contiguous at position {}: {} then {}",
                    i + 1,
                    pair[0],
                    pair[1]
                )));
            }
        }
        Ok(Self::new(variable_id, unit, start, values))
    }

    pub fn start(&self) -> MonthStamp {
        self.start
    }

    /// Last stamp; equals `start` for an empty series.
    pub fn end(&self) -> MonthStamp {
        self.start.add_months(self.values.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn stamp(&self, i: usize) -> MonthStamp {
        self.start.add_months(i as i64)
    }

    pub fn stamps(&self) -> impl Iterator<Item = MonthStamp> + '_ {
        (0..self.values.len()).map(|i| self.stamp(i))
    }

    pub fn get(&self, m: MonthStamp) -> Option<f64> {
        let i = self.start.months_until(m);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }

    pub fn range(&self) -> Option<MonthRange> {
        (!self.is_empty()).then(|| MonthRange {
            start: self.start,
            end: self.end(),
        })
    }

    /// Range spanned by the first and last non-missing values.
    pub fn defined_range(&self) -> Option<MonthRange> {
        let first = self.values.iter().position(|v| !v.is_nan())?;
        let last = self.values.iter().rposition(|v| !v.is_nan())?;
        Some(MonthRange {
            start: self.stamp(first),
            end: self.stamp(last),
        })
    }

    /// Values restricted to `range`, which must lie inside the series.
    pub fn slice(&self, range: MonthRange) -> Result<MonthlySeries> {
        let lo = self.start.months_until(range.start);
        let hi = self.start.months_until(range.end);
        if lo < 0 || hi >= self.len() as i64 {
            return Err(Error::InvalidArgument(format!(
                "range {}..{} outside {} series",
                range.start, range.end, self.variable_id
            )));
        }
        Ok(MonthlySeries::new(
            self.variable_id.clone(),
            self.unit.clone(),
            range.start,
            self.values[lo as usize..=hi as usize].to_vec(),
        ))
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> MonthlySeries {
        MonthlySeries {
            variable_id: self.variable_id.clone(),
            unit: self.unit.clone(),
            start: self.start,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> MonthlySeries {
        MonthlySeries {
            variable_id: self.variable_id.clone(),
            unit: self.unit.clone(),
            start: self.start,
            values,
        }
    }
}

/// All monthly series for one basin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BasinTable {
    pub basin_id: String,
    series: Vec<MonthlySeries>,
}

impl BasinTable {
    pub fn new(basin_id: impl Into<String>) -> Self {
        BasinTable {
            basin_id: basin_id.into(),
            series: Vec::new(),
        }
    }

    pub fn insert(&mut self, series: MonthlySeries) -> Result<()> {
        if self.get(&series.variable_id).is_some() {
            return Err(Error::DuplicateVariable(series.variable_id));
        }
        self.series.push(series);
        Ok(())
    }

    /// Insert, replacing any existing series with the same id.
    pub fn upsert(&mut self, series: MonthlySeries) {
        match self
            .series
            .iter_mut()
            .find(|s| s.variable_id == series.variable_id)
        {
            Some(slot) => *slot = series,
            None => self.series.push(series),
        }
    }

    pub fn get(&self, variable_id: &str) -> Option<&MonthlySeries> {
        self.series.iter().find(|s| s.variable_id == variable_id)
    }

    pub fn require(&self, variable_id: &str) -> Result<&MonthlySeries> {
        self.get(variable_id)
            .ok_or_else(|| Error::MissingVariable(variable_id.to_string()))
    }

    pub fn series(&self) -> &[MonthlySeries] {
        &self.series
    }

    pub fn variable_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.variable_id.clone()).collect()
    }
}

/// Mean and population standard deviation used to z-score a column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mean: f64,
    pub std: f64,
}

impl ZScoreParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "z-score params need finite mean and std > 0, got mean={mean} std={std}"
            )));
        }
        Ok(ZScoreParams { mean, std })
    }

    /// Population mean/std over the non-missing values.
    pub fn fit(values: &[f64], name: &str) -> Result<Self> {
        let present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if present.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{name}: need at least 2 values to standardize, got {}",
                present.len()
            )));
        }
        if let Some(v) = present.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name}: {v}")));
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || std <= 1e-12 * mean.abs() {
            return Err(Error::ZeroVariance(name.to_string()));
        }
        Ok(ZScoreParams { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    Sum,
    Mean,
}

impl FromStr for AggregationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(AggregationMethod::Sum),
            "mean" => Ok(AggregationMethod::Mean),
            other => Err(Error::Parse(format!(
                "unknown aggregation method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Reject,
    Skip,
}

/// Collapse daily values into calendar months.
///
/// A day is missing when its date is absent or its value is `None`/`NaN`.
/// Under [`MissingPolicy::Skip`] the remaining days are aggregated and a
/// month with no days at all becomes `NaN`.
pub fn aggregate_daily_to_monthly(
    variable_id: &str,
    unit: &str,
    daily: &[(NaiveDate, Option<f64>)],
    method: AggregationMethod,
    missing_policy: MissingPolicy,
) -> Result<MonthlySeries> {
    if daily.is_empty() {
        return Err(Error::Empty(format!("daily {variable_id} series")));
    }
    let mut by_day: BTreeMap<NaiveDate, Option<f64>> = BTreeMap::new();
    for &(date, v) in daily {
        let v = v.filter(|x| !x.is_nan());
        if by_day.insert(date, v).is_some() {
            return Err(Error::DuplicateTimestamp(date.to_string()));
        }
    }
    let first = MonthStamp::of_date(*by_day.keys().next().expect("non-empty"));
    let last = MonthStamp::of_date(*by_day.keys().next_back().expect("non-empty"));
    let n_months = first.months_until(last) as usize + 1;

    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); n_months];
    for (date, v) in &by_day {
        if let Some(v) = v {
            acc[first.months_until(MonthStamp::of_date(*date)) as usize].push(*v);
        }
    }

    let mut values = Vec::with_capacity(n_months);
    for (i, days) in acc.iter().enumerate() {
        let month = first.add_months(i as i64);
        let expected = month.days_in_month();
        if days.len() < expected && missing_policy == MissingPolicy::Reject {
            return Err(Error::IncompleteMonth {
                variable: variable_id.to_string(),
                month,
                present: days.len(),
                expected,
            });
        }
        let v = if days.is_empty() {
            f64::NAN
        } else {
            let total: f64 = days.iter().sum();
            match method {
                AggregationMethod::Sum => total,
                AggregationMethod::Mean => total / days.len() as f64,
            }
        };
        values.push(v);
    }
    Ok(MonthlySeries::new(variable_id, unit, first, values))
}

/// Z-score a series. With `params = None` the mean/std are fitted from the
/// series (training mode); otherwise the given params are applied.
pub fn standardize(
    series: &MonthlySeries,
    params: Option<ZScoreParams>,
) -> Result<(MonthlySeries, ZScoreParams)> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: need at least 2 values to standardize",
            series.variable_id
        )));
    }
    let params = match params {
        Some(p) => p,
        None => ZScoreParams::fit(series.values(), &series.variable_id)?,
    };
    Ok((series.map_values(|v| params.apply(v)), params))
}

/// Subtract the mean of all same-calendar-month values in the record.
pub fn monthly_climatology_anomaly(series: &MonthlySeries) -> Result<MonthlySeries> {
    if series.is_empty() {
        return Err(Error::Empty(format!("{} series", series.variable_id)));
    }
    let clim = monthly_climatology(series);
    Ok(series.with_values(
        series
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v - clim[series.stamp(i).month() as usize - 1])
            .collect(),
    ))
}

/// Mean value per calendar month (index 0 = January); `NaN` for months
/// with no data.
pub fn monthly_climatology(series: &MonthlySeries) -> [f64; 12] {
    let mut sum = [0.0; 12];
    let mut count = [0usize; 12];
    for (i, &v) in series.values().iter().enumerate() {
        if !v.is_nan() {
            let m = series.stamp(i).month() as usize - 1;
            sum[m] += v;
            count[m] += 1;
        }
    }
    let mut out = [f64::NAN; 12];
    for m in 0..12 {
        if count[m] > 0 {
            out[m] = sum[m] / count[m] as f64;
        }
    }
    out
}

/// Months × variables matrix of z-scored inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub start: MonthStamp,
    pub column_ids: Vec<String>,
    pub values: Array2<f64>,
    pub params: Vec<ZScoreParams>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn stamps(&self) -> Vec<MonthStamp> {
        (0..self.nrows())
            .map(|i| self.start.add_months(i as i64))
            .collect()
    }

    pub fn range(&self) -> MonthRange {
        MonthRange {
            start: self.start,
            end: self.start.add_months(self.nrows() as i64 - 1),
        }
    }

    pub fn column(&self, j: usize) -> MonthlySeries {
        MonthlySeries::new(
            self.column_ids[j].clone(),
            "z",
            self.start,
            self.values.column(j).to_vec(),
        )
    }

    /// Rows restricted to `range`, which must lie inside the matrix.
    pub fn rows_in(&self, range: MonthRange) -> Result<DesignMatrix> {
        let lo = self.start.months_until(range.start);
        let hi = self.start.months_until(range.end);
        if lo < 0 || hi >= self.nrows() as i64 {
            return Err(Error::InvalidArgument(format!(
                "range {}..{} outside design matrix {}..{}",
                range.start,
                range.end,
                self.range().start,
                self.range().end
            )));
        }
        Ok(DesignMatrix {
            start: range.start,
            column_ids: self.column_ids.clone(),
            values: self
                .values
                .slice(ndarray::s![lo as usize..=hi as usize, ..])
                .to_owned(),
            params: self.params.clone(),
        })
    }
}

/// Align the requested variables on their common defined range and z-score
/// each column.
///
/// Each series contributes the span between its first and last defined
/// value; any missing value inside the intersection is an error. With
/// `standardize_with = None` each column is fitted over the aligned rows.
pub fn align(
    table: &BasinTable,
    variables: &[String],
    standardize_with: Option<&[ZScoreParams]>,
) -> Result<DesignMatrix> {
    if let Some(p) = standardize_with {
        if p.len() != variables.len() {
            return Err(Error::DimensionMismatch {
                expected: variables.len(),
                got: p.len(),
            });
        }
    }
    let (start, raw) = align_raw(table, variables)?;
    let params = match standardize_with {
        Some(p) => p.to_vec(),
        None => raw
            .columns()
            .into_iter()
            .zip(variables)
            .map(|(col, id)| ZScoreParams::fit(&col.to_vec(), id))
            .collect::<Result<_>>()?,
    };
    Ok(DesignMatrix::from_raw(
        start,
        variables.to_vec(),
        &raw,
        params,
    ))
}

/// Unstandardized values of `variables` over their common defined range.
pub fn align_raw(table: &BasinTable, variables: &[String]) -> Result<(MonthStamp, Array2<f64>)> {
    if variables.is_empty() {
        return Err(Error::InvalidArgument("no variables requested".into()));
    }
    let series: Vec<&MonthlySeries> = variables
        .iter()
        .map(|v| table.require(v))
        .collect::<Result<_>>()?;
    let mut range: Option<MonthRange> = None;
    for s in &series {
        let r = s.defined_range().ok_or(Error::EmptyIntersection)?;
        range = match range {
            None => Some(r),
            Some(acc) => Some(acc.intersect(&r).ok_or(Error::EmptyIntersection)?),
        };
    }
    let range = range.expect("at least one variable");
    let mut values = Array2::<f64>::zeros((range.len(), series.len()));
    for (j, s) in series.iter().enumerate() {
        let col = s.slice(range)?;
        if let Some(i) = col.values().iter().position(|v| v.is_nan()) {
            return Err(Error::MissingValue {
                variable: s.variable_id.clone(),
                month: col.stamp(i),
            });
        }
        for (i, &v) in col.values().iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok((range.start, values))
}

impl DesignMatrix {
    /// Standardize `raw` column-wise with the given params.
    pub fn from_raw(
        start: MonthStamp,
        column_ids: Vec<String>,
        raw: &Array2<f64>,
        params: Vec<ZScoreParams>,
    ) -> DesignMatrix {
        assert_eq!(params.len(), raw.ncols());
        let mut values = raw.clone();
        for (mut col, p) in values.columns_mut().into_iter().zip(&params) {
            col.mapv_inplace(|v| p.apply(v));
        }
        DesignMatrix {
            start,
            column_ids,
            values,
            params,
        }
    }
}
