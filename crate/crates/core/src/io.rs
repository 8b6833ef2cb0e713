//! Per-basin CSV files and the small tables exchanged between stages.
//!
//! A basin file has a `date,<var1>,<var2>,...` header. Dates are `YYYY-MM`
//! (monthly rows), `YYYY-MM-DD` (daily) or `YYYY-MM-DD HH:MM[:SS]`
//! (sub-daily, `T` separator also accepted). An empty field is a missing
//! value. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use crate::error::{Error, Result};
use crate::mi::WeightVector;
use crate::snowpart::{
    monthly_snow_fraction, wet_bulb_temperature, MonthlySnowFraction, SigmoidParams,
};
use crate::timeseries::{
    aggregate_daily_to_monthly, AggregationMethod, BasinTable, MissingPolicy, MonthStamp,
    MonthlySeries,
};

/// Unit of the well-known variable ids; empty for anything else.
pub fn default_unit(variable_id: &str) -> &'static str {
    match variable_id {
        "APCP" => "mm",
        "TMP" => "K",
        "DSWRF" | "DLWRF" => "W/m2",
        "SPFH" => "kg/kg",
        "PRES" => "Pa",
        "UGRD" | "VGRD" => "m/s",
        "SWE" => "mm",
        "Q" => "mm",
        "SNOWFRAC" => "1",
        id if id.starts_with("SPI") => "-",
        _ => "",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Monthly,
    Daily,
    SubDaily,
}

/// Parsed rows of a basin file before any temporal aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub basin_id: String,
    pub resolution: Resolution,
    pub columns: Vec<String>,
    /// Row timestamps; monthly rows sit at midnight on the first.
    pub times: Vec<NaiveDateTime>,
    /// `values[col][row]`, `NaN` when missing.
    pub values: Vec<Vec<f64>>,
}

fn parse_time(s: &str) -> Result<(NaiveDateTime, Resolution)> {
    let bad = || Error::Parse(format!("bad date {s:?}"));
    match s.len() {
        7 => {
            let m: MonthStamp = s.parse()?;
            let d = NaiveDate::from_ymd_opt(m.year(), m.month(), 1).ok_or_else(bad)?;
            Ok((d.and_time(NaiveTime::MIN), Resolution::Monthly))
        }
        10 => {
            let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad())?;
            Ok((d.and_time(NaiveTime::MIN), Resolution::Daily))
        }
        _ => {
            let t = s.replacen('T', " ", 1);
            let dt = NaiveDateTime::parse_from_str(&t, "%Y-%m-%d %H:%M:%S")
                .or_else(|_| NaiveDateTime::parse_from_str(&t, "%Y-%m-%d %H:%M"))
                .map_err(|_| bad())?;
            Ok((dt, Resolution::SubDaily))
        }
    }
}

fn parse_cell(s: &str, column: &str, line: usize) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "line {line}, column {column}: {s:?} is not a number"
        ))
    })
}

/// Parse basin CSV text. `basin_id` is only recorded.
pub fn parse_basin_csv(text: &str, basin_id: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("date") {
        return Err(Error::Parse("first column must be `date`".into()));
    }
    let columns: Vec<String> = header[1..].to_vec();
    for (i, c) in columns.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::Parse(format!("column {} has an empty name", i + 2)));
        }
        if columns[..i].contains(c) {
            return Err(Error::DuplicateVariable(c.clone()));
        }
    }
    let mut times = Vec::new();
    let mut values = vec![Vec::new(); columns.len()];
    let mut resolution = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let (t, res) = parse_time(&rec[0])?;
        match resolution {
            None => resolution = Some(res),
            Some(r) if r == res => {}
            Some(_) => return Err(Error::Parse(format!("line {line}: mixed date formats"))),
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(if t == prev {
                    Error::DuplicateTimestamp(rec[0].to_string())
                } else {
                    Error::Parse(format!("line {line}: dates not increasing"))
                });
            }
        }
        times.push(t);
        for (j, col) in columns.iter().enumerate() {
            values[j].push(parse_cell(&rec[j + 1], col, line)?);
        }
    }
    let resolution = resolution.ok_or_else(|| Error::Empty(format!("basin file {basin_id}")))?;
    Ok(RawTable {
        basin_id: basin_id.to_string(),
        resolution,
        columns,
        times,
        values,
    })
}

/// Read a basin file; the basin id is the file stem.
pub fn read_raw_table(path: &Path) -> Result<RawTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let basin = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "basin".into());
    parse_basin_csv(&text, &basin).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Parse(format!("{}: {other}", path.display())),
    })
}

impl RawTable {
    pub fn column(&self, id: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == id)
            .map(|j| self.values[j].as_slice())
            .ok_or_else(|| Error::MissingVariable(format!("{id} in basin {}", self.basin_id)))
    }

    fn monthly_series(&self, j: usize, unit: &str) -> Result<MonthlySeries> {
        let first = MonthStamp::of_date(self.times[0].date());
        let last = MonthStamp::of_date(self.times[self.times.len() - 1].date());
        let mut values = vec![f64::NAN; first.months_until(last) as usize + 1];
        for (t, &v) in self.times.iter().zip(&self.values[j]) {
            values[first.months_until(MonthStamp::of_date(t.date())) as usize] = v;
        }
        Ok(MonthlySeries::new(
            self.columns[j].clone(),
            unit,
            first,
            values,
        ))
    }

    /// Collapse sub-daily steps into days with `method`; a day with no
    /// defined step is missing.
    fn daily_values(&self, j: usize, method: AggregationMethod) -> Vec<(NaiveDate, Option<f64>)> {
        let mut days: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
        for (t, &v) in self.times.iter().zip(&self.values[j]) {
            let e = days.entry(t.date()).or_default();
            if !v.is_nan() {
                e.push(v);
            }
        }
        days.into_iter()
            .map(|(d, vs)| {
                let v = (!vs.is_empty()).then(|| {
                    let s: f64 = vs.iter().sum();
                    match method {
                        AggregationMethod::Sum => s,
                        AggregationMethod::Mean => s / vs.len() as f64,
                    }
                });
                (d, v)
            })
            .collect()
    }

    /// Monthly table. Daily and sub-daily columns need an aggregation
    /// method in `methods`; monthly rows are taken as-is, gaps become missing.
    pub fn to_monthly(
        &self,
        methods: &BTreeMap<String, AggregationMethod>,
        policy: MissingPolicy,
        units: &BTreeMap<String, String>,
    ) -> Result<BasinTable> {
        let mut table = BasinTable::new(self.basin_id.clone());
        for (j, id) in self.columns.iter().enumerate() {
            let unit = units
                .get(id)
                .map(String::as_str)
                .unwrap_or_else(|| default_unit(id));
            let series = match self.resolution {
                Resolution::Monthly => self.monthly_series(j, unit)?,
                _ => {
                    let method = *methods.get(id).ok_or_else(|| {
                        Error::Config(format!(
                            "no aggregation method declared for variable {id} (basin {})",
                            self.basin_id
                        ))
                    })?;
                    let daily = self.daily_values(j, method);
                    aggregate_daily_to_monthly(id, unit, &daily, method, policy)?
                }
            };
            table.insert(series)?;
        }
        Ok(table)
    }

    /// Precipitation-weighted monthly snow fraction computed per row.
    /// Rows missing any input are skipped.
    pub fn snow_fraction(
        &self,
        roles: &SnowInputs,
        params: &SigmoidParams,
    ) -> Result<MonthlySnowFraction> {
        let p = self.column(&roles.precip)?;
        let t = self.column(&roles.temperature)?;
        let q = self.column(&roles.humidity)?;
        let pr = self.column(&roles.pressure)?;
        let mut precip = Vec::with_capacity(self.times.len());
        let mut tw = Vec::with_capacity(self.times.len());
        for i in 0..self.times.len() {
            if [p[i], t[i], q[i], pr[i]].iter().any(|v| v.is_nan()) {
                continue;
            }
            let w = wet_bulb_temperature(t[i], q[i], pr[i]).map_err(|e| match e {
                Error::OutOfRange(m) => Error::OutOfRange(format!("{m} at {}", self.times[i])),
                other => other,
            })?;
            precip.push((self.times[i], p[i]));
            tw.push((self.times[i], w));
        }
        monthly_snow_fraction(&precip, &tw, params)
    }
}

/// Variable ids feeding the snow-fraction computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnowInputs {
    pub precip: String,
    pub temperature: String,
    pub humidity: String,
    pub pressure: String,
}

impl Default for SnowInputs {
    fn default() -> Self {
        SnowInputs {
            precip: "APCP".into(),
            temperature: "TMP".into(),
            humidity: "SPFH".into(),
            pressure: "PRES".into(),
        }
    }
}

/// Monthly CSV over the union of all series ranges.
pub fn basin_to_csv(table: &BasinTable, stamp: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(s) = stamp {
        out.push_str(&format!("# {s}\n"));
    }
    out.push_str("date");
    for s in table.series() {
        out.push(',');
        out.push_str(&s.variable_id);
    }
    out.push('\n');
    let ranges: Vec<_> = table.series().iter().filter_map(|s| s.range()).collect();
    let (Some(start), Some(end)) = (
        ranges.iter().map(|r| r.start).min(),
        ranges.iter().map(|r| r.end).max(),
    ) else {
        return out;
    };
    let mut m = start;
    while m <= end {
        out.push_str(&m.to_string());
        for s in table.series() {
            out.push(',');
            if let Some(v) = s.get(m).filter(|v| !v.is_nan()) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
        m = m.add_months(1);
    }
    out
}

/// Monthly CSV text for a single series.
pub fn series_to_csv(series: &MonthlySeries, stamp: Option<&str>) -> String {
    let mut t = BasinTable::new("");
    t.upsert(series.clone());
    basin_to_csv(&t, stamp)
}

pub fn read_monthly_table(
    path: &Path,
    methods: &BTreeMap<String, AggregationMethod>,
    policy: MissingPolicy,
) -> Result<BasinTable> {
    read_raw_table(path)?.to_monthly(methods, policy, &BTreeMap::new())
}

/// `variable,mi_nats,mi_bits,rank`.
pub fn weights_to_csv(w: &WeightVector, stamp: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(s) = stamp {
        out.push_str(&format!("# {s}\n"));
    }
    out.push_str("variable,mi_nats,mi_bits,rank\n");
    for ((id, &v), r) in w.variable_ids.iter().zip(&w.weights).zip(w.ranks()) {
        out.push_str(&format!("{id},{v},{},{r}\n", v / std::f64::consts::LN_2));
    }
    out
}

pub fn parse_weights_csv(text: &str) -> Result<WeightVector> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("variable") || header.get(1) != Some("mi_nats") {
        return Err(Error::Parse(
            "weights file must start with `variable,mi_nats`".into(),
        ));
    }
    let (mut ids, mut weights) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        weights.push(parse_cell(&rec[1], "mi_nats", ids.len() + 1)?);
    }
    WeightVector::new(ids, weights)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
