//! Deterministic synthetic basins with planted snow-drought winters.
//!
//! With calendar month `m` and `c = cos(2π(m − 1)/12)` (1 in January, −1 in
//! July), each variable is a seasonal curve plus AR(1) noise
//! `a_t = 0.5 a_{t−1} + √0.75 ε_t`, scaled by `noise_std`. `D_t` is the
//! severity of the drought winter covering month `t` (November of the
//! previous year through April), zero otherwise.
//!
//! ```text
//! TMP   = 278 − 9c + 1.5 a + 3.5 D                      K
//! APCP  = 90 (1 + 0.6c) exp(0.35 a − 0.06) (1 − 0.75 D)  mm/month
//! DSWRF = 190 − 100c + 15 a + 20 D                       W/m²
//! RH    = clamp(0.7 + 0.08 a − 0.1 D, 0.2, 0.98)
//! PRES  = 85000 + 400 a                                  Pa
//! SPFH  = specific humidity at RH for (TMP, PRES)        kg/kg
//! UGRD  = 2 + c + 0.8 a,  VGRD = 0.5 − 0.5c + 0.8 a      m/s
//! f     = sigmoid snow fraction of the wet-bulb temperature
//! melt  = min(SWE_{t−1} + f P, 60 max(0, TMP − 272.15))
//! SWE_t = SWE_{t−1} + f P − melt                         mm
//! R_t   = R_{t−1} + (1 − f) P + melt,  Q_t = 0.4 R_t,  R_t −= Q_t
//! ```
//!
//! Every variable draws its own noise stream. A one-year spin-up without
//! drought precedes the returned record.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snowpart::{snow_fraction, wet_bulb_temperature, SigmoidParams, EPSILON_RD_RV};
use crate::timeseries::{BasinTable, MonthRange, MonthStamp, MonthlySeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroughtWinter {
    /// Calendar year containing the January of the winter.
    pub year: i32,
    /// In (0, 1].
    pub severity: f64,
}

impl DroughtWinter {
    /// November of the previous year through April.
    pub fn window(&self) -> MonthRange {
        MonthRange {
            start: MonthStamp::new(self.year - 1, 11).expect("valid"),
            end: MonthStamp::new(self.year, 4).expect("valid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub basin_id: String,
    pub start_year: i32,
    pub n_years: usize,
    pub seed: u64,
    pub drought_winters: Vec<DroughtWinter>,
    pub noise_std: f64,
    pub sigmoid: SigmoidParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            basin_id: "synthetic".into(),
            start_year: 1981,
            n_years: 30,
            seed: 0,
            drought_winters: Vec::new(),
            noise_std: 1.0,
            sigmoid: SigmoidParams::default(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_years < 5 {
            return Err(Error::InvalidArgument(format!(
                "synthetic basin needs n_years >= 5, got {}",
                self.n_years
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidArgument(
                "noise_std must be finite and >= 0".into(),
            ));
        }
        for w in &self.drought_winters {
            if !(w.severity > 0.0 && w.severity <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "drought severity {} for {} not in (0, 1]",
                    w.severity, w.year
                )));
            }
        }
        Ok(())
    }

    pub fn drought_windows(&self) -> Vec<MonthRange> {
        self.drought_winters.iter().map(|w| w.window()).collect()
    }
}

/// Per-month ground truth: true where a drought winter depressed the month.
#[derive(Debug, Clone, PartialEq)]
pub struct DroughtMask {
    pub start: MonthStamp,
    pub flags: Vec<bool>,
}

impl DroughtMask {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,drought\n");
        for (i, f) in self.flags.iter().enumerate() {
            out.push_str(&format!(
                "{},{}\n",
                self.start.add_months(i as i64),
                u8::from(*f)
            ));
        }
        out
    }
}

struct Ar1 {
    rng: ChaCha8Rng,
    state: f64,
}

impl Ar1 {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let state = StandardNormal.sample(&mut rng);
        Ar1 { rng, state }
    }

    fn next(&mut self) -> f64 {
        let e: f64 = StandardNormal.sample(&mut self.rng);
        self.state = 0.5 * self.state + 0.75f64.sqrt() * e;
        self.state
    }
}

pub const SYNTH_VARIABLES: [(&str, &str); 9] = [
    ("APCP", "mm"),
    ("TMP", "K"),
    ("DSWRF", "W/m2"),
    ("SPFH", "kg/kg"),
    ("PRES", "Pa"),
    ("UGRD", "m/s"),
    ("VGRD", "m/s"),
    ("SWE", "mm"),
    ("Q", "mm"),
];

pub fn generate_synthetic_basin(cfg: &SynthConfig) -> Result<(BasinTable, DroughtMask)> {
    cfg.validate()?;
    let start = MonthStamp::new(cfg.start_year, 1)?;
    let spinup = 12usize;
    let n = cfg.n_years * 12;
    let mut noise: Vec<Ar1> = (0..7).map(|s| Ar1::new(cfg.seed, s)).collect();
    let k = cfg.noise_std;

    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); SYNTH_VARIABLES.len()];
    let mut flags = Vec::with_capacity(n);
    let (mut swe, mut store) = (0.0f64, 0.0f64);
    for t in 0..spinup + n {
        let stamp = start.add_months(t as i64 - spinup as i64);
        let c = (2.0 * std::f64::consts::PI * (stamp.month() as f64 - 1.0) / 12.0).cos();
        let d = if t < spinup {
            0.0
        } else {
            cfg.drought_winters
                .iter()
                .filter(|w| w.window().contains(stamp))
                .map(|w| w.severity)
                .fold(0.0, f64::max)
        };
        let a: Vec<f64> = noise.iter_mut().map(|g| k * g.next()).collect();

        let tmp = 278.0 - 9.0 * c + 1.5 * a[0] + 3.5 * d;
        let apcp = 90.0 * (1.0 + 0.6 * c) * (0.35 * a[1] - 0.06).exp() * (1.0 - 0.75 * d);
        let dswrf = 190.0 - 100.0 * c + 15.0 * a[2] + 20.0 * d;
        let rh = (0.7 + 0.08 * a[3] - 0.1 * d).clamp(0.2, 0.98);
        let pres = 85_000.0 + 400.0 * a[4];
        let e = rh * crate::snowpart::saturation_vapor_pressure(tmp);
        let spfh = EPSILON_RD_RV * e / (pres - (1.0 - EPSILON_RD_RV) * e);
        let ugrd = 2.0 + c + 0.8 * a[5];
        let vgrd = 0.5 - 0.5 * c + 0.8 * a[6];

        let tw = wet_bulb_temperature(tmp, spfh, pres)?;
        let f = snow_fraction(tw, &cfg.sigmoid);
        let snow = f * apcp;
        let melt = (swe + snow).min(60.0 * (tmp - 272.15).max(0.0));
        swe = swe + snow - melt;
        store += (1.0 - f) * apcp + melt;
        let q = 0.4 * store;
        store -= q;

        if t >= spinup {
            for (col, v) in cols
                .iter_mut()
                .zip([apcp, tmp, dswrf, spfh, pres, ugrd, vgrd, swe, q])
            {
                col.push(v);
            }
            flags.push(d > 0.0);
        }
    }
    let mut table = BasinTable::new(cfg.basin_id.clone());
    for ((id, unit), values) in SYNTH_VARIABLES.iter().zip(cols) {
        table.insert(MonthlySeries::new(*id, *unit, start, values))?;
    }
    Ok((table, DroughtMask { start, flags }))
}
