//! Plug-in mutual information from equal-width joint histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::DesignMatrix;

/// Relative inflation of the top edge so the maximum falls in the last bin.
const TOP_EDGE_INFLATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub bins_x: usize,
    pub bins_y: usize,
    pub edges_x: Vec<f64>,
    pub edges_y: Vec<f64>,
    /// Row-major `bins_x × bins_y`.
    pub counts: Vec<u64>,
    pub n: u64,
    /// Set when the axis had zero range; all mass is then in bin 0.
    pub degenerate_x: bool,
    pub degenerate_y: bool,
}

impl JointHistogram {
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.bins_y + j]
    }

    /// Build directly from a count table (rows = x bins).
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let bins_x = counts.len();
        let bins_y = counts.first().map_or(0, |r| r.len());
        if bins_x == 0 || bins_y == 0 || counts.iter().any(|r| r.len() != bins_y) {
            return Err(Error::InvalidArgument(
                "count table must be a non-empty rectangle".into(),
            ));
        }
        let flat: Vec<u64> = counts.into_iter().flatten().collect();
        let n = flat.iter().sum();
        Ok(JointHistogram {
            bins_x,
            bins_y,
            edges_x: (0..=bins_x).map(|i| i as f64).collect(),
            edges_y: (0..=bins_y).map(|i| i as f64).collect(),
            counts: flat,
            n,
            degenerate_x: false,
            degenerate_y: false,
        })
    }

    pub fn transposed(&self) -> JointHistogram {
        let mut counts = vec![0; self.counts.len()];
        for i in 0..self.bins_x {
            for j in 0..self.bins_y {
                counts[j * self.bins_x + i] = self.count(i, j);
            }
        }
        JointHistogram {
            bins_x: self.bins_y,
            bins_y: self.bins_x,
            edges_x: self.edges_y.clone(),
            edges_y: self.edges_x.clone(),
            counts,
            n: self.n,
            degenerate_x: self.degenerate_y,
            degenerate_y: self.degenerate_x,
        }
    }
}

struct Axis {
    edges: Vec<f64>,
    index: Vec<usize>,
    degenerate: bool,
}

fn bin_axis(v: &[f64], bins: usize) -> Axis {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return Axis {
            edges: (0..=bins).map(|i| lo + i as f64).collect(),
            index: vec![0; v.len()],
            degenerate: true,
        };
    }
    let width = range * (1.0 + TOP_EDGE_INFLATION) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let index = v
        .iter()
        .map(|&x| (((x - lo) / width).floor() as usize).min(bins - 1))
        .collect();
    Axis {
        edges,
        index,
        degenerate: false,
    }
}

/// Equal-width joint histogram with the same bin count on both axes.
pub fn joint_histogram(x: &[f64], y: &[f64], bins: usize) -> Result<JointHistogram> {
    joint_histogram_with_bins(x, y, bins, bins)
}

pub fn joint_histogram_with_bins(
    x: &[f64],
    y: &[f64],
    bins_x: usize,
    bins_y: usize,
) -> Result<JointHistogram> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if bins_x < 2 || bins_y < 2 {
        return Err(Error::InvalidArgument(
            "histograms need at least 2 bins per axis".into(),
        ));
    }
    let need = 4 * bins_x.max(bins_y);
    if x.len() < need {
        return Err(Error::InsufficientData(format!(
            "{} samples for {bins_x}×{bins_y} bins, need at least {need}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let ax = bin_axis(x, bins_x);
    let ay = bin_axis(y, bins_y);
    let mut counts = vec![0u64; bins_x * bins_y];
    for (&i, &j) in ax.index.iter().zip(&ay.index) {
        counts[i * bins_y + j] += 1;
    }
    Ok(JointHistogram {
        bins_x,
        bins_y,
        edges_x: ax.edges,
        edges_y: ay.edges,
        counts,
        n: x.len() as u64,
        degenerate_x: ax.degenerate,
        degenerate_y: ay.degenerate,
    })
}

/// Mutual information in nats:
/// `Σ p(x,y) ln(p(x,y) / (p(x) p(y)))` over occupied cells.
pub fn mutual_information(h: &JointHistogram) -> f64 {
    if h.n == 0 {
        return 0.0;
    }
    let mut row = vec![0u64; h.bins_x];
    let mut col = vec![0u64; h.bins_y];
    for i in 0..h.bins_x {
        for j in 0..h.bins_y {
            let c = h.count(i, j);
            row[i] += c;
            col[j] += c;
        }
    }
    let n = h.n as f64;
    let mut mi = 0.0;
    for i in 0..h.bins_x {
        for j in 0..h.bins_y {
            let c = h.count(i, j);
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// `⌈√(n/5)⌉` clamped to 4..=32.
pub fn default_bins(n: usize) -> usize {
    ((n as f64 / 5.0).sqrt().ceil() as usize).clamp(4, 32)
}

/// Per-variable weights in nats, in design-matrix column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub variable_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(variable_ids: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if variable_ids.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: variable_ids.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "weights must be finite and >= 0".into(),
            ));
        }
        Ok(WeightVector {
            variable_ids,
            weights,
        })
    }

    pub fn scaled(&self, c: f64) -> WeightVector {
        WeightVector {
            variable_ids: self.variable_ids.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    /// 1-based rank of each variable, heaviest first (ties by id).
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.weights.len()).collect();
        order.sort_by(|&a, &b| {
            self.weights[b]
                .total_cmp(&self.weights[a])
                .then_with(|| self.variable_ids[a].cmp(&self.variable_ids[b]))
        });
        let mut ranks = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }
}

/// MI between every design-matrix column and the bottleneck series.
/// `bins = None` uses [`default_bins`].
pub fn compute_weights(
    inputs: &DesignMatrix,
    bottleneck: &[f64],
    bins: Option<usize>,
) -> Result<WeightVector> {
    if bottleneck.len() != inputs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            got: bottleneck.len(),
        });
    }
    let bins = bins.unwrap_or_else(|| default_bins(inputs.nrows()));
    let weights = (0..inputs.ncols())
        .map(|j| {
            let col = inputs.values.column(j).to_vec();
            joint_histogram(&col, bottleneck, bins).map(|h| mutual_information(&h))
        })
        .collect::<Result<Vec<_>>>()?;
    WeightVector::new(inputs.column_ids.clone(), weights)
}
