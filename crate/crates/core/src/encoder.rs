//! Fully connected autoencoder `d → 15 → 1 → 15 → d`.
//!
//! Both hidden layers and the one-unit bottleneck use tanh; the output
//! layer is linear. Training is full-batch Adam on the mean Huber loss of
//! the reconstruction.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{DesignMatrix, MonthlySeries, ZScoreParams};

pub const FORMAT_VERSION: u32 = 1;
pub const HIDDEN_WIDTH: usize = 15;
pub const BOTTLENECK_WIDTH: usize = 1;
pub const MIN_TRAIN_ROWS: usize = 24;
pub const BOTTLENECK_ID: &str = "BOTTLENECK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, a: &mut Array2<f64>) {
        if self == Activation::Tanh {
            a.mapv_inplace(f64::tanh);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub bottleneck_width: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument(
                "autoencoder input_dim must be >= 1".into(),
            ));
        }
        Ok(NetworkSpec {
            input_dim,
            hidden_width: HIDDEN_WIDTH,
            bottleneck_width: BOTTLENECK_WIDTH,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        })
    }

    /// `[d, 15, 1, 15, d]`
    pub fn layer_sizes(&self) -> [usize; 5] {
        [
            self.input_dim,
            self.hidden_width,
            self.bottleneck_width,
            self.hidden_width,
            self.input_dim,
        ]
    }
}

/// One affine layer; `weights` is `rows × cols` (out × in), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &self.weights).expect("layer shape")
    }

    /// `input · Wᵀ + b`
    fn affine(&self, input: &Array2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weight_matrix().t());
        out += &Array1::from(self.bias.clone());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub layers: Vec<Layer>,
}

impl NetworkWeights {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let s = spec.layer_sizes();
        NetworkWeights {
            layers: (0..4).map(|l| Layer::zeros(s[l + 1], s[l])).collect(),
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for every weight and bias.
    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(spec);
        for layer in &mut w.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = rng.random_range(-bound..=bound);
            }
        }
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let s = spec.layer_sizes();
        if self.layers.len() != 4 {
            return Err(Error::Parse(format!(
                "expected 4 layers, found {}",
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.rows != s[l + 1]
                || layer.cols != s[l]
                || layer.weights.len() != layer.rows * layer.cols
                || layer.bias.len() != layer.rows
            {
                return Err(Error::Parse(format!("layer {l} has inconsistent shape")));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("layer {l} weights")));
            }
        }
        Ok(())
    }
}

struct Activations {
    h1: Array2<f64>,
    z: Array2<f64>,
    h3: Array2<f64>,
    out: Array2<f64>,
}

fn forward_all(w: &NetworkWeights, batch: &Array2<f64>) -> Activations {
    let mut h1 = w.layers[0].affine(batch);
    Activation::Tanh.apply(&mut h1);
    let mut z = w.layers[1].affine(&h1);
    Activation::Tanh.apply(&mut z);
    let mut h3 = w.layers[2].affine(&z);
    Activation::Tanh.apply(&mut h3);
    let out = w.layers[3].affine(&h3);
    Activations { h1, z, h3, out }
}

fn check_width(w: &NetworkWeights, batch: &Array2<f64>) -> Result<()> {
    if batch.ncols() != w.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: w.input_dim(),
            got: batch.ncols(),
        });
    }
    Ok(())
}

/// Reconstruction (`rows × d`) and bottleneck (`rows × 1`).
pub fn forward(w: &NetworkWeights, batch: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    check_width(w, batch)?;
    let a = forward_all(w, batch);
    Ok((a.out, a.z))
}

/// Encoder half only: bottleneck value per row.
pub fn encode_rows(w: &NetworkWeights, batch: &Array2<f64>) -> Result<Vec<f64>> {
    check_width(w, batch)?;
    let mut h1 = w.layers[0].affine(batch);
    Activation::Tanh.apply(&mut h1);
    let mut z = w.layers[1].affine(&h1);
    Activation::Tanh.apply(&mut z);
    Ok(z.column(0).to_vec())
}

pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(residual: f64, delta: f64) -> f64 {
    if residual.abs() <= delta {
        residual
    } else {
        delta * residual.signum()
    }
}

/// Mean Huber loss of `pred − target` over all entries.
pub fn mean_huber(pred: &Array2<f64>, target: &Array2<f64>, delta: f64) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| huber_loss(p - t, delta))
        .sum::<f64>()
        / n
}

/// Mean Huber reconstruction loss and its exact gradient.
pub fn loss_and_gradient(
    w: &NetworkWeights,
    batch: &Array2<f64>,
    delta: f64,
) -> Result<(f64, NetworkWeights)> {
    check_width(w, batch)?;
    let a = forward_all(w, batch);
    let scale = 1.0 / batch.len() as f64;
    let loss = mean_huber(&a.out, batch, delta);

    let mut d_out = &a.out - batch;
    d_out.mapv_inplace(|r| huber_grad(r, delta) * scale);

    let mut grads = w.clone();
    let layer_grad = |g: &mut Layer, d: &Array2<f64>, input: &Array2<f64>| {
        let dw = d.t().dot(input);
        g.weights = dw.iter().copied().collect();
        g.bias = d.sum_axis(Axis(0)).to_vec();
    };

    // layer 4 (linear)
    layer_grad(&mut grads.layers[3], &d_out, &a.h3);
    let mut d3 = d_out.dot(&w.layers[3].weight_matrix());
    d3.zip_mut_with(&a.h3, |g, h| *g *= 1.0 - h * h);
    layer_grad(&mut grads.layers[2], &d3, &a.z);
    let mut d2 = d3.dot(&w.layers[2].weight_matrix());
    d2.zip_mut_with(&a.z, |g, h| *g *= 1.0 - h * h);
    layer_grad(&mut grads.layers[1], &d2, &a.h1);
    let mut d1 = d2.dot(&w.layers[1].weight_matrix());
    d1.zip_mut_with(&a.h1, |g, h| *g *= 1.0 - h * h);
    layer_grad(&mut grads.layers[0], &d1, batch);

    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub huber_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            huber_delta: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidArgument("huber_delta must be > 0".into()));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::InvalidArgument("invalid Adam settings".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// A trained model plus everything needed to rerun or apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEncoder {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub weights: NetworkWeights,
    pub column_ids: Vec<String>,
    pub standardization: Vec<ZScoreParams>,
    pub config: TrainConfig,
    pub seed: u64,
    /// Mean loss at the start of each epoch.
    pub loss_history: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

pub fn train_autoencoder(data: &DesignMatrix, cfg: &TrainConfig) -> Result<TrainedEncoder> {
    cfg.validate()?;
    if data.nrows() < MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "autoencoder needs at least {MIN_TRAIN_ROWS} rows, got {}",
            data.nrows()
        )));
    }
    if data.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("autoencoder training data".into()));
    }
    let spec = NetworkSpec::new(data.ncols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = NetworkWeights::init(&spec, &mut rng);
    let mut params = weights.to_flat();
    let mut adam = Adam::new(params.len());
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        weights.set_flat(&params);
        let (loss, grad) = loss_and_gradient(&weights, &data.values, cfg.huber_delta)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {epoch} (last finite {:?})",
                loss_history.last()
            )));
        }
        loss_history.push(loss);
        adam.step(&mut params, &grad.to_flat(), cfg);
    }
    weights.set_flat(&params);
    Ok(TrainedEncoder {
        format_version: FORMAT_VERSION,
        spec,
        weights,
        column_ids: data.column_ids.clone(),
        standardization: data.params.clone(),
        config: cfg.clone(),
        seed: cfg.seed,
        loss_history,
        metadata: BTreeMap::new(),
    })
}

impl TrainedEncoder {
    /// Bottleneck series for an already standardized matrix.
    ///
    /// Columns whose mean or spread look unstandardized are logged, not rejected.
    pub fn encode(&self, data: &DesignMatrix) -> Result<MonthlySeries> {
        if data.column_ids != self.column_ids {
            return Err(Error::InvalidArgument(format!(
                "design matrix columns {:?} differ from encoder columns {:?}",
                data.column_ids, self.column_ids
            )));
        }
        if data.nrows() >= 12 {
            for (j, id) in data.column_ids.iter().enumerate() {
                let col = data.values.column(j);
                let n = col.len() as f64;
                let mean = col.sum() / n;
                let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if mean.abs() > 3.0 || !(0.1..=10.0).contains(&std) {
                    log::warn!("column {id} looks unstandardized (mean {mean:.3}, std {std:.3})");
                }
            }
        }
        let z = encode_rows(&self.weights, &data.values)?;
        Ok(MonthlySeries::new(BOTTLENECK_ID, "-", data.start, z))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedEncoder = serde_json::from_str(s)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        m.weights.check(&m.spec)?;
        if m.column_ids.len() != m.spec.input_dim || m.standardization.len() != m.spec.input_dim {
            return Err(Error::Parse(
                "model column metadata does not match input_dim".into(),
            ));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::MonthStamp;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, d: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, d), |_| rng.random_range(-scale..scale))
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let spec = NetworkSpec::new(3).unwrap();
        let w = NetworkWeights::zeros(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_batch(&mut rng, 5, 3, 2.0);
        let (rec, z) = forward(&w, &x).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(rec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bottleneck_in_open_interval_and_width_checked() {
        let spec = NetworkSpec::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = NetworkWeights::init(&spec, &mut rng);
        let x = random_batch(&mut rng, 50, 4, 5.0);
        let (_, z) = forward(&w, &x).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1.0));
        let bad = random_batch(&mut rng, 3, 5, 1.0);
        assert!(matches!(
            forward(&w, &bad),
            Err(Error::DimensionMismatch {
                expected: 4,
                got: 5
            })
        ));
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber_loss(0.0, 1.0), 0.0);
        assert_eq!(huber_loss(0.5, 1.0), 0.125);
        assert_eq!(huber_loss(3.0, 1.0), 2.5);
        assert_eq!(huber_loss(-3.0, 1.0), 2.5);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let spec = NetworkSpec::new(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = NetworkWeights::init(&spec, &mut rng);
        for l in &w.layers {
            let b = 1.0 / (l.cols as f64).sqrt();
            assert!(l.weights.iter().all(|v| v.abs() <= b));
        }
    }

    #[test]
    fn loss_is_row_permutation_invariant() {
        let spec = NetworkSpec::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = NetworkWeights::init(&spec, &mut rng);
        let x = random_batch(&mut rng, 20, 3, 3.0);
        let mut perm = x.clone();
        for i in 0..20 {
            perm.row_mut(i).assign(&x.row(19 - i));
        }
        let (a, _) = loss_and_gradient(&w, &x, 1.0).unwrap();
        let (b, _) = loss_and_gradient(&w, &perm, 1.0).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    fn matrix(rows: usize, d: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DesignMatrix {
            start: MonthStamp::new(2000, 1).unwrap(),
            column_ids: (0..d).map(|j| format!("V{j}")).collect(),
            values: random_batch(&mut rng, rows, d, 1.5),
            params: vec![ZScoreParams::new(0.0, 1.0).unwrap(); d],
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = matrix(30, 3, 5);
        let cfg = TrainConfig {
            epochs: 200,
            seed: 9,
            ..Default::default()
        };
        let a = train_autoencoder(&data, &cfg).unwrap();
        let b = train_autoencoder(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 200);
        assert!(a.loss_history.last().unwrap() < a.loss_history.first().unwrap());
    }

    #[test]
    fn training_preconditions() {
        assert!(matches!(
            train_autoencoder(&matrix(10, 3, 1), &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train_autoencoder(&matrix(30, 3, 1), &cfg).is_err());
    }

    #[test]
    fn encode_matches_forward() {
        let data = matrix(30, 4, 6);
        let m = train_autoencoder(
            &data,
            &TrainConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let enc = m.encode(&data).unwrap();
        let (_, z) = forward(&m.weights, &data.values).unwrap();
        assert_eq!(enc.values(), z.column(0).to_vec().as_slice());

        let one = data
            .rows_in(crate::timeseries::MonthRange::new(data.start, data.start).unwrap())
            .unwrap();
        let e1 = m.encode(&one).unwrap();
        assert_eq!(e1.len(), 1);
        assert!(e1.values()[0].abs() < 1.0);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let data = matrix(30, 3, 7);
        let m = train_autoencoder(
            &data,
            &TrainConfig {
                epochs: 15,
                ..Default::default()
            },
        )
        .unwrap();
        let s = m.to_json().unwrap();
        let back = TrainedEncoder::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let data = matrix(30, 3, 8);
        let mut m = train_autoencoder(
            &data,
            &TrainConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        m.weights.layers[1].bias.push(0.0);
        let s = serde_json::to_string(&m).unwrap();
        assert!(TrainedEncoder::from_json(&s).is_err());
    }
}
