//! Single-hidden-layer perceptron mapping spot coordinates to one angle.
//! Two independent models cover the two axes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Inputs → `hidden` logistic units → one linear output.
///
/// Inputs and output are mapped to `[-1, 1]` using the stored ranges; the
/// weights operate on normalized values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden × inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub input_range: Vec<[f64; 2]>,
    pub output_range: [f64; 2],
    /// Final losses as RMS in output units (degrees).
    #[serde(default)]
    pub train_rms: f64,
    #[serde(default)]
    pub validation_rms: f64,
    /// Mean squared normalized error after each epoch, starting with the initial model.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnOutput {
    pub degrees: f64,
    /// Some input lies outside its training range.
    pub extrapolated: bool,
}

fn span([lo, hi]: [f64; 2]) -> Result<f64> {
    if !(hi > lo) {
        return Err(Error::Invalid(format!("degenerate normalization range [{lo}, {hi}]")));
    }
    Ok(hi - lo)
}

impl MlpModel {
    /// Weights uniform in `±1/√fan_in`.
    pub fn new(input_range: Vec<[f64; 2]>, output_range: [f64; 2], hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        for r in &input_range {
            span(*r)?;
        }
        span(output_range)?;
        if hidden == 0 || input_range.is_empty() {
            return Err(Error::Invalid("need at least one input and one hidden unit".into()));
        }
        let inputs = input_range.len();
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |a: f64| rng.random_range(-a..a);
        Ok(Self {
            inputs,
            hidden,
            w1: (0..hidden * inputs).map(|_| u(a1)).collect(),
            b1: (0..hidden).map(|_| u(a1)).collect(),
            w2: (0..hidden).map(|_| u(a2)).collect(),
            b2: u(a2),
            input_range,
            output_range,
            train_rms: f64::NAN,
            validation_rms: f64::NAN,
            loss_history: Vec::new(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.hidden * (self.inputs + 2) + 1
    }

    /// Flattened `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (h, i) = (self.hidden, self.inputs);
        self.w1.copy_from_slice(&p[..h * i]);
        self.b1.copy_from_slice(&p[h * i..h * i + h]);
        self.w2.copy_from_slice(&p[h * i + h..h * i + 2 * h]);
        self.b2 = p[h * i + 2 * h];
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.input_range).map(|(v, [lo, hi])| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
    }

    fn normalize_output(&self, y: f64) -> f64 {
        let [lo, hi] = self.output_range;
        2.0 * (y - lo) / (hi - lo) - 1.0
    }

    fn denormalize_output(&self, y: f64) -> f64 {
        let [lo, hi] = self.output_range;
        lo + (y + 1.0) * (hi - lo) / 2.0
    }

    /// Output for a normalized input.
    pub fn forward(&self, xn: &[f64]) -> f64 {
        let mut out = self.b2;
        for j in 0..self.hidden {
            let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
            let z = self.b1[j] + row.iter().zip(xn).map(|(w, x)| w * x).sum::<f64>();
            out += self.w2[j] * sigmoid(z);
        }
        out
    }

    /// Mean squared error on normalized `(input, target)` pairs and its gradient over [`Self::params`].
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
        let (h, ni) = (self.hidden, self.inputs);
        let mut g = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let mut act = vec![0.0; h];
        for (x, y) in batch {
            let mut out = self.b2;
            for j in 0..h {
                let row = &self.w1[j * ni..(j + 1) * ni];
                act[j] = sigmoid(self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
                out += self.w2[j] * act[j];
            }
            let e = out - y;
            loss += e * e;
            let d = 2.0 * e;
            for j in 0..h {
                g[h * ni + h + j] += d * act[j];
                let dz = d * self.w2[j] * act[j] * (1.0 - act[j]);
                g[h * ni + j] += dz;
                for k in 0..ni {
                    g[j * ni + k] += dz * x[k];
                }
            }
            g[h * ni + 2 * h] += d;
        }
        let n = batch.len().max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        (loss / n, g)
    }

    fn mse(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        data.iter().map(|(x, y)| (self.forward(x) - y).powi(2)).sum::<f64>() / data.len().max(1) as f64
    }

    fn rms_units(&self, mse: f64) -> f64 {
        mse.sqrt() * (self.output_range[1] - self.output_range[0]) / 2.0
    }
}

pub fn ann_infer(model: &MlpModel, input: &[f64]) -> AnnOutput {
    let extrapolated = input.iter().zip(&model.input_range).any(|(v, [lo, hi])| v < lo || v > hi);
    AnnOutput { degrees: model.denormalize_output(model.forward(&model.normalize_input(input))), extrapolated }
}

/// First and second moment estimates for per-parameter step scaling.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, opts: &TrainOptions) {
        const B2: f64 = 0.999;
        let b1 = opts.momentum;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-12);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Decay of the first-moment estimate.
    pub momentum: f64,
    pub batch_size: usize,
    /// Share of the shuffled dataset held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { hidden: 16, epochs: 500, learning_rate: 0.01, momentum: 0.9, batch_size: 32, validation_fraction: 0.2 }
    }
}

/// Mini-batch gradient descent on the mean squared error, each step scaled
/// per parameter by running first and second gradient moments.
///
/// After each epoch the full training loss is compared with the previous
/// one; on an increase the epoch is undone and the rate halved (down to
/// `1e-4` of its initial value), so the recorded loss never rises.
/// Successful epochs grow the rate by half again, up to its initial value.
pub fn ann_train(dataset: &[(Vec<f64>, f64)], opts: &TrainOptions, stream: &RandomStream) -> Result<MlpModel> {
    let Some(first) = dataset.first() else {
        return Err(Error::Insufficient("empty dataset".into()));
    };
    let inputs = first.0.len();
    if dataset.iter().any(|(x, y)| x.len() != inputs || !y.is_finite() || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Invalid("dataset rows must be finite and equally wide".into()));
    }
    let params = opts.hidden * (inputs + 2) + 1;
    if dataset.len() < 10 * params {
        return Err(Error::Insufficient(format!("{} samples for {params} parameters (need 10 per parameter)", dataset.len())));
    }
    let range = |f: &dyn Fn(&(Vec<f64>, f64)) -> f64| {
        dataset.iter().map(f).fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
    };
    let input_range: Vec<[f64; 2]> = (0..inputs).map(|k| range(&|s| s.0[k])).collect();
    let output_range = range(&|s| s.1);
    let mut rng = stream.rng();
    let mut model = MlpModel::new(input_range, output_range, opts.hidden, &mut rng)?;

    let mut data: Vec<(Vec<f64>, f64)> =
        dataset.iter().map(|(x, y)| (model.normalize_input(x), model.normalize_output(*y))).collect();
    data.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * opts.validation_fraction).round() as usize;
    let (val, train) = data.split_at(n_val.min(data.len() - 1));
    let mut train = train.to_vec();

    let mut loss = model.mse(&train);
    if !loss.is_finite() {
        return Err(Error::Diverged);
    }
    model.loss_history.push(loss);
    let mut lr = opts.learning_rate;
    let mut moments = Moments::new(params);
    for _ in 0..opts.epochs {
        let saved = model.params();
        let saved_moments = moments.clone();
        train.shuffle(&mut rng);
        let mut p = saved.clone();
        for batch in train.chunks(opts.batch_size.max(1)) {
            let (_, g) = model.loss_and_grad(batch);
            moments.step(&mut p, &g, lr, opts);
            model.set_params(&p);
        }
        let next = model.mse(&train);
        if next.is_nan() {
            return Err(Error::Diverged);
        }
        if next > loss {
            model.set_params(&saved);
            moments = saved_moments;
            lr = (lr * 0.5).max(opts.learning_rate * 1e-4);
            model.loss_history.push(loss);
            continue;
        }
        loss = next;
        lr = (lr * 1.5).min(opts.learning_rate);
        model.loss_history.push(loss);
    }
    model.train_rms = model.rms_units(loss);
    model.validation_rms = model.rms_units(model.mse(val));
    Ok(model)
}
