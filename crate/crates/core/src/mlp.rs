//! One-hidden-layer sigmoid perceptron, Levenberg-Marquardt training and
//! conversion of the hidden layer into reconstruction filters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{expand_filter, ExpBinBasis, Filter};

pub const TARGET_LO: f64 = 0.05;
pub const TARGET_HI: f64 = 0.95;
pub const LAMBDA_INIT: f64 = 1e-2;
pub const PATIENCE: usize = 25;
pub const MAX_ITERATIONS: usize = 200;
const CHUNK: usize = 1024;

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Network parameters. `h` is row-major `[n_hidden][n_inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPParams {
    pub n_hidden: usize,
    pub n_inputs: usize,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub b0: f64,
}

impl MLPParams {
    pub fn zeros(n_hidden: usize, n_inputs: usize) -> Self {
        Self {
            n_hidden,
            n_inputs,
            h: vec![0.0; n_hidden * n_inputs],
            b: vec![0.0; n_hidden],
            a: vec![0.0; n_hidden],
            b0: 0.0,
        }
    }

    /// Uniform initialization; hidden weights and biases in `±1/√n_inputs`,
    /// output weights and bias in `±1/√n_hidden`.
    pub fn random(n_hidden: usize, n_inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hi = 1.0 / (n_inputs as f64).sqrt();
        let ho = 1.0 / (n_hidden as f64).sqrt();
        let mut p = Self::zeros(n_hidden, n_inputs);
        p.h.iter_mut().for_each(|v| *v = rng.random_range(-hi..=hi));
        p.b.iter_mut().for_each(|v| *v = rng.random_range(-hi..=hi));
        p.a.iter_mut().for_each(|v| *v = rng.random_range(-ho..=ho));
        p.b0 = rng.random_range(-ho..=ho);
        p
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_inputs + 2) + 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.h[k * self.n_inputs..(k + 1) * self.n_inputs]
    }

    /// Flat layout `[h, b, a, b0]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(&self.h);
        v.extend(&self.b);
        v.extend(&self.a);
        v.push(self.b0);
        v
    }

    pub fn from_vec(n_hidden: usize, n_inputs: usize, v: &[f64]) -> Result<Self> {
        let nh = n_hidden * n_inputs;
        if v.len() != nh + 2 * n_hidden + 1 {
            return Err(Error::invalid("parameter vector length does not match the network shape"));
        }
        Ok(Self {
            n_hidden,
            n_inputs,
            h: v[..nh].to_vec(),
            b: v[nh..nh + n_hidden].to_vec(),
            a: v[nh + n_hidden..nh + 2 * n_hidden].to_vec(),
            b0: v[nh + 2 * n_hidden],
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n_hidden >= 1
            && self.h.len() == self.n_hidden * self.n_inputs
            && self.b.len() == self.n_hidden
            && self.a.len() == self.n_hidden
            && self.to_vec().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::format("inconsistent or non-finite network parameters"))
        }
    }
}

/// Affine maps between physical values and network units:
/// `z̃ᵢ = in_scale[i]·zᵢ + in_offset[i]`, `ỹ = out_scale·y + out_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub in_scale: Vec<f64>,
    pub in_offset: Vec<f64>,
    pub out_scale: f64,
    pub out_offset: f64,
}

impl ScalingRecord {
    pub fn identity(n_inputs: usize) -> Self {
        Self {
            in_scale: vec![1.0; n_inputs],
            in_offset: vec![0.0; n_inputs],
            out_scale: 1.0,
            out_offset: 0.0,
        }
    }

    /// Standardizes each input column and maps target min/max to `[0.05, 0.95]`.
    pub fn fit(inputs: &[f64], targets: &[f64], n_inputs: usize) -> Result<Self> {
        let n = targets.len();
        let (lo, hi) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
        if n == 0 || !(hi > lo) {
            return Err(Error::DegenerateData("training targets are constant".into()));
        }
        let out_scale = (TARGET_HI - TARGET_LO) / (hi - lo);
        let out_offset = TARGET_LO - out_scale * lo;
        let mut in_scale = vec![1.0; n_inputs];
        let mut in_offset = vec![0.0; n_inputs];
        for i in 0..n_inputs {
            let col = inputs.iter().skip(i).step_by(n_inputs);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            let s = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            in_scale[i] = s;
            in_offset[i] = -mean * s;
        }
        Ok(Self {
            in_scale,
            in_offset,
            out_scale,
            out_offset,
        })
    }

    pub fn scale_input(&self, z: &[f64], out: &mut [f64]) {
        for ((o, v), (s, c)) in out.iter_mut().zip(z).zip(self.in_scale.iter().zip(&self.in_offset)) {
            *o = s * v + c;
        }
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        self.out_scale * y + self.out_offset
    }

    pub fn unscale_output(&self, o: f64) -> f64 {
        (o - self.out_offset) / self.out_scale
    }

    fn validate(&self, n_inputs: usize) -> Result<()> {
        let ok = self.in_scale.len() == n_inputs
            && self.in_offset.len() == n_inputs
            && self.out_scale != 0.0
            && self.in_scale.iter().all(|&s| s != 0.0 && s.is_finite())
            && self.in_offset.iter().all(|v| v.is_finite())
            && self.out_scale.is_finite()
            && self.out_offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::format("invalid scaling record"))
        }
    }
}

/// Network output in scaled units for a scaled input.
pub fn forward_scaled(p: &MLPParams, z: &[f64]) -> f64 {
    let mut out = -p.b0;
    for k in 0..p.n_hidden {
        let pre: f64 = p.row(k).iter().zip(z).map(|(w, v)| w * v).sum::<f64>() - p.b[k];
        out += p.a[k] * sigmoid(pre);
    }
    sigmoid(out)
}

/// Scaled output and its gradient with respect to the flat parameters `[h, b, a, b0]`.
pub fn output_and_gradient(p: &MLPParams, z: &[f64], grad: &mut [f64]) -> f64 {
    let (nh, ne) = (p.n_hidden, p.n_inputs);
    let mut s = [0.0f64; 64];
    let s = if nh <= 64 { &mut s[..nh] } else { &mut vec![0.0; nh][..] };
    let mut out = -p.b0;
    for k in 0..nh {
        let pre: f64 = p.row(k).iter().zip(z).map(|(w, v)| w * v).sum::<f64>() - p.b[k];
        s[k] = sigmoid(pre);
        out += p.a[k] * s[k];
    }
    let o = sigmoid(out);
    let g = o * (1.0 - o);
    let (gh, rest) = grad.split_at_mut(nh * ne);
    let (gb, rest) = rest.split_at_mut(nh);
    let (ga, gb0) = rest.split_at_mut(nh);
    for k in 0..nh {
        let d = g * p.a[k] * s[k] * (1.0 - s[k]);
        for (gi, zi) in gh[k * ne..(k + 1) * ne].iter_mut().zip(z) {
            *gi = d * zi;
        }
        gb[k] = -d;
        ga[k] = g * s[k];
    }
    gb0[0] = -g;
    o
}

/// Network prediction in physical units.
pub fn mlp_forward(p: &MLPParams, scale: &ScalingRecord, z: &[f64]) -> Result<f64> {
    if z.len() != p.n_inputs || scale.in_scale.len() != p.n_inputs {
        return Err(Error::invalid(format!(
            "expected {} inputs, got {}",
            p.n_inputs,
            z.len()
        )));
    }
    let mut zs = vec![0.0; z.len()];
    scale.scale_input(z, &mut zs);
    Ok(scale.unscale_output(forward_scaled(p, &zs)))
}

/// Rows of `n_inputs` basis values with matching targets. The first
/// `n_train` rows are for fitting, the rest for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    n_inputs: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_train: usize,
}

impl TrainingSet {
    pub fn new(n_inputs: usize, inputs: Vec<f64>, targets: Vec<f64>, n_train: usize) -> Result<Self> {
        if n_inputs == 0 || inputs.len() != n_inputs * targets.len() {
            return Err(Error::invalid("inputs and targets have inconsistent lengths"));
        }
        if n_train == 0 || n_train >= targets.len() {
            return Err(Error::invalid("need non-empty training and validation parts"));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training data must be finite"));
        }
        Ok(Self {
            n_inputs,
            inputs,
            targets,
            n_train,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_validation(&self) -> usize {
        self.len() - self.n_train
    }

    pub fn input(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.n_inputs..(r + 1) * self.n_inputs]
    }

    pub fn target(&self, r: usize) -> f64 {
        self.targets[r]
    }

    pub fn train_inputs(&self) -> &[f64] {
        &self.inputs[..self.n_train * self.n_inputs]
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.targets[..self.n_train]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Accepted steps only.
    pub accepted: Vec<IterationRecord>,
    pub initial_train_loss: f64,
    pub initial_validation_loss: f64,
    pub best_validation_loss: f64,
    pub best_iteration: usize,
    pub stop_reason: StopReason,
}

/// Scaled-space view of the data used during fitting.
struct Scaled {
    n_inputs: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Scaled {
    fn new(set: &TrainingSet, scale: &ScalingRecord, rows: std::ops::Range<usize>) -> Self {
        let ne = set.n_inputs;
        let mut inputs = vec![0.0; rows.len() * ne];
        let mut targets = Vec::with_capacity(rows.len());
        for (i, r) in rows.enumerate() {
            scale.scale_input(set.input(r), &mut inputs[i * ne..(i + 1) * ne]);
            targets.push(scale.scale_target(set.target(r)));
        }
        Self {
            n_inputs: ne,
            inputs,
            targets,
        }
    }

    fn loss(&self, p: &MLPParams) -> f64 {
        let ne = self.n_inputs;
        let parts: Vec<f64> = self
            .targets
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ts)| {
                ts.iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let r = c * CHUNK + i;
                        let e = forward_scaled(p, &self.inputs[r * ne..(r + 1) * ne]) - t;
                        e * e
                    })
                    .sum()
            })
            .collect();
        parts.iter().sum::<f64>() / self.targets.len() as f64
    }

    /// `(JᵀJ / N, Jᵀr / N)` accumulated chunk-wise in a fixed order.
    fn normal_equations(&self, p: &MLPParams) -> (Vec<f64>, Vec<f64>) {
        let np = p.n_params();
        let ne = self.n_inputs;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = self
            .targets
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ts)| {
                let mut jtj = vec![0.0; np * np];
                let mut jtr = vec![0.0; np];
                let mut g = vec![0.0; np];
                for (i, t) in ts.iter().enumerate() {
                    let r = c * CHUNK + i;
                    let o = output_and_gradient(p, &self.inputs[r * ne..(r + 1) * ne], &mut g);
                    let e = o - t;
                    for (a, &ga) in g.iter().enumerate() {
                        jtr[a] += ga * e;
                        let row = &mut jtj[a * np..a * np + a + 1];
                        for (v, &gb) in row.iter_mut().zip(&g[..=a]) {
                            *v += ga * gb;
                        }
                    }
                }
                (jtj, jtr)
            })
            .collect();
        let mut jtj = vec![0.0; np * np];
        let mut jtr = vec![0.0; np];
        for (pj, pr) in parts {
            jtj.iter_mut().zip(&pj).for_each(|(a, b)| *a += b);
            jtr.iter_mut().zip(&pr).for_each(|(a, b)| *a += b);
        }
        let n = self.targets.len() as f64;
        for a in 0..np {
            for b in 0..=a {
                let v = jtj[a * np + b] / n;
                jtj[a * np + b] = v;
                jtj[b * np + a] = v;
            }
            jtr[a] /= n;
        }
        (jtj, jtr)
    }
}

/// Solves `(JᵀJ + λ·diag(JᵀJ)) d = -Jᵀr` (Marquardt scaling).
fn lm_step(jtj: &[f64], jtr: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let np = jtr.len();
    let mut m = DMatrix::from_row_slice(np, np, jtj);
    for i in 0..np {
        m[(i, i)] += lambda * m[(i, i)].max(1e-12);
    }
    let rhs = DVector::from_iterator(np, jtr.iter().map(|v| -v));
    let chol = m.cholesky()?;
    let d = chol.solve(&rhs);
    d.iter().all(|v| v.is_finite()).then(|| d.iter().copied().collect())
}

/// Fits the network by Levenberg-Marquardt on the training rows and returns
/// the parameters with the lowest validation loss.
pub fn train_lma(set: &TrainingSet, n_hidden: usize, seed: u64) -> Result<(MLPParams, ScalingRecord, TrainReport)> {
    let ne = set.n_inputs;
    if n_hidden == 0 {
        return Err(Error::invalid("need at least one hidden unit"));
    }
    let init = MLPParams::random(n_hidden, ne, seed);
    let np = init.n_params();
    if set.n_train < 10 * np {
        return Err(Error::invalid(format!(
            "{} training rows is fewer than 10 per parameter ({np} parameters)",
            set.n_train
        )));
    }
    let scale = ScalingRecord::fit(set.train_inputs(), set.train_targets(), ne)?;
    let train = Scaled::new(set, &scale, 0..set.n_train);
    let val = Scaled::new(set, &scale, set.n_train..set.len());

    let mut p = init;
    let mut loss = train.loss(&p);
    let mut best = p.clone();
    let initial_val = val.loss(&p);
    let mut best_val = initial_val;
    let mut best_iter = 0;
    let mut lambda = LAMBDA_INIT;
    let mut stale = 0;
    let mut accepted = Vec::new();
    let mut normal = train.normal_equations(&p);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let step = lm_step(&normal.0, &normal.1, lambda);
        let trial = step.and_then(|d| {
            let v: Vec<f64> = p.to_vec().iter().zip(&d).map(|(a, b)| a + b).collect();
            MLPParams::from_vec(n_hidden, ne, &v).ok()
        });
        let trial_loss = trial.as_ref().map(|t| train.loss(t));
        match (trial, trial_loss) {
            (Some(t), Some(l)) if l < loss => {
                p = t;
                loss = l;
                lambda = (lambda / 10.0).max(1e-12);
                let vl = val.loss(&p);
                accepted.push(IterationRecord {
                    iteration: it,
                    lambda,
                    train_loss: loss,
                    validation_loss: vl,
                });
                if vl < best_val {
                    best_val = vl;
                    best = p.clone();
                    best_iter = it;
                    stale = 0;
                } else {
                    stale += 1;
                }
                normal = train.normal_equations(&p);
            }
            _ => lambda *= 10.0,
        }
        if stale >= PATIENCE {
            stop = StopReason::Patience;
            break;
        }
        if lambda > 1e12 {
            stop = StopReason::Stalled;
            break;
        }
    }
    let report = TrainReport {
        iterations,
        accepted,
        initial_train_loss: train.loss(&MLPParams::random(n_hidden, ne, seed)),
        initial_validation_loss: initial_val,
        best_validation_loss: best_val,
        best_iteration: best_iter,
        stop_reason: stop,
    };
    log::debug!(
        "LM finished after {iterations} iterations ({:?}), best validation loss {best_val:.3e}",
        report.stop_reason
    );
    Ok((best, scale, report))
}

/// Hidden layer as reconstruction filters with the input scaling folded in:
/// `pre_k = Σᵢ cᵏᵢ·zᵢ − bias_k` on raw basis values `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedFilters {
    pub coefficients: Vec<Vec<f64>>,
    pub filters: Vec<Filter>,
    pub biases: Vec<f64>,
    pub a: Vec<f64>,
    pub b0: f64,
    pub out_scale: f64,
    pub out_offset: f64,
}

impl LearnedFilters {
    /// Output for the hidden pre-activations `x_k + bias` given the raw FBP values `x_k`.
    pub fn combine(&self, xs: &[f64]) -> f64 {
        let mut out = -self.b0;
        for ((x, b), a) in xs.iter().zip(&self.biases).zip(&self.a) {
            out += a * sigmoid(x - b);
        }
        (sigmoid(out) - self.out_offset) / self.out_scale
    }
}

pub fn extract_filters(p: &MLPParams, basis: &ExpBinBasis, scale: &ScalingRecord) -> Result<LearnedFilters> {
    p.validate()?;
    scale.validate(p.n_inputs)?;
    if basis.len() != p.n_inputs {
        return Err(Error::Mismatch(format!(
            "basis has {} elements but the network expects {}",
            basis.len(),
            p.n_inputs
        )));
    }
    let mut coefficients = Vec::with_capacity(p.n_hidden);
    let mut filters = Vec::with_capacity(p.n_hidden);
    let mut biases = Vec::with_capacity(p.n_hidden);
    for k in 0..p.n_hidden {
        let row = p.row(k);
        let c: Vec<f64> = row.iter().zip(&scale.in_scale).map(|(h, s)| h * s).collect();
        let shift: f64 = row.iter().zip(&scale.in_offset).map(|(h, o)| h * o).sum();
        filters.push(expand_filter(basis, &c)?);
        coefficients.push(c);
        biases.push(p.b[k] - shift);
    }
    Ok(LearnedFilters {
        coefficients,
        filters,
        biases,
        a: p.a.clone(),
        b0: p.b0,
        out_scale: scale.out_scale,
        out_offset: scale.out_offset,
    })
}
