//! Training under the Ehrenfest-penalized loss
//!
//! ```text
//! L = MSE(pred, target) + lambda/(N_targ * N_T) * sum_{i,k} |D pred_k - r_k|^alpha
//! ```
//!
//! where `D` is the finite-difference derivative and the penalty target `r`
//! is either the finite difference of the target series or the recorded
//! equation-of-motion right-hand side rescaled into model space. Everything
//! runs in scaled space; the measured right-hand side only needs the output
//! scale factor because differencing kills the affine offset.
//!
//! Full-batch gradients are reduced over fixed sample chunks in a fixed
//! order, so a seeded run is bit-reproducible regardless of thread count.

use crate::chain::{self, ChainError, ChainModel};
use crate::dataset::{apply_scaler, Channel, Dataset, DatasetError, ScalerParams};
use crate::kan::{self, KanError, KanNetwork};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("model error: {0}")]
    Model(String),
    #[error("series too short for finite differences: {0} samples (need 3)")]
    SeriesTooShort(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("penalty mode measured_rhs requires recorded right-hand-side data")]
    MissingRhs,
    #[error("non-finite {what} encountered")]
    NonFinite { what: &'static str },
    #[error("training diverged at epoch {epoch}; model restored to last finite-loss parameters")]
    Diverged { epoch: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<KanError> for TrainError {
    fn from(e: KanError) -> Self {
        TrainError::Model(e.to_string())
    }
}

impl From<ChainError> for TrainError {
    fn from(e: ChainError) -> Self {
        TrainError::Model(e.to_string())
    }
}

/// What the finite difference of the prediction is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyTarget {
    /// Finite difference of the target series.
    FiniteDifference,
    /// The recorded right-hand-side series, rescaled by the output scale factor.
    MeasuredRhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant,
    /// `lambda_epoch = lambda * factor^epoch`, factor in (0, 1].
    ExponentialDecay { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Ehrenfest penalty weight, >= 0.
    pub lambda: f64,
    /// Penalty exponent, 2 or 4.
    pub alpha: u32,
    pub penalty_target: PenaltyTarget,
    pub lambda_schedule: LambdaSchedule,
    pub batch_mode: BatchMode,
    pub seed: u64,
    /// Lifts the learning-rate/epoch range checks for experimentation.
    #[serde(default)]
    pub allow_out_of_range: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 3000,
            lambda: 1.0,
            alpha: 2,
            penalty_target: PenaltyTarget::FiniteDifference,
            lambda_schedule: LambdaSchedule::Constant,
            batch_mode: BatchMode::Full,
            seed: 0,
            allow_out_of_range: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !self.allow_out_of_range {
            if !(2e-4..=1e-3).contains(&self.learning_rate) {
                return Err(TrainError::Config(format!(
                    "learning rate {} outside [2e-4, 1e-3]; set allow_out_of_range to override",
                    self.learning_rate
                )));
            }
            if !(3000..=9000).contains(&self.epochs) {
                return Err(TrainError::Config(format!(
                    "epochs {} outside [3000, 9000]; set allow_out_of_range to override",
                    self.epochs
                )));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if self.alpha != 2 && self.alpha != 4 {
            return Err(TrainError::Config(format!(
                "penalty exponent {} not in {{2, 4}}",
                self.alpha
            )));
        }
        if let LambdaSchedule::ExponentialDecay { factor } = self.lambda_schedule {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(TrainError::Config(format!(
                    "lambda decay factor {factor} outside (0, 1]"
                )));
            }
        }
        if let BatchMode::Minibatch { size } = self.batch_mode {
            if size == 0 {
                return Err(TrainError::Config("minibatch size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Penalty weight in effect at `epoch`; non-increasing by construction.
pub fn scheduled_lambda(config: &TrainConfig, epoch: usize) -> f64 {
    match config.lambda_schedule {
        LambdaSchedule::Constant => config.lambda,
        LambdaSchedule::ExponentialDecay { factor } => config.lambda * factor.powi(epoch as i32),
    }
}

/// Per-epoch loss decomposition; `total = mse + penalty` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub mse: f64,
    pub penalty: f64,
    pub total: f64,
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central differences at interior points, first-order one-sided at both ends.
pub fn finite_difference(series: &[f64], dt: f64) -> Result<Vec<f64>, TrainError> {
    let n = series.len();
    if n < 3 {
        return Err(TrainError::SeriesTooShort(n));
    }
    let mut d = vec![0.0; n];
    d[0] = (series[1] - series[0]) / dt;
    d[n - 1] = (series[n - 1] - series[n - 2]) / dt;
    for k in 1..n - 1 {
        d[k] = (series[k + 1] - series[k - 1]) / (2.0 * dt);
    }
    Ok(d)
}

/// Adjoint of [`finite_difference`]: scatters each stencil row back onto its
/// input positions. Needed to route penalty gradients through `D`.
pub fn finite_difference_transpose(v: &[f64], dt: f64) -> Result<Vec<f64>, TrainError> {
    let n = v.len();
    if n < 3 {
        return Err(TrainError::SeriesTooShort(n));
    }
    let mut out = vec![0.0; n];
    out[0] -= v[0] / dt;
    out[1] += v[0] / dt;
    for k in 1..n - 1 {
        out[k - 1] -= v[k] / (2.0 * dt);
        out[k + 1] += v[k] / (2.0 * dt);
    }
    out[n - 2] -= v[n - 1] / dt;
    out[n - 1] += v[n - 1] / dt;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Penalty and total loss
// ---------------------------------------------------------------------------

fn penalty_reference(
    target_scaled: &[f64],
    rhs_raw: Option<&[f64]>,
    scaler: &ScalerParams,
    dt: f64,
    mode: PenaltyTarget,
) -> Result<Vec<f64>, TrainError> {
    match mode {
        PenaltyTarget::FiniteDifference => finite_difference(target_scaled, dt),
        PenaltyTarget::MeasuredRhs => {
            let rhs = rhs_raw.ok_or(TrainError::MissingRhs)?;
            let s = scaler.output_scale_factor();
            Ok(rhs.iter().map(|&r| s * r).collect())
        }
    }
}

/// Penalty contribution of a single series:
/// `lambda * mean_k |D pred - r|^alpha`. The remaining `1/N_targ` factor
/// is applied when averaging over the batch.
#[allow(clippy::too_many_arguments)]
pub fn ehrenfest_penalty(
    pred_scaled: &[f64],
    target_scaled: &[f64],
    rhs_raw: Option<&[f64]>,
    scaler: &ScalerParams,
    dt: f64,
    lambda: f64,
    alpha: u32,
    mode: PenaltyTarget,
) -> Result<f64, TrainError> {
    if pred_scaled.len() != target_scaled.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "prediction length {} != target length {}",
            pred_scaled.len(),
            target_scaled.len()
        )));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let r = penalty_reference(target_scaled, rhs_raw, scaler, dt, mode)?;
    let dp = finite_difference(pred_scaled, dt)?;
    let sum: f64 = dp
        .iter()
        .zip(&r)
        .map(|(p, t)| (p - t).powi(alpha as i32))
        .sum();
    Ok(lambda * sum / pred_scaled.len() as f64)
}

/// Batch loss per the penalized objective; `predictions` and `targets` are
/// scaled series, `rhs_batch` the raw recorded right-hand sides.
pub fn total_loss(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    rhs_batch: Option<&[Vec<f64>]>,
    scaler: &ScalerParams,
    dt: f64,
    config: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if let Some(rhs) = rhs_batch {
        if rhs.len() != targets.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} rhs series vs {} targets",
                rhs.len(),
                targets.len()
            )));
        }
    }
    let n = predictions.len();
    let n_t = targets[0].len();
    let mut sq_sum = 0.0;
    let mut pen_sum = 0.0;
    for i in 0..n {
        if predictions[i].len() != n_t || targets[i].len() != n_t {
            return Err(TrainError::ShapeMismatch(format!(
                "series {i} length mismatch"
            )));
        }
        sq_sum += predictions[i]
            .iter()
            .zip(&targets[i])
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
        pen_sum += ehrenfest_penalty(
            &predictions[i],
            &targets[i],
            rhs_batch.map(|r| r[i].as_slice()),
            scaler,
            dt,
            config.lambda,
            config.alpha,
            config.penalty_target,
        )?;
    }
    let mse = sq_sum / (n * n_t) as f64;
    let penalty = pen_sum / n as f64;
    Ok(LossBreakdown {
        epoch: 0,
        mse,
        penalty,
        total: mse + penalty,
    })
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite { what: "gradient" });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grads[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Model abstraction
// ---------------------------------------------------------------------------

/// A trainable series-to-series model: a single KAN mapping the whole input
/// vector to the whole output vector, or a causal chain with one member per
/// output step.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(KanNetwork),
    Chain(ChainModel),
}

impl Model {
    pub fn input_len(&self) -> usize {
        match self {
            Model::Single(net) => net.input_dim(),
            Model::Chain(c) => c.n_steps(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Model::Single(net) => net.output_dim(),
            Model::Chain(c) => c.n_steps(),
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            Model::Single(net) => net.param_len(),
            Model::Chain(c) => c.param_len(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, TrainError> {
        match self {
            Model::Single(net) => Ok(net.forward(input)?),
            Model::Chain(c) => Ok(c.forward(input)?),
        }
    }

    pub fn backward_into(
        &self,
        input: &[f64],
        upstream: &[f64],
        flat_grad: &mut [f64],
    ) -> Result<(), TrainError> {
        match self {
            Model::Single(net) => {
                net.backward_into(input, upstream, flat_grad)?;
            }
            Model::Chain(c) => c.backward_into(input, upstream, flat_grad)?,
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Model::Single(net) => net.flat_params(),
            Model::Chain(c) => c.flat_params(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), TrainError> {
        match self {
            Model::Single(net) => net.set_flat_params(flat)?,
            Model::Chain(c) => c.set_flat_params(flat)?,
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self {
            Model::Single(net) => format!("{:?} KAN {:?}", net.kind, net.architecture),
            Model::Chain(c) => format!(
                "chain of {} {:?} KANs {:?}, window {}",
                c.n_steps(),
                c.kind(),
                c.member_architecture(),
                c.window
            ),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        match self {
            Model::Single(net) => kan::save_network(net, path)?,
            Model::Chain(c) => chain::save_chain(c, path)?,
        }
        Ok(())
    }

    /// Loads either checkpoint flavour, distinguishing by the chain-only
    /// `n_members` field.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TrainError::Model(e.to_string()))?;
        if probe.get("n_members").is_some() {
            Ok(Model::Chain(chain::load_chain(path)?))
        } else {
            Ok(Model::Single(kan::load_network(path)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Batch gradient and training loop
// ---------------------------------------------------------------------------

/// Scaled series read once from the dataset before the epoch loop.
struct Prepared {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    /// Penalty reference `r` per sample (mode already applied).
    references: Vec<Vec<f64>>,
    n_t: usize,
    dt: f64,
}

fn prepare(
    dataset: &Dataset,
    indices: &[usize],
    scaler: &ScalerParams,
    mode: PenaltyTarget,
) -> Result<Prepared, TrainError> {
    let n_t = dataset.recipe.n_steps;
    let mut inputs = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    let mut references = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = dataset
            .samples
            .get(i)
            .ok_or_else(|| TrainError::ShapeMismatch(format!("sample index {i} out of range")))?;
        let input = apply_scaler(&sample.drive.samples, scaler, Channel::Input);
        let target = apply_scaler(&sample.output, scaler, Channel::Output);
        let reference = penalty_reference(
            &target,
            Some(&sample.ehrenfest_rhs),
            scaler,
            dataset.dt,
            mode,
        )?;
        inputs.push(input);
        targets.push(target);
        references.push(reference);
    }
    Ok(Prepared {
        inputs,
        targets,
        references,
        n_t,
        dt: dataset.dt,
    })
}

/// Loss sums and the flat parameter gradient over a batch of sample indices
/// into `prepared`. The upstream gradient per sample combines the MSE term
/// with the penalty stencil routed through the transpose of `D`.
fn batch_gradient_into(
    model: &Model,
    prepared: &Prepared,
    batch: &[usize],
    lambda: f64,
    alpha: u32,
    grad: &mut [f64],
) -> Result<(f64, f64), TrainError> {
    let n_b = batch.len();
    let n_t = prepared.n_t;
    let norm = 1.0 / (n_b * n_t) as f64;
    let mut sq_sum = 0.0;
    let mut pen_sum = 0.0;
    for &i in batch {
        let input = &prepared.inputs[i];
        let target = &prepared.targets[i];
        let pred = model.forward(input)?;
        if pred.len() != n_t {
            return Err(TrainError::ShapeMismatch(format!(
                "model produced {} outputs for {} targets",
                pred.len(),
                n_t
            )));
        }
        let mut upstream = vec![0.0; n_t];
        for k in 0..n_t {
            let e = pred[k] - target[k];
            sq_sum += e * e;
            upstream[k] = 2.0 * e * norm;
        }
        if lambda > 0.0 {
            let dp = finite_difference(&pred, prepared.dt)?;
            let r = &prepared.references[i];
            let mut w = vec![0.0; n_t];
            for k in 0..n_t {
                let e = dp[k] - r[k];
                pen_sum += e.powi(alpha as i32);
                w[k] = alpha as f64 * e.powi(alpha as i32 - 1);
            }
            let back = finite_difference_transpose(&w, prepared.dt)?;
            for k in 0..n_t {
                upstream[k] += lambda * norm * back[k];
            }
        }
        model.backward_into(input, &upstream, grad)?;
    }
    Ok((sq_sum, pen_sum))
}

/// Deterministic chunk layout: a pure function of the batch and parameter
/// sizes, so the reduction order never depends on the thread count.
fn chunk_size_for(n_samples: usize, param_len: usize) -> usize {
    let mem_cap = (2e8 as usize / (8 * param_len.max(1))).max(1);
    let n_chunks = n_samples.min(16).min(mem_cap).max(1);
    n_samples.div_ceil(n_chunks)
}

/// Batch loss and flat gradient, parallel over fixed chunks with an ordered
/// sequential merge.
pub fn loss_gradient(
    model: &Model,
    prepared_inputs: &[Vec<f64>],
    prepared_targets: &[Vec<f64>],
    rhs_raw: Option<&[Vec<f64>]>,
    scaler: &ScalerParams,
    dt: f64,
    lambda: f64,
    alpha: u32,
    mode: PenaltyTarget,
) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    if prepared_inputs.len() != prepared_targets.len() || prepared_inputs.is_empty() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} inputs vs {} targets",
            prepared_inputs.len(),
            prepared_targets.len()
        )));
    }
    let n_t = prepared_targets[0].len();
    let mut references = Vec::with_capacity(prepared_targets.len());
    for (i, t) in prepared_targets.iter().enumerate() {
        references.push(penalty_reference(
            t,
            rhs_raw.map(|r| r[i].as_slice()),
            scaler,
            dt,
            mode,
        )?);
    }
    let prepared = Prepared {
        inputs: prepared_inputs.to_vec(),
        targets: prepared_targets.to_vec(),
        references,
        n_t,
        dt,
    };
    let all: Vec<usize> = (0..prepared.inputs.len()).collect();
    let (sums, grad) = parallel_batch(model, &prepared, &all, lambda, alpha)?;
    let norm = 1.0 / (all.len() * n_t) as f64;
    let mse = sums.0 * norm;
    let penalty = lambda * sums.1 * norm;
    Ok((
        LossBreakdown {
            epoch: 0,
            mse,
            penalty,
            total: mse + penalty,
        },
        grad,
    ))
}

fn parallel_batch(
    model: &Model,
    prepared: &Prepared,
    batch: &[usize],
    lambda: f64,
    alpha: u32,
) -> Result<((f64, f64), Vec<f64>), TrainError> {
    let plen = model.param_len();
    let chunk_size = chunk_size_for(batch.len(), plen);
    let partials: Vec<Result<(f64, f64, Vec<f64>), TrainError>> = batch
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut grad = vec![0.0; plen];
            let (sq, pen) = batch_gradient_into(model, prepared, chunk, lambda, alpha, &mut grad)?;
            Ok((sq, pen, grad))
        })
        .collect();
    let mut grad = vec![0.0; plen];
    let mut sq_sum = 0.0;
    let mut pen_sum = 0.0;
    for partial in partials {
        let (sq, pen, g) = partial?;
        sq_sum += sq;
        pen_sum += pen;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok(((sq_sum, pen_sum), grad))
}

/// Training outcome: the per-epoch loss history. The model argument of
/// [`train`] holds the final parameters (or the last finite-loss parameters
/// if training diverged).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossBreakdown>,
}

/// Runs the configured number of epochs of (full-batch by default) Adam on
/// the dataset's training subset. Requires a fitted scaler and a split.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(&LossBreakdown)>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let scaler = *dataset.scaler()?;
    let split = dataset.split()?.clone();
    let n_t = dataset.recipe.n_steps;
    if model.input_len() != n_t || model.output_len() != n_t {
        return Err(TrainError::ShapeMismatch(format!(
            "model maps {} -> {} but the dataset has {} time steps",
            model.input_len(),
            model.output_len(),
            n_t
        )));
    }
    let prepared = prepare(dataset, &split.train, &scaler, config.penalty_target)?;
    let n_train = prepared.inputs.len();

    let mut params = model.flat_params();
    let mut adam = AdamState::new(params.len());
    let mut last_good = params.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    for epoch in 0..config.epochs {
        let lambda = scheduled_lambda(config, epoch);
        let mut sq_sum = 0.0;
        let mut pen_sum = 0.0;
        match config.batch_mode {
            BatchMode::Full => {
                let all: Vec<usize> = (0..n_train).collect();
                let (sums, grad) = parallel_batch(model, &prepared, &all, lambda, config.alpha)?;
                sq_sum = sums.0;
                pen_sum = sums.1;
                adam_step(&mut params, &grad, &mut adam, config.learning_rate)
                    .map_err(|e| at_epoch(e, epoch))?;
                model.set_flat_params(&params)?;
            }
            BatchMode::Minibatch { size } => {
                let mut order: Vec<usize> = (0..n_train).collect();
                order.shuffle(&mut shuffle_rng);
                for batch in order.chunks(size.min(n_train)) {
                    let (sums, grad) =
                        parallel_batch(model, &prepared, batch, lambda, config.alpha)?;
                    sq_sum += sums.0;
                    pen_sum += sums.1;
                    // per-batch normalization: gradients in batch_gradient_into
                    // already use the batch size
                    adam_step(&mut params, &grad, &mut adam, config.learning_rate)
                        .map_err(|e| at_epoch(e, epoch))?;
                    model.set_flat_params(&params)?;
                }
            }
        }
        let norm = 1.0 / (n_train * n_t) as f64;
        let mse = sq_sum * norm;
        let penalty = lambda * pen_sum * norm;
        let breakdown = LossBreakdown {
            epoch,
            mse,
            penalty,
            total: mse + penalty,
        };
        if !breakdown.total.is_finite() {
            model.set_flat_params(&last_good)?;
            return Err(TrainError::Diverged { epoch });
        }
        last_good.copy_from_slice(&params);
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&breakdown);
        }
        history.push(breakdown);
    }
    model.set_flat_params(&params)?;
    Ok(TrainReport { history })
}

fn at_epoch(e: TrainError, epoch: usize) -> TrainError {
    match e {
        TrainError::NonFinite { .. } => TrainError::Diverged { epoch },
        other => other,
    }
}
