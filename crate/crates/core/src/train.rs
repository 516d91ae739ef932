//! One-step supervised training of the surrogate on generated trajectories.
//!
//! Each optimizer step draws a batch of (frame t, frame t+stride) pairs,
//! perturbs the deformable coordinates with the scaled noise model, rebuilds
//! contact edges from the perturbed state, and regresses the normalized
//! delta to the clean successor frame. The noise is folded into the target
//! so that corrupted input plus raw target reproduces the successor
//! bit-exactly. Adam with a geometric learning-rate decay drives the flat
//! parameter vector; everything is seeded and single-threaded, so a rerun
//! of the same config is bitwise identical.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::MeshState;
use crate::net::{
    self, save_checkpoint, ColumnStats, GraphBatch, InputStats, ModelParameters, TargetStats,
    OUTPUT_DIM,
};
use crate::synth::TrajectoryDataset;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Noise scale as a fraction of the mean per-axis step displacement.
    pub noise_factor: f64,
    /// Contact search radius, meters.
    pub contact_radius: f64,
    /// Frames jumped per training pair; the model learns stride-sized steps.
    pub step_stride: usize,
    pub seed: u64,
    /// Save a checkpoint every this many optimizer steps (needs a run dir).
    pub checkpoint_every: Option<usize>,
    /// Hard cap on optimizer steps, for fixed-budget comparisons.
    pub max_steps: Option<usize>,
    /// Stop once the clean full-dataset MSE falls below this, checked at
    /// epoch boundaries.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 28,
            lr_start: 1e-4,
            lr_end: 1e-5,
            noise_factor: 1e-3,
            contact_radius: 0.8e-3,
            step_stride: 1,
            seed: 0,
            checkpoint_every: None,
            max_steps: None,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.step_stride == 0 {
            return Err(Error::invalid("step_stride must be at least 1"));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::invalid(format!(
                "learning rate must decay: start {}, end {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.noise_factor >= 0.0 && self.noise_factor.is_finite()) {
            return Err(Error::invalid(format!("noise_factor must be non-negative, got {}", self.noise_factor)));
        }
        if !(self.contact_radius > 0.0 && self.contact_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "contact_radius must be positive, got {}",
                self.contact_radius
            )));
        }
        if let Some(k) = self.checkpoint_every {
            if k == 0 {
                return Err(Error::invalid("checkpoint_every must be at least 1 when set"));
            }
        }
        Ok(())
    }
}

/// Per-axis Gaussian noise scale in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_x: f64,
    pub sigma_z: f64,
}

/// Pair start frames: multiples of the stride whose successor still exists.
fn pair_starts(n_frames: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..).map(move |k| k * stride).take_while(move |t| t + stride < n_frames)
}

/// Noise scale from the data: the configured factor times the absolute
/// signed mean per-axis displacement of tube nodes across stride pairs.
pub fn compute_noise_model(
    datasets: &[TrajectoryDataset],
    noise_factor: f64,
    stride: usize,
) -> Result<NoiseModel> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut sum_x = 0.0;
    let mut sum_z = 0.0;
    let mut count = 0u64;
    for ds in datasets {
        let range = ds.topology.tube_range();
        for t in pair_starts(ds.frames.len(), stride) {
            let a = &ds.frames[t].positions;
            let b = &ds.frames[t + stride].positions;
            for i in range.clone() {
                sum_x += b[i].x - a[i].x;
                sum_z += b[i].z - a[i].z;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("no stride pairs available to scale the noise"));
    }
    Ok(NoiseModel {
        sigma_x: noise_factor * (sum_x / count as f64).abs(),
        sigma_z: noise_factor * (sum_z / count as f64).abs(),
    })
}

/// Mean and standard deviation of the raw stride targets over tube nodes,
/// per axis. The std floor keeps the normalization invertible on axes with
/// no motion at all.
pub fn compute_target_stats(datasets: &[TrajectoryDataset], stride: usize) -> Result<TargetStats> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut sum = [0.0f64; 2];
    let mut sumsq = [0.0f64; 2];
    let mut count = 0u64;
    for ds in datasets {
        let range = ds.topology.tube_range();
        for t in pair_starts(ds.frames.len(), stride) {
            let a = &ds.frames[t].positions;
            let b = &ds.frames[t + stride].positions;
            for i in range.clone() {
                for (axis, d) in [b[i].x - a[i].x, b[i].z - a[i].z].into_iter().enumerate() {
                    sum[axis] += d;
                    sumsq[axis] += d * d;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("no stride pairs available for target statistics"));
    }
    let n = count as f64;
    let mut stats = TargetStats { mean: [0.0; 2], std: [0.0; 2] };
    for axis in 0..2 {
        let mean = sum[axis] / n;
        let var = (sumsq[axis] / n - mean * mean).max(0.0);
        stats.mean[axis] = mean;
        stats.std[axis] = var.sqrt().max(1e-12);
    }
    Ok(stats)
}

struct ColumnAcc {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    rows: u64,
}

impl ColumnAcc {
    fn new(dim: usize) -> Self {
        ColumnAcc {
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
            min: vec![f64::INFINITY; dim],
            max: vec![f64::NEG_INFINITY; dim],
            rows: 0,
        }
    }

    fn push(&mut self, features: &ndarray::Array2<f64>) {
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate() {
                self.sum[j] += v;
                self.sumsq[j] += v * v;
                self.min[j] = self.min[j].min(v);
                self.max[j] = self.max[j].max(v);
            }
            self.rows += 1;
        }
    }

    fn finish(self, dim: usize) -> ColumnStats {
        // No rows seen (an edge type absent from every frame): identity.
        if self.rows == 0 {
            return ColumnStats::identity(dim);
        }
        let n = self.rows as f64;
        let mut stats = ColumnStats { mean: Vec::with_capacity(dim), std: Vec::with_capacity(dim) };
        for j in 0..dim {
            if self.min[j] == self.max[j] {
                // Constant column: centering alone sends it to exact zero;
                // a data-derived scale would only amplify roundoff.
                stats.mean.push(self.min[j]);
                stats.std.push(1.0);
            } else {
                let mean = self.sum[j] / n;
                let var = (self.sumsq[j] / n - mean * mean).max(0.0);
                stats.mean.push(mean);
                stats.std.push(var.sqrt().max(1e-12));
            }
        }
        stats
    }
}

/// Per-column statistics of the four raw feature matrices over the clean
/// pair-start states, for input standardization. Uses the same stride pairs
/// the training loop draws from.
pub fn compute_input_stats(
    datasets: &[TrajectoryDataset],
    stride: usize,
    contact_radius: f64,
) -> Result<InputStats> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let identity = InputStats::identity();
    let mut node = ColumnAcc::new(identity.node.mean.len());
    let mut tube = ColumnAcc::new(identity.tube.mean.len());
    let mut die = ColumnAcc::new(identity.die.mean.len());
    let mut stamp = ColumnAcc::new(identity.stamp.mean.len());
    let mut saw_pairs = false;
    for ds in datasets {
        for t in pair_starts(ds.frames.len(), stride) {
            let batch =
                GraphBatch::from_state(&ds.frames[t], &ds.topology, contact_radius, ds.config.mu)?;
            node.push(&batch.node_features);
            tube.push(&batch.edges.tube.features);
            die.push(&batch.edges.die.features);
            stamp.push(&batch.edges.stamp.features);
            saw_pairs = true;
        }
    }
    if !saw_pairs {
        return Err(Error::invalid("no stride pairs available for input statistics"));
    }
    let node_dim = identity.node.mean.len();
    let tube_dim = identity.tube.mean.len();
    let contact_dim = identity.die.mean.len();
    Ok(InputStats {
        node: node.finish(node_dim),
        tube: tube.finish(tube_dim),
        die: die.finish(contact_dim),
        stamp: stamp.finish(contact_dim),
    })
}

/// Float delta such that `from + delta == to` bitwise whenever such a
/// double exists; falls back to the rounded difference otherwise.
pub fn exact_delta(from: f64, to: f64) -> f64 {
    let naive = to - from;
    let mut d = naive;
    for _ in 0..16 {
        let got = from + d;
        if got == to {
            return d;
        }
        d = if got < to { d.next_up() } else { d.next_down() };
    }
    naive
}

/// One supervised example plus the pieces tests need to check exactness.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub batch: GraphBatch,
    /// Normalized regression targets, rigid rows zeroed.
    pub targets: Array2<f64>,
    /// Raw meter-scale deltas; corrupted state plus these equals the clean
    /// successor frame bit-exactly.
    pub raw_targets: Array2<f64>,
    pub corrupted: MeshState,
}

/// Build the training example for (frame t, frame t+stride).
///
/// Tube coordinates are perturbed with the noise model, contact edges are
/// rebuilt from the perturbed state, and the target is the exact delta from
/// the perturbed position to the clean successor. Zero-sigma axes consume
/// no randomness, so a zero noise factor matches a noise-free pipeline
/// bitwise.
pub fn make_training_pair(
    dataset: &TrajectoryDataset,
    t: usize,
    stride: usize,
    contact_radius: f64,
    noise: &NoiseModel,
    stats: &TargetStats,
    rng: &mut ChaCha20Rng,
) -> Result<TrainingPair> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let n_frames = dataset.frames.len();
    if t + stride >= n_frames {
        return Err(Error::invalid(format!(
            "pair ({t}, {}) exceeds the {n_frames} available frames",
            t + stride
        )));
    }
    stats.validate()?;

    let mut corrupted = dataset.frames[t].clone();
    let range = dataset.topology.tube_range();
    for axis in 0..2 {
        let sigma = [noise.sigma_x, noise.sigma_z][axis];
        if sigma == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::invalid(format!("bad noise sigma {sigma}: {e}")))?;
        for p in corrupted.positions[range.clone()].iter_mut() {
            let xi = normal.sample(rng);
            if axis == 0 {
                p.x += xi;
            } else {
                p.z += xi;
            }
        }
    }

    let next = &dataset.frames[t + stride];
    let n = corrupted.len();
    let mut raw = Array2::zeros((n, OUTPUT_DIM));
    let mut targets = Array2::zeros((n, OUTPUT_DIM));
    for i in range.clone() {
        let dx = exact_delta(corrupted.positions[i].x, next.positions[i].x);
        let dz = exact_delta(corrupted.positions[i].z, next.positions[i].z);
        raw[[i, 0]] = dx;
        raw[[i, 1]] = dz;
        targets[[i, 0]] = (dx - stats.mean[0]) / stats.std[0];
        targets[[i, 1]] = (dz - stats.mean[1]) / stats.std[1];
    }

    let batch =
        GraphBatch::from_state(&corrupted, &dataset.topology, contact_radius, dataset.config.mu)?;
    Ok(TrainingPair { batch, targets, raw_targets: raw, corrupted })
}

/// Geometrically interpolated learning rate: lr(0) = start, lr(total) = end.
fn lr_at(step: usize, total: usize, start: f64, end: f64) -> f64 {
    if total == 0 {
        return start;
    }
    start * (end / start).powf(step as f64 / total as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainStepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParameters,
    pub history: Vec<TrainStepRecord>,
}

/// Pooled masked MSE of the model over all clean stride pairs, in
/// normalized units. No noise is injected.
pub fn evaluate_mse(
    model: &ModelParameters,
    datasets: &[TrajectoryDataset],
    stride: usize,
    contact_radius: f64,
) -> Result<f64> {
    let silent = NoiseModel { sigma_x: 0.0, sigma_z: 0.0 };
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut count = 0u64;
    for ds in datasets {
        for t in pair_starts(ds.frames.len(), stride) {
            let pair = make_training_pair(
                ds,
                t,
                stride,
                contact_radius,
                &silent,
                &model.target_stats,
                &mut rng,
            )?;
            let out = net::forward(model, &pair.batch)?;
            for (i, &masked) in pair.batch.tube_mask.iter().enumerate() {
                if !masked {
                    continue;
                }
                for c in 0..OUTPUT_DIM {
                    let r = out[[i, c]] - pair.targets[[i, c]];
                    total += r * r;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    Ok(total / count as f64)
}

/// Run the optimization loop. Target statistics are recomputed from the
/// training data and stored into the returned model. With a run directory,
/// writes `config.json`, `loss.csv`, periodic checkpoints, and a final one.
pub fn train(
    model: ModelParameters,
    datasets: &[TrajectoryDataset],
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if datasets.is_empty() {
        return Err(Error::invalid("training needs at least one trajectory"));
    }
    for ds in datasets {
        ds.validate()?;
    }
    if config.checkpoint_every.is_some() && run_dir.is_none() {
        return Err(Error::invalid("checkpoint_every needs a run directory"));
    }

    let stride = config.step_stride;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (d, ds) in datasets.iter().enumerate() {
        for t in pair_starts(ds.frames.len(), stride) {
            pairs.push((d, t));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "stride {stride} leaves no training pairs"
        )));
    }

    let mut model = model;
    model.target_stats = compute_target_stats(datasets, stride)?;
    model.input_stats = compute_input_stats(datasets, stride, config.contact_radius)?;
    let noise = compute_noise_model(datasets, config.noise_factor, stride)?;

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config)?)?;
    }

    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let planned = config.epochs.saturating_mul(steps_per_epoch);
    let total_steps = config.max_steps.map_or(planned, |cap| planned.min(cap));
    let mut history = Vec::with_capacity(total_steps);

    if total_steps > 0 {
        let mut adam = Adam::new(model.params.len());
        let mut step = 0usize;
        'epochs: for epoch in 0..config.epochs {
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            rng.set_stream(1 + epoch as u64);
            let mut order = pairs.clone();
            order.shuffle(&mut rng);

            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let mut batches = Vec::with_capacity(chunk.len());
                let mut target_blocks = Vec::with_capacity(chunk.len());
                for &(d, t) in chunk {
                    let pair = make_training_pair(
                        &datasets[d],
                        t,
                        stride,
                        config.contact_radius,
                        &noise,
                        &model.target_stats,
                        &mut rng,
                    )?;
                    batches.push(pair.batch);
                    target_blocks.push(pair.targets);
                }
                let batch = GraphBatch::concat(&batches)?;
                let views: Vec<_> = target_blocks.iter().map(|t| t.view()).collect();
                let targets = concatenate(Axis(0), &views)
                    .map_err(|e| Error::invalid(format!("target widths disagree: {e}")))?;

                let (loss, grad) = net::gradients(&model, &batch, &targets, &batch.tube_mask)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { step });
                }
                let lr = lr_at(step, total_steps, config.lr_start, config.lr_end);
                adam.step(&mut model.params, &grad, lr);
                history.push(TrainStepRecord { step, lr, loss });
                epoch_loss += loss;
                epoch_batches += 1;
                step += 1;

                if let (Some(k), Some(dir)) = (config.checkpoint_every, run_dir) {
                    if step % k == 0 {
                        save_checkpoint(&model, &dir.join(format!("step_{step:06}")))?;
                    }
                }
                if step >= total_steps {
                    break 'epochs;
                }
            }

            if let Some(threshold) = config.stop_below {
                // Cheap hurdle first; the full clean evaluation is costly.
                if epoch_batches > 0 && epoch_loss / (epoch_batches as f64) < threshold {
                    let mse = evaluate_mse(&model, datasets, stride, config.contact_radius)?;
                    if mse < threshold {
                        break 'epochs;
                    }
                }
            }
        }
    }

    if let Some(dir) = run_dir {
        let mut csv = String::from("step,lr,loss\n");
        for r in &history {
            csv.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
        }
        std::fs::write(dir.join("loss.csv"), csv)?;
        save_checkpoint(&model, &dir.join("final"))?;
    }

    Ok(TrainOutcome { model, history })
}
