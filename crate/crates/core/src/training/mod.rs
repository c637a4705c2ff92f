//! Off-line unsupervised training and on-line inference.
//!
//! Each epoch draws a fresh mini-batch of drops (layout and channels) and
//! takes `steps_per_batch` optimizer steps on it, minimising the negative
//! mean sum rate. No labels are involved.

mod adam;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, sgd_step, AdamHyper, AdamState};

use crate::channel::{sample_batch, ChannelRealization, ScenarioConfig};
use crate::error::{Error, Result};
use crate::gnn::{forward_batch, forward_on_tape, save_checkpoint, BatchChannels, BeamformingSolution, GraphBatch, ModelParams, SumRateLoss};
use crate::graph::NetworkGraph;
use crate::numerics::{GradTape, Real};
use crate::objective::RateReport;

/// Offset mixed into the master seed for the fixed evaluation set, so it never
/// overlaps the training draws.
pub const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// B, drops per mini-batch.
    pub batch_size: usize,
    /// Optimizer steps taken on each mini-batch before it is replaced.
    pub steps_per_batch: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (the first and last epoch are always
    /// evaluated). Rows in between repeat the latest evaluation.
    pub eval_every: usize,
    /// Size of the fixed evaluation set.
    pub eval_samples: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Number of independent chunks a mini-batch is split into for parallel
    /// gradient evaluation. Chunk gradients are summed in chunk order, so a
    /// given value is reproducible; 1 is fully sequential.
    pub chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small recipe that finishes in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            epochs: 200,
            batch_size: 20,
            steps_per_batch: 20,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 1,
            eval_samples: 50,
            checkpoint_path: None,
            chunks: 1,
        }
    }

    /// Mini-batches of 100 drops with 100 steps each.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 100,
            steps_per_batch: 100,
            eval_samples: 200,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.steps_per_batch == 0 {
            return Err(Error::Config("steps_per_batch must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.eval_every == 0 || self.chunks == 0 {
            return Err(Error::Config("eval_every and chunks must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's optimizer steps.
    pub loss: f64,
    /// Mean sum rate (bit/s/Hz) on the fixed evaluation set.
    pub eval_sum_rate: f64,
    /// Mean gradient 2-norm over the epoch's steps.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epochs abandoned because of a non-finite loss or gradient.
    pub aborted: Vec<usize>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,eval_sum_rate,grad_norm,seconds";

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{},{:.3}", r.epoch, r.loss, r.eval_sum_rate, r.grad_norm, r.seconds)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn eval_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.eval_sum_rate).collect()
    }
}

/// Loss, per-sample sum rates and parameter gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchGradient<T: Real> {
    pub loss: T,
    pub rates: Vec<T>,
    /// In [`ModelParams::tensors`] order.
    pub grads: Vec<Array2<T>>,
}

impl<T: Real> BatchGradient<T> {
    pub fn norm(&self) -> T {
        self.grads.iter().map(|g| g.iter().map(|&x| x * x).sum::<T>()).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Packed graphs and channel constants of a mini-batch.
pub struct PreparedBatch<T: Real> {
    graphs: GraphBatch<T>,
    channels: BatchChannels<T>,
}

impl<T: Real> PreparedBatch<T> {
    pub fn new(reals: &[&ChannelRealization<T>], model: &ModelParams<T>, scenario: &ScenarioConfig) -> Result<Self> {
        let graphs: Vec<NetworkGraph<T>> = reals.iter().map(|r| NetworkGraph::build(r)).collect::<Result<_>>()?;
        let refs: Vec<&NetworkGraph<T>> = graphs.iter().collect();
        Ok(Self {
            graphs: GraphBatch::new(&refs, model)?,
            channels: BatchChannels::new(reals, T::lit(scenario.tx_power_w()), T::lit(scenario.noise_power_w()))?,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Forward pass, loss and backward pass on a fresh tape.
    pub fn loss_and_gradient(&self, model: &ModelParams<T>) -> Result<BatchGradient<T>> {
        let mut tape = GradTape::new();
        let nets = model.register(&mut tape);
        let reps = forward_on_tape(&mut tape, &nets, &self.graphs, &model.layout, model.layers());
        let (loss, rates) = SumRateLoss::apply(&mut tape, reps.users, reps.ris, &self.channels);
        let grads = tape.backward(loss)?;
        let value = tape.value(loss)[(0, 0)];
        let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.dim()).collect();
        let mut map = grads.into_map();
        let grads = shapes
            .iter()
            .enumerate()
            .map(|(i, &shape)| map.remove(&i).unwrap_or_else(|| Array2::zeros(shape)))
            .collect();
        Ok(BatchGradient { loss: value, rates, grads })
    }
}

/// Gradient of the mean loss over `reals`, evaluated in `chunks` independent
/// pieces and combined in chunk order.
pub fn batch_gradient<T: Real>(model: &ModelParams<T>, scenario: &ScenarioConfig, reals: &[ChannelRealization<T>], chunks: usize) -> Result<BatchGradient<T>> {
    let prepared = prepare_chunks(model, scenario, reals, chunks)?;
    chunked_gradient(model, &prepared, reals.len())
}

fn prepare_chunks<T: Real>(model: &ModelParams<T>, scenario: &ScenarioConfig, reals: &[ChannelRealization<T>], chunks: usize) -> Result<Vec<PreparedBatch<T>>> {
    if reals.is_empty() {
        return Err(Error::Config("empty mini-batch".into()));
    }
    let size = reals.len().div_ceil(chunks.max(1));
    reals
        .chunks(size)
        .map(|c| {
            let refs: Vec<&ChannelRealization<T>> = c.iter().collect();
            PreparedBatch::new(&refs, model, scenario)
        })
        .collect()
}

fn chunked_gradient<T: Real>(model: &ModelParams<T>, prepared: &[PreparedBatch<T>], total: usize) -> Result<BatchGradient<T>> {
    let parts: Vec<BatchGradient<T>> = prepared.par_iter().map(|p| p.loss_and_gradient(model)).collect::<Result<_>>()?;
    let total_t = T::from_usize(total).unwrap();
    let mut iter = prepared.iter().zip(parts);
    let (first_batch, mut acc) = iter.next().expect("at least one chunk");
    let w0 = T::from_usize(first_batch.len()).unwrap() / total_t;
    acc.loss *= w0;
    acc.grads.iter_mut().for_each(|g| *g *= w0);
    for (batch, part) in iter {
        let w = T::from_usize(batch.len()).unwrap() / total_t;
        acc.loss += part.loss * w;
        acc.rates.extend(part.rates);
        for (a, g) in acc.grads.iter_mut().zip(&part.grads) {
            a.scaled_add(w, g);
        }
    }
    Ok(acc)
}

/// Everything `train` produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub model: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub log: TrainLog,
}

/// Trains `model` on freshly generated drops of `scenario`.
pub fn train<T: Real>(scenario: &ScenarioConfig, model: ModelParams<T>, cfg: &TrainConfig) -> Result<(ModelParams<T>, TrainLog)> {
    let out = train_with(scenario, model, None, cfg, |_| {})?;
    Ok((out.model, out.log))
}

/// [`train`] with an optional optimizer state to resume from and a callback
/// invoked after every epoch.
pub fn train_with<T: Real>(
    scenario: &ScenarioConfig,
    mut model: ModelParams<T>,
    optimizer: Option<AdamState<T>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    scenario.validate()?;
    model.check_scenario(scenario)?;

    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.dim()).collect();
    let mut state = match optimizer {
        Some(s) if s.matches(&model.tensors()) => s,
        Some(_) => return Err(Error::Config("optimizer state does not match the model".into())),
        None => AdamState::zeros(shapes.iter().copied()),
    };
    let hyper = AdamHyper {
        learning_rate: T::lit(cfg.learning_rate),
        beta1: T::lit(cfg.beta1),
        beta2: T::lit(cfg.beta2),
        epsilon: T::lit(cfg.epsilon),
    };

    let eval_set: Vec<ChannelRealization<T>> = sample_batch(scenario, cfg.seed.wrapping_add(EVAL_SEED_OFFSET), 0, cfg.eval_samples);
    let mut log = TrainLog::default();
    let mut last_eval = f64::NAN;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let reals: Vec<ChannelRealization<T>> = sample_batch(scenario, cfg.seed, (epoch * cfg.batch_size) as u64, cfg.batch_size);
        let prepared = prepare_chunks(&model, scenario, &reals, cfg.chunks)?;
        let snapshot = (model.clone(), state.clone());

        let (mut loss_sum, mut norm_sum) = (0.0, 0.0);
        let mut aborted = false;
        for _ in 0..cfg.steps_per_batch {
            let g = chunked_gradient(&model, &prepared, reals.len())?;
            if !g.is_finite() {
                log::warn!("epoch {epoch}: non-finite loss or gradient, restoring parameters from the start of the epoch");
                (model, state) = snapshot.clone();
                aborted = true;
                break;
            }
            loss_sum += g.loss.as_f64();
            norm_sum += g.norm().as_f64();
            let mut params = model.tensors_mut();
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(&mut params, &g.grads, &mut state, hyper),
                OptimizerKind::Sgd => sgd_step(&mut params, &g.grads, hyper.learning_rate),
            }
        }
        if aborted {
            log.aborted.push(epoch);
            continue;
        }

        if epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs || last_eval.is_nan() {
            last_eval = if eval_set.is_empty() {
                0.0
            } else {
                mean_sum_rate(&model, scenario, &eval_set)?
            };
        }
        let steps = cfg.steps_per_batch as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / steps,
            eval_sum_rate: last_eval,
            grad_norm: norm_sum / steps,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }

    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(path, &model, Some(&state))?;
    }
    Ok(TrainOutcome {
        model,
        optimizer: state,
        log,
    })
}

/// Beamformers and phases for one drop, with their rates. Never touches the
/// model weights.
pub fn infer<T: Real>(real: &ChannelRealization<T>, model: &ModelParams<T>, scenario: &ScenarioConfig) -> Result<(BeamformingSolution<T>, RateReport<T>)> {
    Ok(infer_batch(std::slice::from_ref(real), model, scenario)?.remove(0))
}

/// [`infer`] over many drops, batched through the networks in groups of 64.
pub fn infer_batch<T: Real>(reals: &[ChannelRealization<T>], model: &ModelParams<T>, scenario: &ScenarioConfig) -> Result<Vec<(BeamformingSolution<T>, RateReport<T>)>> {
    model.check_scenario(scenario)?;
    let tx_power = T::lit(scenario.tx_power_w());
    let noise = T::lit(scenario.noise_power_w());
    let groups: Vec<&[ChannelRealization<T>]> = reals.chunks(64).collect();
    let solved: Vec<Vec<(BeamformingSolution<T>, RateReport<T>)>> = groups
        .par_iter()
        .map(|group| {
            let graphs: Vec<NetworkGraph<T>> = group.iter().map(NetworkGraph::build).collect::<Result<_>>()?;
            let refs: Vec<&NetworkGraph<T>> = graphs.iter().collect();
            let sols = forward_batch(&refs, model, tx_power)?;
            group
                .iter()
                .zip(sols)
                .map(|(r, s)| {
                    let rep = RateReport::evaluate(r, &s, noise)?;
                    Ok((s, rep))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(solved.into_iter().flatten().collect())
}

pub fn mean_sum_rate<T: Real>(model: &ModelParams<T>, scenario: &ScenarioConfig, reals: &[ChannelRealization<T>]) -> Result<f64> {
    let out = infer_batch(reals, model, scenario)?;
    Ok(out.iter().map(|(_, r)| r.sum_rate.as_f64()).sum::<f64>() / out.len().max(1) as f64)
}
