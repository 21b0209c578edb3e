//! Deterministic training loop: shuffled micro-batches, gradient
//! accumulation with mean reduction, cosine-scheduled Adam steps, and a
//! JSONL-ready log.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::features::ModalityFeatures;
use crate::model::net::{forward, predict, Ablation};
use crate::model::params::ParameterStore;
use crate::numerics::graph::{Gradients, Graph};
use crate::training::adam::{optimizer_step, AdamState};
use crate::training::metrics::MetricsReport;
use crate::training::schedule::lr_at;
use crate::training::TrainConfig;

/// One training-log line; serializes to a flat JSON object.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step { epoch: usize, step: usize, lr: f64, loss: f64 },
    Epoch { epoch: usize, precision: f64, recall: f64, f1: f64 },
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    /// Mean micro-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Metrics on the training set after the final epoch.
    pub final_metrics: MetricsReport,
    pub optimizer_steps: usize,
}

/// Argmax predictions over `dataset`; positive class is "stuttered".
pub fn evaluate(
    config: &ModelConfig,
    params: &ParameterStore,
    dataset: &[ModalityFeatures],
    ablation: Ablation,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Input("evaluate: empty dataset".into()));
    }
    let mut report = MetricsReport::default();
    for sample in dataset {
        let logits = forward(config, params, sample, ablation)?;
        report.record(sample.label, predict(&logits)?);
    }
    Ok(report)
}

/// Mean cross-entropy loss and parameter gradients for one micro-batch.
fn micro_batch_grads(
    config: &ModelConfig,
    params: &ParameterStore,
    batch: &[&ModalityFeatures],
    ablation: Ablation,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let bp = params.bind(&mut g)?;
    let mut rows = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for sample in batch {
        let logits = crate::model::net::forward_on(&mut g, &bp, sample, config, ablation)?;
        rows.push(g.reshape(logits, vec![1, 2])?);
        labels.push(sample.label);
    }
    let stacked = g.concat_rows(&rows)?;
    let loss = g.cross_entropy(stacked, &labels)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    Ok((value, grads))
}

/// Run the full optimization loop over `dataset`.
///
/// Gradients are averaged over `grad_accum_steps` micro-batches before each
/// Adam step, so the effective update is invariant to how a batch is split.
/// Logs are deterministic for a fixed seed.
pub fn train(
    config: &ModelConfig,
    params: &mut ParameterStore,
    dataset: &[ModalityFeatures],
    train_config: &TrainConfig,
    ablation: Ablation,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    config.validate()?;
    params.validate_against(config)?;
    if dataset.is_empty() {
        return Err(Error::Input("train: empty dataset".into()));
    }

    let n = dataset.len();
    let micro_per_epoch = n.div_ceil(train_config.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(train_config.grad_accum_steps);
    let total_steps = steps_per_epoch * train_config.epochs;

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(train_config.epochs);
    let mut global_step = 0usize;
    let mut final_metrics = MetricsReport::default();

    for epoch in 1..=train_config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let micro_batches: Vec<&[usize]> = order.chunks(train_config.batch_size).collect();

        let mut epoch_loss_sum = 0.0;
        let mut epoch_loss_count = 0usize;

        for group in micro_batches.chunks(train_config.grad_accum_steps) {
            global_step += 1;
            let mut accum: Option<Gradients> = None;
            let mut loss_sum = 0.0;
            for micro in group {
                let batch: Vec<&ModalityFeatures> = micro.iter().map(|&i| &dataset[i]).collect();
                let (loss, grads) = micro_batch_grads(config, params, &batch, ablation)?;
                loss_sum += loss;
                match &mut accum {
                    None => accum = Some(grads),
                    Some(acc) => acc.add_assign(&grads)?,
                }
            }
            let mut grads = accum.expect("non-empty accumulation group");
            grads.scale(1.0 / group.len() as f64);
            let loss = loss_sum / group.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at optimizer step {global_step}"
                )));
            }
            epoch_loss_sum += loss;
            epoch_loss_count += 1;

            let lr = lr_at(global_step, total_steps, train_config)?;
            optimizer_step(params, &grads, &mut adam, lr, train_config)?;
            log.push(LogRecord::Step { epoch, step: global_step, lr, loss });
        }

        epoch_losses.push(epoch_loss_sum / epoch_loss_count as f64);
        let metrics = evaluate(config, params, dataset, ablation)?;
        log.push(LogRecord::Epoch {
            epoch,
            precision: metrics.precision(),
            recall: metrics.recall(),
            f1: metrics.f1(),
        });
        final_metrics = metrics;
    }

    Ok(TrainOutcome {
        log,
        epoch_losses,
        final_metrics,
        optimizer_steps: global_step,
    })
}
