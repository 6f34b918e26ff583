use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{AffinityRecord, EncodedPair};
use crate::metrics::EvaluationReport;
use crate::model::{Mode, StepNoise};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Graph, Tensor};

use super::{AdamHyper, AdamState, Checkpoint, Predictor, Progress, Result, TrainConfig, TrainError};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Optimizer steps completed so far.
    pub steps: u64,
    /// Mean training-mode mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Evaluation-mode MSE on the validation set.
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Default)]
pub struct TrainOptions {
    /// Stop after this many optimizer steps in total (validation still runs
    /// for the partial epoch).
    pub max_steps: Option<u64>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation state reached in this run; `None` when a resumed run
    /// never beat the loss it started from.
    pub best: Option<Checkpoint>,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Gradient of `(1/B) Σ (ŷ_i − y_i)²` over `batch`, one slot per parameter,
/// together with the loss. Record `i` of the batch draws its noise from
/// `(seed, step, i)`.
pub fn batch_gradients(predictor: &Predictor, batch: &[&EncodedPair], step: u64) -> Result<(f64, Vec<Option<Tensor>>)> {
    let model = &predictor.model;
    let mut grads: Vec<Option<Tensor>> = vec![None; model.store.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut g = Graph::new();
    for (i, pair) in batch.iter().enumerate() {
        g.clear();
        let mut noise = StepNoise::for_item(predictor.config.seed, step, i as u64);
        let trace = model.forward(&mut g, &pair.drug_tokens, &pair.target_tokens, &mut Mode::Train(&mut noise))?;
        let y = g.constant(Tensor::scalar(pair.affinity));
        let sq = g.mse_loss(trace.prediction, y)?;
        let li = g.scale(sq, scale);
        loss += g.value(li).data()[0];
        g.backward(li)?;
        for (id, _) in g.bound_params() {
            if let Some(pg) = g.param_grad(id) {
                match &mut grads[id.index()] {
                    Some(acc) => acc.data_mut().iter_mut().zip(pg.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(pg),
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Evaluation-mode MSE over already-encoded pairs.
pub fn evaluation_loss(predictor: &Predictor, pairs: &[EncodedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += (predictor.predict_pair(p)? - p.affinity).powi(2);
    }
    Ok(total / pairs.len() as f64)
}

/// Eval-mode predictions over `records`, scored and tagged with `scenario`.
pub fn evaluate(predictor: &Predictor, records: &[AffinityRecord], scenario: &str) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset(if scenario.is_empty() { "evaluation" } else { "scenario" }));
    }
    let pairs = predictor.encode_all(records)?;
    let y: Vec<f64> = pairs.iter().map(|p| p.affinity).collect();
    let yhat = pairs.iter().map(|p| predictor.predict_pair(p)).collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::compute(scenario, &y, &yhat)?)
}

/// Mini-batch Adam on the squared error with per-epoch shuffling and early
/// stopping on validation MSE.
pub fn train(
    config: &TrainConfig,
    train_set: &[AffinityRecord],
    val_set: &[AffinityRecord],
    options: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let (mut predictor, mut adam, mut progress) = match options.resume {
        Some(ck) => {
            let mut p = ck.predictor;
            if config.model_config_for(&p.drug_vocab, &p.target_vocab) != p.model.config {
                return Err(TrainError::Config("architecture settings differ from the resumed checkpoint".into()));
            }
            p.config = config.clone();
            let adam = ck.optimizer.unwrap_or_else(|| AdamState::new(&p.model.store));
            (p, adam, ck.progress)
        }
        None => {
            let p = Predictor::for_records(config.clone(), train_set)?;
            let adam = AdamState::new(&p.model.store);
            (p, adam, Progress::default())
        }
    };
    let train_pairs = predictor.encode_all(train_set)?;
    let val_pairs = predictor.encode_all(val_set)?;
    let hp = AdamHyper::new(config.learning_rate, config.weight_decay);
    let snapshot = |p: &Predictor, a: &AdamState, pr: Progress| Checkpoint {
        predictor: p.clone(),
        optimizer: Some(a.clone()),
        progress: pr,
    };

    let mut history = Vec::new();
    let mut best = None;
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    while progress.epoch < config.max_epochs as u64 {
        let last_good = snapshot(&predictor, &adam, progress);
        let epoch = progress.epoch;
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, Stream::Shuffle, epoch));

        let mut loss_sum = 0.0;
        let mut batches = 0u64;
        let mut hit_step_cap = false;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let (loss, grads) = batch_gradients(&predictor, &batch, progress.step)?;
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                step: progress.step,
                reason,
                last_good: Box::new(last_good.clone()),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("training loss is {loss}")));
            }
            match adam.step(&mut predictor.model.store, &grads, &hp) {
                Ok(()) => {}
                Err(e @ TrainError::NonFiniteGradient { .. }) => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            }
            progress.step += 1;
            loss_sum += loss;
            batches += 1;
            if options.max_steps.is_some_and(|cap| progress.step >= cap) {
                hit_step_cap = true;
                break;
            }
        }

        let val_loss = evaluation_loss(&predictor, &val_pairs)?;
        let improved = val_loss < progress.best_val_loss;
        progress.epoch += 1;
        if improved {
            progress.best_val_loss = val_loss;
            progress.epochs_since_improvement = 0;
            best = Some(snapshot(&predictor, &adam, progress));
        } else {
            progress.epochs_since_improvement += 1;
        }
        history.push(EpochRecord {
            epoch: progress.epoch,
            steps: progress.step,
            train_loss: loss_sum / batches as f64,
            val_loss,
            improved,
        });
        if hit_step_cap {
            stop = StopReason::MaxSteps;
            break;
        }
        if progress.epochs_since_improvement >= config.patience as u64 {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok(TrainOutcome { best, last: snapshot(&predictor, &adam, progress), history, stop })
}
