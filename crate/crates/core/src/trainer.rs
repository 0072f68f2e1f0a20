//! Negative sampling, the regularized BCE objective and the Adam loop.

use std::time::Instant;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::config::{AucMode, NegRatio};
use crate::data::InteractionLog;
use crate::error::{Error, Result};
use crate::eval::{evaluate_lists, CandidateList};
use crate::ids::{ItemId, UserId};
use crate::model::{Forward, FrozenModel, ModelContext};
use crate::numeric::{adam_step, AdamConfig, AdamState, ModelParams};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub user: UserId,
    pub item: ItemId,
    pub label: f64,
}

/// Per user, `ceil(positives * neg / pos)` distinct items drawn from the
/// items the user never interacted with. `interacted[u]` must be sorted.
/// Users whose complement is smaller get every remaining item.
pub fn sample_negatives(
    train: &InteractionLog,
    interacted: &[Vec<ItemId>],
    num_items: usize,
    ratio: NegRatio,
    seed: u64,
) -> Vec<TrainExample> {
    let per_user = train.by_user(interacted.len());
    let mut out = Vec::new();
    let mut short = 0usize;
    for (u, positives) in per_user.iter().enumerate() {
        if positives.is_empty() {
            continue;
        }
        let seen = &interacted[u];
        let eligible: Vec<ItemId> = (0..num_items)
            .map(ItemId::from)
            .filter(|i| seen.binary_search(i).is_err())
            .collect();
        let want = ratio.negatives_for(positives.len());
        if eligible.len() < want {
            short += 1;
        }
        let take = want.min(eligible.len());
        let mut rng = stream_rng(seed, Stream::Negatives, u as u64);
        for i in index::sample(&mut rng, eligible.len(), take) {
            out.push(TrainExample {
                user: UserId::from(u),
                item: eligible[i],
                label: 0.0,
            });
        }
    }
    if short > 0 {
        warn!("{short} user(s) have fewer never-interacted items than requested negatives");
    }
    out
}

/// Positives (label 1) in record order followed by `negatives`.
pub fn training_examples(train: &InteractionLog, negatives: &[TrainExample]) -> Vec<TrainExample> {
    let mut out: Vec<TrainExample> = train
        .records
        .iter()
        .map(|r| TrainExample {
            user: r.user,
            item: r.item,
            label: 1.0,
        })
        .collect();
    out.extend_from_slice(negatives);
    out
}

/// Mean BCE over `batch` plus `l2 * ||θ||²`. With `grad` the gradient of the
/// full objective is left in the parameter gradient buffers.
fn objective(
    params: &mut ModelParams,
    ctx: ModelContext<'_>,
    batch: &[TrainExample],
    l2: f64,
    grad: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::State("empty batch".into()));
    }
    let (tape, loss) = {
        let mut fwd = Forward::new(params, ctx);
        let mut terms = Vec::with_capacity(batch.len());
        for ex in batch {
            let p = fwd.predict(ex.user, ex.item)?;
            let prob = fwd.tape.scalar(p);
            if !prob.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite prediction for user {} item {}",
                    ex.user, ex.item
                )));
            }
            terms.push(fwd.tape.bce(p, ex.label)?);
        }
        let loss = fwd.tape.mean(&terms)?;
        (std::mem::take(&mut fwd.tape), loss)
    };
    let data_loss = tape.scalar(loss);
    let total = data_loss + l2 * params.squared_norm();
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss became {total}")));
    }
    if grad {
        tape.backward(loss, params)?;
        if l2 != 0.0 {
            for t in params.tensors_mut() {
                let values = t.values().to_vec();
                for (g, v) in t.grad_mut().iter_mut().zip(values) {
                    *g += 2.0 * l2 * v;
                }
            }
        }
    }
    Ok(total)
}

/// Objective value for one batch.
pub fn batch_loss(params: &mut ModelParams, ctx: ModelContext<'_>, batch: &[TrainExample], l2: f64) -> Result<f64> {
    objective(params, ctx, batch, l2, false)
}

/// Objective value; its gradient is written to the parameter buffers.
pub fn batch_loss_and_grad(
    params: &mut ModelParams,
    ctx: ModelContext<'_>,
    batch: &[TrainExample],
    l2: f64,
) -> Result<f64> {
    objective(params, ctx, batch, l2, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best parameters by validation AUC, or the last ones without
    /// validation lists.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a numeric failure.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    /// `epoch,train_loss,val_auc` rows.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auc\n");
        for r in &self.history {
            let auc = r.val_auc.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, auc));
        }
        s
    }
}

fn validation_auc(params: &ModelParams, ctx: ModelContext<'_>, lists: &[CandidateList]) -> Result<f64> {
    let frozen = FrozenModel::build(params, ctx)?;
    let (report, _) = evaluate_lists(&frozen, lists, &[], AucMode::PerList)?;
    Ok(report.auc)
}

fn run_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    ctx: ModelContext<'_>,
    examples: &[TrainExample],
    options: &TrainOptions,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut stream_rng(options.seed, Stream::Shuffle, epoch as u64));
    let mut total = 0.0;
    let mut batches = 0;
    let mut batch = Vec::with_capacity(options.batch_size);
    for chunk in order.chunks(options.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| examples[i]));
        total += batch_loss_and_grad(params, ctx, &batch, options.l2)?;
        adam_step(params, adam)?;
        params.check_finite()?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Minibatch Adam over `examples`. Validation lists, when given, are scored
/// after every epoch and the best epoch's parameters are returned. A numeric
/// failure stops training and returns the best parameters seen so far.
pub fn train(
    init: ModelParams,
    ctx: ModelContext<'_>,
    examples: &[TrainExample],
    validation: &[CandidateList],
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if examples.is_empty() && options.epochs > 0 {
        return Err(Error::Data("no training examples".into()));
    }
    let mut params = init.clone();
    let mut adam = AdamState::new(AdamConfig::new(options.learning_rate));
    let mut history = Vec::with_capacity(options.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut diverged = None;
    for epoch in 1..=options.epochs {
        let start = Instant::now();
        let train_loss = match run_epoch(&mut params, &mut adam, ctx, examples, options, epoch) {
            Ok(loss) => loss,
            Err(Error::Numeric(msg)) => {
                warn!("epoch {epoch}: training diverged: {msg}");
                diverged = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let val_auc = if validation.is_empty() {
            None
        } else {
            Some(validation_auc(&params, ctx, validation)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_auc,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {train_loss:.5} val_auc {} ({:.2}s)",
            val_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            record.seconds
        );
        history.push(record);
        let score = val_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b || val_auc.is_none()) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, Some(epoch)),
        // no epoch finished: hand back the initialization
        None => (init, None),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        diverged,
    })
}
