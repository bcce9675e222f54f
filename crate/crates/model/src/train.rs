use kgdelta_autodiff::{Adam, AdamConfig, Bound, GradBuffer, ParamStore, Tape};
use kgdelta_core::eval::{tf_f1, Averaging};
use kgdelta_core::Transition;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Model, TrainingState};
use crate::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub clip_norm: f32,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    /// Validate on at most this many transitions.
    pub val_limit: Option<usize>,
    /// Also validate every this many steps (always at the end of an epoch).
    pub eval_every: Option<usize>,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            clip_norm: 1.0,
            max_steps: None,
            val_limit: Some(500),
            eval_every: None,
            log_every: 50,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub loss: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_tf_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub best_val_tf_f1: Option<f64>,
    pub best_step: u64,
    /// Training transitions whose rendered target exceeds `max_decode_len`.
    pub skipped_too_long: usize,
    /// State matching the retained parameters.
    pub state: TrainingState,
}

/// Mean teacher-forced loss over `batch` and its gradient.
pub fn batch_gradient(model: &Model, batch: &[&Transition]) -> Result<(f32, GradBuffer), ModelError> {
    let mut total = GradBuffer::zeros_like(&model.params);
    let mut loss_sum = 0.0f64;
    for t in batch {
        let tape = Tape::new();
        let p = Bound::new(&tape, &model.params);
        let loss = model.loss(&p, t, &t.ops)?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: 0,
                loss: value,
                detail: format!("game {} step {} branch {} ({:?})", t.game, t.step, t.branch, t.action),
            });
        }
        loss_sum += value as f64;
        let mut grads = tape.backward(loss)?;
        total.add_assign(&p.collect(&mut grads));
    }
    let n = batch.len().max(1) as f32;
    total.scale(1.0 / n);
    Ok(((loss_sum / n as f64) as f32, total))
}

fn validate(model: &Model, valid: &[Transition], limit: Option<usize>) -> Option<f64> {
    if valid.is_empty() {
        return None;
    }
    let n = limit.map_or(valid.len(), |l| l.min(valid.len()));
    Some(tf_f1(model, &valid[..n], Averaging::PerTransition, 1).score)
}

/// Mini-batch Adam on teacher-forced NLL. With a validation set, the
/// parameters with the best validation TF-F1 are kept.
pub fn train(
    model: &mut Model,
    train: &[Transition],
    valid: &[Transition],
    cfg: &TrainConfig,
    resume: Option<&TrainingState>,
    log: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome, ModelError> {
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be at least 1".into()));
    }
    let mut usable: Vec<&Transition> = Vec::with_capacity(train.len());
    let mut skipped = 0;
    for t in train {
        let source = model.source(t);
        match model.targets(&source, &t.ops) {
            Ok(_) => usable.push(t),
            Err(ModelError::TargetTooLong { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if usable.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut step = 0u64;
    if let Some(state) = resume {
        step = state.step;
        if let Some(s) = &state.adam {
            adam.set_states(s.clone())?;
        }
    }
    let mut best: Option<(f64, u64, ParamStore, Adam)> = None;
    let mut steps_this_run = 0usize;
    let mut last_loss = f32::NAN;
    let mut last_logged: Option<u64> = None;
    let mut consider = |model: &Model,
                        adam: &Adam,
                        step: u64,
                        epoch: usize,
                        loss: f32,
                        last_logged: &mut Option<u64>,
                        log: &mut dyn FnMut(&LogEntry)| {
        let score = validate(model, valid, cfg.val_limit);
        if score.is_some() || *last_logged != Some(step) {
            log(&LogEntry {
                step,
                epoch,
                loss,
                val_tf_f1: score,
            });
            *last_logged = Some(step);
        }
        if let Some(s) = score {
            if best.as_ref().map_or(true, |b| s > b.0) {
                best = Some((s, step, model.params.clone(), adam.clone()));
            }
        }
    };
    'epochs: for epoch in 0..cfg.epochs {
        let mut order = usable.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = batch_gradient(model, batch).map_err(|e| match e {
                ModelError::NonFiniteLoss { loss, detail, .. } => ModelError::NonFiniteLoss {
                    step: step + 1,
                    loss,
                    detail,
                },
                other => other,
            })?;
            if !grads.all_finite() {
                return Err(ModelError::NonFiniteLoss {
                    step: step + 1,
                    loss,
                    detail: "non-finite gradient".into(),
                });
            }
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            adam.step(&mut model.params, &grads)?;
            step += 1;
            steps_this_run += 1;
            last_loss = loss;
            let at_limit = cfg.max_steps.is_some_and(|m| steps_this_run >= m);
            if cfg.eval_every.is_some_and(|e| steps_this_run % e == 0) && !at_limit {
                consider(model, &adam, step, epoch, loss, &mut last_logged, log);
            } else if cfg.log_every > 0 && steps_this_run % cfg.log_every == 0 && !at_limit {
                log(&LogEntry {
                    step,
                    epoch,
                    loss,
                    val_tf_f1: None,
                });
                last_logged = Some(step);
            }
            if at_limit {
                consider(model, &adam, step, epoch, loss, &mut last_logged, log);
                break 'epochs;
            }
        }
        consider(model, &adam, step, epoch, last_loss, &mut last_logged, log);
    }
    let final_step = step;
    let (best_val, best_step) = match best {
        Some((score, at, params, best_adam)) => {
            model.params = params;
            adam = best_adam;
            (Some(score), at)
        }
        None => (None, final_step),
    };
    Ok(TrainOutcome {
        steps: final_step,
        best_val_tf_f1: best_val,
        best_step,
        skipped_too_long: skipped,
        state: TrainingState {
            step: best_step,
            adam: Some(adam.states().to_vec()),
        },
    })
}
