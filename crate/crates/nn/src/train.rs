use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::error::{NnError, Result};
use crate::loss::{loss, loss_and_grad, LossKind};
use crate::model::Model;
use crate::optim::{Adam, LrSchedule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping; 0 stops at the
    /// first one.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn autoencoder(seed: u64) -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            schedule: LrSchedule::Linear,
            max_epochs: 250,
            patience: 30,
            val_fraction: 0.2,
            seed,
        }
    }

    pub fn regressor(seed: u64) -> Self {
        TrainConfig {
            max_epochs: 400,
            ..Self::autoencoder(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(NnError::invalid("batch size and max epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.patience > self.max_epochs {
            return Err(NnError::invalid(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(NnError::invalid(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.schedule.rate(self.learning_rate, epoch, self.max_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Training record stored with a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub loss: Option<LossKind>,
    pub config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Free-form labels (field kind, geometry hash, ...).
    pub tags: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Seeded split into `(train, validation)` index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Splits off a validation set per `config` and trains.
pub fn train(
    model: Model<f32>,
    inputs: &Tensor<f32>,
    targets: &Tensor<f32>,
    loss_kind: LossKind,
    config: &TrainConfig,
) -> Result<ModelBundle> {
    check_pair(inputs, targets)?;
    let (tr, va) = split_indices(inputs.batch(), config.val_fraction, config.seed);
    let val = (!va.is_empty()).then(|| (inputs.gather(&va), targets.gather(&va)));
    train_with_validation(
        model,
        &inputs.gather(&tr),
        &targets.gather(&tr),
        val.as_ref().map(|(x, y)| (x, y)),
        loss_kind,
        config,
    )
}

fn check_pair(inputs: &Tensor<f32>, targets: &Tensor<f32>) -> Result<()> {
    if inputs.batch() == 0 {
        return Err(NnError::invalid("training set is empty"));
    }
    if inputs.batch() != targets.batch() {
        return Err(NnError::invalid(format!(
            "{} inputs but {} targets",
            inputs.batch(),
            targets.batch()
        )));
    }
    Ok(())
}

/// Mini-batch Adam training with early stopping on the validation loss
/// (training loss when no validation set is given). The returned model
/// holds the best epoch's weights and running statistics.
pub fn train_with_validation(
    mut model: Model<f32>,
    train_x: &Tensor<f32>,
    train_y: &Tensor<f32>,
    val: Option<(&Tensor<f32>, &Tensor<f32>)>,
    loss_kind: LossKind,
    config: &TrainConfig,
) -> Result<ModelBundle> {
    config.validate()?;
    check_pair(train_x, train_y)?;
    if let Some((vx, vy)) = val {
        check_pair(vx, vy)?;
    }
    let n = train_x.batch();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut meta = TrainingMeta {
        loss: Some(loss_kind),
        config: Some(config.clone()),
        seed: config.seed,
        train_samples: n,
        val_samples: val.map_or(0, |(x, _)| x.batch()),
        ..Default::default()
    };
    let mut best = f64::INFINITY;
    let mut best_state = model.snapshot();
    let mut wait = 0;
    for epoch in 0..config.max_epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in batches(&order, config.batch_size) {
            let x = train_x.gather(batch);
            let y = train_y.gather(batch);
            model.zero_grads();
            let out = model.forward_train(&x)?;
            let (l, g) = loss_and_grad(loss_kind, out.data(), y.data())?;
            if !l.is_finite() {
                return Err(NnError::TrainingFailure {
                    epoch,
                    message: format!("loss became {l}"),
                });
            }
            model.backward_inner(&Tensor::new(out.shape().to_vec(), g)?, false)?;
            if let Some(i) = model.nonfinite_grad_layer() {
                return Err(NnError::TrainingFailure {
                    epoch,
                    message: format!("non-finite gradient in {}", model.layer_label(i)),
                });
            }
            adam.step(&mut model, lr);
            sum += l * batch.len() as f64;
        }
        let train_loss = sum / n as f64;
        let val_loss = match val {
            Some((vx, vy)) => evaluate_loss(&model, vx, vy, loss_kind, config.batch_size)?,
            None => train_loss,
        };
        if !val_loss.is_finite() {
            return Err(NnError::TrainingFailure {
                epoch,
                message: format!("validation loss became {val_loss}"),
            });
        }
        log::debug!("epoch {epoch}: lr {lr:.3e} train {train_loss:.6} val {val_loss:.6}");
        meta.history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
        });
        meta.epochs_run = epoch + 1;
        if val_loss < best {
            best = val_loss;
            meta.best_epoch = epoch;
            best_state = model.snapshot();
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience.max(1) {
                meta.stopped_early = true;
                break;
            }
        }
    }
    model.restore(&best_state);
    model.clear_caches();
    Ok(ModelBundle { model, meta })
}

/// Shuffled mini-batches; a trailing single sample joins the previous
/// batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let k = out.len() - 1;
        out[k] = &order[k * size..];
    }
    out
}

/// Mean inference loss over a dataset, evaluated in fixed-size chunks.
pub fn evaluate_loss(
    model: &Model<f32>,
    inputs: &Tensor<f32>,
    targets: &Tensor<f32>,
    kind: LossKind,
    chunk: usize,
) -> Result<f64> {
    check_pair(inputs, targets)?;
    let n = inputs.batch();
    let mut sum = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for c in idx.chunks(chunk.max(1)) {
        let out = model.forward(&inputs.gather(c))?;
        sum += loss(kind, out.data(), targets.gather(c).data())? * c.len() as f64;
    }
    Ok(sum / n as f64)
}

/// Inference over a large batch in fixed-size chunks.
pub fn predict_batched(model: &Model<f32>, inputs: &Tensor<f32>, chunk: usize) -> Result<Tensor<f32>> {
    let n = inputs.batch();
    let idx: Vec<usize> = (0..n).collect();
    let mut data = Vec::new();
    let mut shape = Vec::new();
    for c in idx.chunks(chunk.max(1)) {
        let out = model.forward(&inputs.gather(c))?;
        shape = out.shape().to_vec();
        data.extend_from_slice(out.data());
    }
    shape[0] = n;
    Tensor::new(shape, data)
}
