//! Plain SGD training with on-the-fly augmentation, baseline-gated early
//! stopping and best-snapshot restoration.
//!
//! Every random choice is drawn from its own substream of the run seed:
//! initialisation, the shuffle of each epoch, the augmentation of each
//! sample in each epoch, and the dropout masks of each batch. A run is
//! therefore a pure function of its configuration, seed and data.

mod early_stop;
mod io;

use std::time::Instant;

pub use early_stop::{early_stop_update, Decision, EarlyStopConfig, EarlyStopState};
pub use io::{
    checkpoint_bytes, load_checkpoint, metrics_csv, parse_checkpoint, save_checkpoint, write_metrics_csv,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, CSV_HEADER,
};

use crate::augment::{augment_batch, AugmentConfig};
use crate::data::{shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{count_correct, init_parameters, loss_and_gradients, predict, softmax_cross_entropy};
use crate::nn::{ArchitectureSpec, Gradients, Parameters, Preset};
use crate::streams;
use crate::tensor::{Rng, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Classical momentum coefficient; 0 gives plain SGD.
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub early_stop: EarlyStopConfig,
}

impl TrainConfig {
    /// Learning rate 0.01, no momentum, the preset's batch size, at most
    /// 2500 epochs, 10% validation.
    pub fn for_preset(preset: Preset) -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            batch_size: preset.batch_size(),
            max_epochs: 2500,
            seed: 0,
            val_fraction: 0.1,
            early_stop: EarlyStopConfig::for_preset(preset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::param(format!("validation fraction {} outside (0, 1)", self.val_fraction)));
        }
        self.early_stop.validate()
    }
}

/// Metrics of one epoch. Training figures are running averages over the
/// epoch's augmented, dropout-active batches; validation figures come from
/// a clean eval-mode pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

/// Where and why a run stopped early on a numeric failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub epoch: usize,
    /// Zero-based batch index within the epoch.
    pub batch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Last completed epoch (0 if none).
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (0 means the initialisation).
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
    pub early_stopped: bool,
    pub test_acc: Option<f64>,
    pub aborted: Option<Abort>,
}

impl History {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The parameters of the best validation epoch, or the initialisation
    /// if no epoch completed.
    pub params: Parameters<f32>,
    pub history: History,
}

/// `w <- w - lr * g` for every parameter element.
pub fn sgd_step<T: Scalar>(params: &mut Parameters<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    let lr = T::from_f64(lr);
    for (p, g) in params.tensors_mut().zip(grads.tensors()) {
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

fn check_grads<T: Scalar>(params: &Parameters<T>, grads: &Gradients<T>) -> Result<()> {
    if params.len() != grads.len() || params.tensors().count() != grads.tensors().count() {
        return Err(Error::mismatch("sgd_step", &[params.len()], &[grads.len()]));
    }
    for (i, (p, g)) in params.tensors().zip(grads.tensors()).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::mismatch("sgd_step", p.shape(), g.shape()));
        }
        g.check_finite(&format!("gradient tensor {i}"))?;
    }
    Ok(())
}

/// Momentum update: `v <- m * v + g; w <- w - lr * v`.
fn momentum_step(params: &mut Parameters<f32>, velocity: &mut Parameters<f32>, grads: &Gradients<f32>, lr: f64, m: f64) -> Result<()> {
    check_grads(params, grads)?;
    let (lr, m) = (lr as f32, m as f32);
    for ((p, v), g) in params.tensors_mut().zip(velocity.tensors_mut()).zip(grads.tensors()) {
        for ((w, vel), &d) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = m * *vel + d;
            *w -= lr * *vel;
        }
    }
    Ok(())
}

/// Eval-mode mean cross-entropy and accuracy over `ds`, visited in order in
/// chunks of `batch_size`. Argmax ties go to the lowest class index.
pub fn evaluate(spec: &ArchitectureSpec, params: &Parameters<f32>, ds: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    if ds.is_empty() {
        return Err(Error::param("cannot evaluate an empty dataset"));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut start = 0;
    while start < ds.len() {
        let count = batch_size.min(ds.len() - start);
        let x = ds.images().slice_outer(start, count)?;
        let labels = &ds.labels()[start..start + count];
        let logits = predict(spec, params, &x)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        loss_sum += loss * count as f64;
        correct += count_correct(&logits, labels);
        start += count;
    }
    Ok((loss_sum / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// He-initialised parameters from the run seed's initialisation stream.
pub fn initial_parameters(spec: &ArchitectureSpec, seed: u64) -> Parameters<f32> {
    init_parameters(spec, &mut Rng::derive(seed, &[streams::INIT]))
}

/// Trains from the seeded initialisation. See [`train_from`].
pub fn train(
    config: &TrainConfig,
    spec: &ArchitectureSpec,
    train_ds: &Dataset,
    val_ds: &Dataset,
    augment: &AugmentConfig,
) -> Result<TrainOutcome> {
    let init = initial_parameters(spec, config.seed);
    train_from(config, spec, init, train_ds, val_ds, augment, |_| {})
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Runs the epoch loop from `init`, calling `on_epoch` after each epoch.
///
/// Each epoch shuffles, augments and steps through the training set, then
/// evaluates on `val_ds` and feeds the early-stopping controller. A
/// non-finite loss or gradient ends the run with [`History::aborted`] set;
/// the best parameters so far are still returned.
pub fn train_from(
    config: &TrainConfig,
    spec: &ArchitectureSpec,
    init: Parameters<f32>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    augment: &AugmentConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    augment.validate()?;
    init.check_against(spec)?;
    for ds in [train_ds, val_ds] {
        if ds.image_shape() != spec.input_shape() || ds.classes() != spec.classes() {
            return Err(Error::mismatch(
                "dataset vs architecture",
                &[spec.input_shape().to_vec(), vec![spec.classes()]].concat(),
                &[ds.image_shape().to_vec(), vec![ds.classes()]].concat(),
            ));
        }
    }
    if config.batch_size > train_ds.len() {
        return Err(Error::param(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            train_ds.len()
        )));
    }

    let seed = config.seed;
    let mut params = init;
    let mut velocity = (config.momentum > 0.0).then(|| Parameters::zeros(spec));
    let mut best = params.clone();
    let mut history = History::default();
    let mut state = EarlyStopState::new();

    'epochs: for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let e = epoch as u64;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, mut batch) in shuffled_batches(train_ds, config.batch_size, seed, e)?.enumerate() {
            let indices = batch.indices.clone();
            augment_batch(&mut batch.images, augment, |k| {
                Rng::derive(seed, &[streams::AUGMENT, e, indices[k] as u64])
            })?;
            let mut rng = Rng::derive(seed, &[streams::DROPOUT, e, b as u64]);
            let step = loss_and_gradients(spec, &params, &batch.images, &batch.labels, &mut rng)
                .and_then(|step| {
                    match &mut velocity {
                        None => sgd_step(&mut params, &step.grads, config.learning_rate)?,
                        Some(v) => momentum_step(&mut params, v, &step.grads, config.learning_rate, config.momentum)?,
                    }
                    Ok(step)
                });
            let step = match step {
                Ok(s) => s,
                Err(err) if is_numeric(&err) => {
                    history.aborted = Some(Abort {
                        epoch,
                        batch: b,
                        reason: err.to_string(),
                    });
                    break 'epochs;
                }
                Err(err) => return Err(err),
            };
            loss_sum += step.loss * batch.labels.len() as f64;
            correct += step.correct;
        }
        let n = train_ds.len() as f64;
        let (val_loss, val_acc) = match evaluate(spec, &params, val_ds, config.batch_size) {
            Ok(v) => v,
            Err(err) if is_numeric(&err) => {
                history.aborted = Some(Abort {
                    epoch,
                    batch: 0,
                    reason: format!("validation: {err}"),
                });
                break;
            }
            Err(err) => return Err(err),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        history.records.push(record);
        history.stopped_epoch = epoch;
        on_epoch(&record);

        let (next, decision) = early_stop_update(&state, &config.early_stop, epoch, val_acc)?;
        if next.best_epoch == epoch {
            best = params.clone();
            history.best_epoch = epoch;
            history.best_val_acc = Some(val_acc);
        }
        state = next;
        if decision == Decision::Stop {
            history.early_stopped = true;
            break;
        }
    }
    Ok(TrainOutcome { params: best, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchitectureSpec, LayerDesc};
    use crate::tensor::Tensor;

    #[test]
    fn sgd_arithmetic() {
        let spec = ArchitectureSpec::new(
            "toy",
            [1, 1, 1],
            vec![LayerDesc::Flatten, LayerDesc::SoftmaxClassifier { classes: 2 }],
        )
        .unwrap();
        let mut p = Parameters::<f64>::zeros(&spec);
        p.layer_mut(1).unwrap().weight = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let mut g = Parameters::<f64>::zeros(&spec);
        g.layer_mut(1).unwrap().weight = Tensor::from_vec(&[1, 2], vec![2.0, -2.0]).unwrap();

        let before = p.clone();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
        sgd_step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.layer(1).unwrap().weight.data(), &[0.0, 2.0]);

        g.layer_mut(1).unwrap().bias.data_mut()[0] = f64::NAN;
        assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::for_preset(Preset::Mnist);
        assert_eq!((c.batch_size, c.max_epochs), (256, 2500));
        c.validate().unwrap();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::for_preset(Preset::Stl10).batch_size, 8);
        assert_eq!(TrainConfig::for_preset(Preset::Svhn).batch_size, 128);
    }
}
