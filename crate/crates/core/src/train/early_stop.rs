use crate::error::{Error, Result};
use crate::nn::Preset;

/// Baseline-gated early stopping: stopping is armed only once validation
/// accuracy has reached `baseline_acc`, after which `patience` epochs
/// without a new best end the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopConfig {
    pub baseline_acc: f64,
    pub patience: usize,
    pub min_epochs: usize,
}

impl EarlyStopConfig {
    /// Tuning defaults. The baselines sit just under each dataset's
    /// attainable plateau; none of them is a published figure.
    pub fn for_preset(preset: Preset) -> Self {
        let baseline_acc = match preset {
            Preset::Mnist => 0.995,
            Preset::Cifar10 => 0.90,
            Preset::Cifar100 => 0.65,
            Preset::Svhn => 0.97,
            Preset::Stl10 => 0.85,
        };
        EarlyStopConfig {
            baseline_acc,
            patience: 100,
            min_epochs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.baseline_acc) {
            return Err(Error::param(format!("baseline accuracy {} outside [0, 1]", self.baseline_acc)));
        }
        if self.patience == 0 {
            return Err(Error::param("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopState {
    pub baseline_passed: bool,
    /// Running maximum of the validation accuracies seen; `-inf` before the
    /// first update.
    pub best_val_acc: f64,
    /// Epoch of the best accuracy; 0 before the first update.
    pub best_epoch: usize,
    pub epochs_since_best: usize,
    last_epoch: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        EarlyStopState {
            baseline_passed: false,
            best_val_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
            last_epoch: 0,
        }
    }
}

impl EarlyStopState {
    pub fn new() -> Self {
        Self::default()
    }

    /// The epoch most recently passed to [`early_stop_update`].
    pub fn last_epoch(&self) -> usize {
        self.last_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Feeds one epoch's validation accuracy. Epochs must be 1, 2, 3, ...
///
/// The best accuracy moves only on strict improvement; the baseline latch
/// never resets. The decision is `Stop` iff `epoch >= min_epochs`, the
/// baseline has been reached, and `patience` epochs have passed since the
/// best.
pub fn early_stop_update(
    state: &EarlyStopState,
    config: &EarlyStopConfig,
    epoch: usize,
    val_acc: f64,
) -> Result<(EarlyStopState, Decision)> {
    config.validate()?;
    if epoch != state.last_epoch + 1 {
        return Err(Error::EarlyStop(format!(
            "epoch {epoch} does not follow epoch {}",
            state.last_epoch
        )));
    }
    if !(0.0..=1.0).contains(&val_acc) {
        return Err(Error::EarlyStop(format!("validation accuracy {val_acc} outside [0, 1]")));
    }
    let mut next = *state;
    next.last_epoch = epoch;
    if val_acc > state.best_val_acc {
        next.best_val_acc = val_acc;
        next.best_epoch = epoch;
    }
    next.epochs_since_best = epoch - next.best_epoch;
    next.baseline_passed |= val_acc >= config.baseline_acc;
    let stop = epoch >= config.min_epochs && next.baseline_passed && next.epochs_since_best >= config.patience;
    Ok((next, if stop { Decision::Stop } else { Decision::Continue }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: &EarlyStopConfig, curve: &[f64]) -> Vec<Decision> {
        let mut state = EarlyStopState::new();
        curve
            .iter()
            .enumerate()
            .map(|(i, &acc)| {
                let (s, d) = early_stop_update(&state, config, i + 1, acc).unwrap();
                state = s;
                d
            })
            .collect()
    }

    const CFG: EarlyStopConfig = EarlyStopConfig {
        baseline_acc: 0.99,
        patience: 3,
        min_epochs: 0,
    };

    #[test]
    fn below_baseline_never_stops() {
        let d = run(&CFG, &[0.95, 0.96, 0.95, 0.94, 0.93, 0.92]);
        assert!(d.iter().all(|&d| d == Decision::Continue));
    }

    #[test]
    fn stops_after_patience_once_armed() {
        let d = run(&CFG, &[0.991, 0.990, 0.990, 0.990]);
        assert_eq!(d, [Decision::Continue, Decision::Continue, Decision::Continue, Decision::Stop]);
    }

    #[test]
    fn min_epochs_holds_stop() {
        let cfg = EarlyStopConfig { min_epochs: 6, ..CFG };
        let d = run(&cfg, &[0.991, 0.990, 0.990, 0.990, 0.99, 0.99, 0.99]);
        assert_eq!(d.iter().position(|&d| d == Decision::Stop), Some(5));
    }

    #[test]
    fn equal_accuracy_is_not_an_improvement() {
        let (s, _) = early_stop_update(&EarlyStopState::new(), &CFG, 1, 0.5).unwrap();
        let (s, _) = early_stop_update(&s, &CFG, 2, 0.5).unwrap();
        assert_eq!((s.best_epoch, s.epochs_since_best), (1, 1));
    }

    #[test]
    fn rejects_out_of_order_epochs() {
        let s = EarlyStopState::new();
        assert!(early_stop_update(&s, &CFG, 2, 0.5).is_err());
        let (s, _) = early_stop_update(&s, &CFG, 1, 0.5).unwrap();
        assert!(early_stop_update(&s, &CFG, 1, 0.5).is_err());
        assert!(early_stop_update(&s, &CFG, 3, 0.5).is_err());
        assert!(early_stop_update(&s, &CFG, 2, 1.5).is_err());
    }
}
