use super::TrainingConfig;

/// Step decay: `initial_lr` multiplied by `decay_factor` once per elapsed
/// `decay_period_epochs`. Applied as repeated multiplication, the way a
/// training loop would, so 0.01 decays to exactly 0.001 and 0.0001.
pub fn lr_at_epoch(cfg: &TrainingConfig, epoch: usize) -> f64 {
    let steps = epoch / cfg.decay_period_epochs.max(1);
    (0..steps).fold(cfg.initial_lr, |lr, _| lr * cfg.decay_factor)
}
