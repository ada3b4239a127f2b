use super::TrainConfig;

/// `lr_init · factor^⌊epoch / every⌋`, floored at `lr_min`.
pub fn lr_schedule(epoch: u64, cfg: &TrainConfig) -> f64 {
    let decays = epoch / cfg.lr_decay_every.max(1);
    let lr = cfg.lr_init * cfg.lr_decay_factor.powf(decays as f64);
    lr.max(cfg.lr_min)
}
