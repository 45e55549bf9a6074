//! Shared mini-batch training loop: Adam steps, per-epoch plateau scheduling
//! and a fixed probe batch to measure loss before and after training.

use serde::{Deserialize, Serialize};

use crate::data::AugmentSpec;
use crate::error::{Error, Result};
use crate::networks::Network;
use crate::nn::{masked_l1_loss, AdamConfig, AdamState, LossKind, PlateauConfig, PlateauScheduler};
use crate::rng::derive;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub patch: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            iters_per_epoch: 20,
            batch_size: 16,
            patch: 64,
            loss: LossKind::L1,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            augment: AugmentSpec::default(),
        }
    }
}

/// One training batch. With a mask the loss is masked L1 over the selected
/// positions only, regardless of `TrainConfig::loss`.
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub probe_loss_before: f64,
    pub probe_loss_after: f64,
    pub epoch_losses: Vec<f64>,
    pub epoch_lrs: Vec<f32>,
}

pub fn batch_loss(loss: LossKind, pred: &Tensor, batch: &Batch) -> Result<(f64, Tensor)> {
    match &batch.mask {
        Some(mask) => {
            let (v, g, _) = masked_l1_loss(pred, &batch.target, mask)?;
            Ok((v, g))
        }
        None => loss.eval(pred, &batch.target),
    }
}

/// One forward/backward/Adam step; returns the batch loss.
pub fn train_step<N: Network>(
    net: &mut N,
    adam: &mut AdamState,
    loss: LossKind,
    batch: &Batch,
) -> Result<f64> {
    let (pred, tape) = net.forward_train(&batch.input)?;
    let (value, grad) = batch_loss(loss, &pred, batch)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let grads = net.backward(&tape, &grad, false)?;
    net.apply_adam(&grads, adam)?;
    Ok(value)
}

/// Train `net` in place. `make_batch(seed)` must be a pure function of its
/// seed; step seeds are derived from `seed`.
pub fn fit<N, F>(
    net: &mut N,
    cfg: &TrainConfig,
    seed: u64,
    mut make_batch: F,
) -> Result<TrainHistory>
where
    N: Network,
    F: FnMut(u64) -> Result<Batch>,
{
    if cfg.batch_size == 0 || cfg.iters_per_epoch == 0 {
        return Err(Error::Config(
            "batch size and iterations per epoch must be positive".into(),
        ));
    }
    let probe = make_batch(derive(seed, "probe", 0))?;
    let probe_loss = |net: &N| -> Result<f64> {
        let pred = net.forward(&probe.input)?;
        Ok(batch_loss(cfg.loss, &pred, &probe)?.0)
    };
    let mut history = TrainHistory {
        probe_loss_before: probe_loss(net)?,
        ..TrainHistory::default()
    };
    let mut adam = AdamState::new(cfg.adam);
    let mut sched = PlateauScheduler::new(cfg.adam.lr, cfg.plateau);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            let batch = make_batch(derive(seed, "step", step))?;
            total += train_step(net, &mut adam, cfg.loss, &batch)
                .map_err(|e| annotate(e, epoch, step))?;
            step += 1;
        }
        let mean = total / cfg.iters_per_epoch as f64;
        history.epoch_losses.push(mean);
        history.epoch_lrs.push(adam.lr());
        adam.set_lr(sched.step(mean));
    }
    history.probe_loss_after = probe_loss(net)?;
    Ok(history)
}

fn annotate(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
        other => other,
    }
}
