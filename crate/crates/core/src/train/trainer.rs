use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{adam_step, clipped_bce, LossConfig, OptimState, TrainConfig};
use crate::arch::{forward, Model};
use crate::data::{batch_order, stack_batch, BatchMode, Dataset};
use crate::error::config_err;
use crate::tensor::Tape;
use crate::{Error, Result};

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    /// Wall time since the loop started.
    pub seconds: f64,
}

/// Hooks invoked by [`train`]; the unit type ignores everything.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps with the current state.
    fn on_checkpoint(&mut self, _model: &Model<f32>, _state: &OptimState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs Adam steps until `state.step` reaches `cfg.max_steps`.
///
/// Batches follow the seeded per-epoch order, indexed by the global step, so
/// resuming from a checkpoint continues the same stream.
pub fn train(
    model: &mut Model<f32>,
    state: &mut OptimState,
    dataset: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<LogRecord>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let input = model.config().input_size;
    if let Some(s) = dataset.samples.iter().find(|s| s.dims() != input) {
        return Err(config_err!(
            "sample {} is {}x{}, model expects {}x{}",
            s.id,
            s.dims().0,
            s.dims().1,
            input.0,
            input.1
        ));
    }
    if dataset.len() < cfg.batch_size {
        return Err(config_err!(
            "dataset of {} samples cannot fill a batch of {}",
            dataset.len(),
            cfg.batch_size
        ));
    }
    let per_epoch = (dataset.len() / cfg.batch_size) as u64;
    let start = Instant::now();
    let mut log = Vec::new();
    let mut epoch_cache: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.step < cfg.max_steps {
        let (epoch, slot) = (state.step / per_epoch, (state.step % per_epoch) as usize);
        if epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
            epoch_cache = Some((epoch, batch_order(dataset.len(), cfg.batch_size, cfg.seed, epoch, BatchMode::Train)));
        }
        let idx = &epoch_cache.as_ref().expect("filled above").1[slot];
        let batch = stack_batch(&idx.iter().map(|&i| &dataset.samples[i]).collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let pass = forward(model, &mut tape, x)?;
        let loss_var = clipped_bce(&mut tape, pass.output, &batch.masks, loss_cfg)?;
        let loss = f64::from(tape.value(loss_var).item()?);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} at step {}", state.step + 1)));
        }
        let grads = tape.backward(loss_var)?;
        let store = model.params_mut();
        store.zero_grad();
        grads.accumulate_into(store)?;
        adam_step(store, state, cfg)?;

        let record = LogRecord {
            step: state.step,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer.on_step(&record)?;
        log.push(record);
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(model, state)?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::data::synth_generate;
    use crate::train::xavier_model;

    fn tiny_setup() -> (Model<f32>, Dataset) {
        let mut cfg = ArchConfig::tiny();
        cfg.input_size = (16, 16);
        (xavier_model(cfg, 3).unwrap(), synth_generate(4, 16, 1).unwrap())
    }

    #[test]
    fn size_mismatch_fails_before_first_step() {
        let (mut m, _) = tiny_setup();
        let data = synth_generate(4, 32, 1).unwrap();
        let mut st = OptimState::new(m.params());
        let cfg = TrainConfig { batch_size: 2, max_steps: 3, ..Default::default() };
        let err = train(&mut m, &mut st, &data, &cfg, &LossConfig::default(), &mut ()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn runs_and_logs_each_step() {
        let (mut m, data) = tiny_setup();
        let mut st = OptimState::new(m.params());
        let cfg = TrainConfig { batch_size: 2, max_steps: 3, ..Default::default() };
        let log = train(&mut m, &mut st, &data, &cfg, &LossConfig::default(), &mut ()).unwrap();
        assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(log.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn checkpoint_hook_fires_on_schedule() {
        struct Count(Vec<u64>);
        impl TrainObserver for Count {
            fn on_checkpoint(&mut self, _: &Model<f32>, s: &OptimState) -> Result<()> {
                self.0.push(s.step);
                Ok(())
            }
        }
        let (mut m, data) = tiny_setup();
        let mut st = OptimState::new(m.params());
        let cfg = TrainConfig { batch_size: 2, max_steps: 4, checkpoint_every: 2, ..Default::default() };
        let mut obs = Count(Vec::new());
        train(&mut m, &mut st, &data, &cfg, &LossConfig::default(), &mut obs).unwrap();
        assert_eq!(obs.0, vec![2, 4]);
    }
}
