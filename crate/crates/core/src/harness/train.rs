use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{snapshot, Checkpoint};
use super::config::RunConfig;
use super::eval::evaluate_model;
use super::metrics::Metrics;
use crate::data::{encode_batch, generate_synthetic, load_dataset, Example, SyntheticConfig, Vocab};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::substrate::{AdamState, Gradients, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev: Metrics,
    pub improved: bool,
}

/// Multiplies the learning rate by `decay` after `patience` consecutive
/// epochs without a strictly lower dev loss, then starts counting again.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub decay: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, decay: f64) -> Self {
        PlateauSchedule {
            patience,
            decay,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's dev loss and returns whether it improved.
    pub fn observe(&mut self, dev_loss: f64, lr: &mut f64) -> bool {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.bad_epochs = 0;
            return true;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            *lr *= self.decay;
            self.bad_epochs = 0;
        }
        false
    }
}

/// Train and dev sets named by the config, or synthetic ones. The synthetic
/// dev set uses the next data seed so it shares no draws with training.
pub fn load_data(config: &RunConfig) -> Result<(Vec<Example>, Vec<Example>)> {
    match (&config.train_path, &config.dev_path) {
        (Some(t), Some(d)) => Ok((load_dataset(t)?, load_dataset(d)?)),
        (None, None) => {
            let dev_cfg = SyntheticConfig {
                num_examples: config.synthetic_dev_examples,
                rng_seed: config.synthetic.rng_seed.wrapping_add(1),
                ..config.synthetic.clone()
            };
            Ok((generate_synthetic(&config.synthetic)?, generate_synthetic(&dev_cfg)?))
        }
        _ => Err(Error::Config("give both train and dev paths, or neither".into())),
    }
}

/// Sum of the joint losses of `examples` and their summed gradients.
fn batch_gradients(model: &Model, examples: &[&Example], vocab: &Vocab) -> Result<(f64, Gradients)> {
    let batch = encode_batch(examples, vocab);
    let mut total = Gradients::zeros_like(&model.store);
    let mut loss = 0.0;
    for b in 0..batch.len() {
        let mut g = Graph::new(&model.store);
        let (_, l) = model.example_loss(&mut g, &batch, b)?;
        loss += g.value(l).item();
        total.add_assign(g.backward(l)?.gradients());
    }
    Ok((loss, total))
}

/// Trains from scratch and returns the checkpoint of the epoch with the
/// lowest dev loss, carrying the full history. `on_epoch` sees each record
/// as it is produced.
pub fn train(
    config: &RunConfig,
    train_set: &[Example],
    dev_set: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("train and dev sets must be non-empty".into()));
    }
    let vocab = Vocab::build(train_set);
    let mut model = Model::new(config.model.clone(), vocab.len(), config.seed)?;
    let mut adam = AdamState::new(&model.store, config.lr);
    let mut schedule = PlateauSchedule::new(config.patience, config.lr_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (0, snapshot(&model.store));
    for epoch in 1..=config.epochs {
        let lr = adam.lr;
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &examples, &vocab)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                });
            }
            grads.scale(1.0 / examples.len() as f64);
            model.store.accumulate(&grads);
            adam.step(&mut model.store)?;
            train_loss += loss;
        }
        train_loss /= train_set.len() as f64;

        let dev = evaluate_model(&model, &vocab, dev_set, config.tau)?;
        if !dev.loss.is_finite() {
            return Err(Error::NonFiniteDev { epoch });
        }
        let improved = schedule.observe(dev.loss, &mut adam.lr);
        if improved {
            best = (epoch, snapshot(&model.store));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            dev_loss: dev.loss,
            dev: dev.metrics,
            improved,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train {train_loss:.4} dev {:.4} F1 {:.2} NA {:.2} ans {:.2}",
            dev.loss,
            dev.metrics.f1,
            dev.metrics.na_accuracy,
            dev.metrics.answerable_accuracy
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(Checkpoint {
        config: config.clone(),
        vocab,
        epoch: best.0,
        history,
        params: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_flat_epochs_halve_lr() {
        let mut s = PlateauSchedule::new(3, 0.5);
        let mut lr = 0.0008;
        assert!(s.observe(1.0, &mut lr));
        assert!(!s.observe(1.0, &mut lr));
        assert!(!s.observe(1.1, &mut lr));
        assert_eq!(lr, 0.0008);
        assert!(!s.observe(1.2, &mut lr));
        assert_eq!(lr, 0.0004);
        assert!(!s.observe(1.0, &mut lr));
        assert!(!s.observe(1.0, &mut lr));
        assert_eq!(lr, 0.0004);
        assert!(s.observe(0.5, &mut lr));
        assert_eq!(lr, 0.0004);
    }

    #[test]
    fn mismatched_paths_rejected() {
        let config = RunConfig {
            train_path: Some("a.jsonl".into()),
            ..Default::default()
        };
        assert!(load_data(&config).is_err());
    }
}
