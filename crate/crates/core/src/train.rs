//! Mini-batch SGD loop with validation-based early stopping.

use fastmatch_tensor::Sgd;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Trainable;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Optimizer steps that run before early stopping may end training,
    /// continuing past `epochs` if needed. Keeps small training sets from
    /// stopping on the initial plateau.
    pub min_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, learning_rate: 0.05, momentum: 0.9, patience: 3, min_steps: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("{section}: {m}")));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch_size and patience must be > 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation: f64,
}

/// Trains `model` over `n` examples.
///
/// `batch_loss` runs forward and backward for the given example indices and
/// returns the batch loss, or `None` when the batch carries no training
/// signal (the optimizer step is then skipped so parameters stay put).
/// `validate` returns a higher-is-better score; the best-scoring parameters
/// are restored before returning.
pub fn fit<M: Trainable>(
    model: &mut M,
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    mut batch_loss: impl FnMut(&mut M, &[usize]) -> Result<Option<f64>>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<FitReport> {
    if n == 0 {
        return Err(Error::Precondition("empty training set".into()));
    }
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut rng = seed::rng(seed, "shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, fastmatch_tensor::ParamStore)> = None;
    let (mut stale, mut steps, mut stepped) = (0, 0usize, true);
    for epoch in 0.. {
        // a set whose batches are all skipped can never reach min_steps
        if epoch >= cfg.epochs && (steps >= cfg.min_steps || !stepped) {
            break;
        }
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            if let Some(loss) = batch_loss(model, idx)? {
                opt.step(model.store_mut());
                steps += 1;
                total += loss;
                batches += 1;
            }
        }
        stepped = batches > 0;
        let validation = validate(model)?;
        log.push(EpochLog { epoch, mean_loss: total / batches.max(1) as f64, validation });
        if best.as_ref().is_none_or(|b| validation > b.1) {
            best = Some((epoch, validation, model.store().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience && steps >= cfg.min_steps {
                break;
            }
        }
    }
    let (best_epoch, best_validation, params) = best.expect("at least one epoch");
    *model.store_mut() = params;
    Ok(FitReport { epochs: log, best_epoch, best_validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fastmatch_tensor::{Graph, Mode, ParamStore, Tensor};

    struct Scalar(ParamStore);

    impl Trainable for Scalar {
        fn store(&self) -> &ParamStore {
            &self.0
        }
        fn store_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
    }

    fn model() -> Scalar {
        let mut s = ParamStore::new();
        s.add("w", Tensor::matrix(1, 1, vec![0.0]).unwrap(), true);
        s.add("b", Tensor::zeros(vec![1]), true);
        Scalar(s)
    }

    fn value(m: &Scalar) -> f64 {
        m.0.get(m.0.find("w").unwrap()).data()[0]
    }

    #[test]
    fn restores_best_epoch_and_stops_early() {
        let mut m = model();
        let cfg = TrainConfig { epochs: 50, batch_size: 4, learning_rate: 0.1, momentum: 0.0, patience: 2, min_steps: 0 };
        // minimize (w - 3)^2 on a constant input; validation peaks when w is near 1
        let rep = fit(
            &mut m,
            8,
            &cfg,
            1,
            |m, idx| {
                let (w, b) = (m.0.find("w").unwrap(), m.0.find("b").unwrap());
                let mut g = Graph::new(&mut m.0, Mode::Train);
                let x = g.constant(Tensor::filled(vec![idx.len(), 1], 1.0))?;
                let p = g.dense(x, w, b)?;
                let loss = g.weighted_mse(p, &vec![3.0; idx.len()], &vec![1.0; idx.len()])?;
                let l = g.value(loss).data()[0];
                g.backward(loss)?;
                Ok(Some(l))
            },
            |m| Ok(-(value(m) - 1.0).abs()),
        )
        .unwrap();
        assert!(rep.epochs.len() < 50);
        assert_eq!(rep.best_validation, rep.epochs[rep.best_epoch].validation);
        assert_eq!(-(value(&m) - 1.0).abs(), rep.best_validation);
    }

    #[test]
    fn min_steps_outlasts_patience_and_epochs() {
        let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.1, momentum: 0.0, patience: 1, min_steps: 20 };
        let mut m = model();
        // flat validation would stop after two epochs without min_steps
        let rep = fit(&mut m, 8, &cfg, 1, |_, _| Ok(Some(0.0)), |_| Ok(0.0)).unwrap();
        assert_eq!(rep.epochs.len(), 10);
    }

    #[test]
    fn skipped_batches_leave_parameters_untouched() {
        let mut m = model();
        let before = m.0.clone();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        fit(&mut m, 10, &cfg, 1, |_, _| Ok(None), |_| Ok(0.0)).unwrap();
        assert_eq!(m.0, before);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate("t").is_ok());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate("t").is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate("t").is_err());
    }
}
