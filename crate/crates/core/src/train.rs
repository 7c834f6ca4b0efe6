//! Mini-batch training with Adam and step learning-rate decay.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::model::{CloudPlan, ForwardCtx, Model};
use crate::nn::{adam_step, apply_norm_updates, AdamConfig, AdamState, Matrix};
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 30, batch_size: 16, adam: AdamConfig::default(), decay: 0.7, decay_every: 10, seed: 0 }
    }
}

impl TrainOptions {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.adam.lr * self.decay.powi(steps as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub optimizer: AdamState,
}

/// Index of the largest entry of each row; ties go to the lower index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Grouping and sort orders of every cloud under the model's config.
pub fn plan_all(model: &Model, clouds: &[PointCloud]) -> Result<Vec<CloudPlan>> {
    crate::par::map(clouds, |c| model.plan(c)).into_iter().collect()
}

/// Trains `model` on labelled clouds, calling `on_epoch` after every epoch.
pub fn train(
    model: &mut Model,
    clouds: &[PointCloud],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if opts.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let classes = model.config().head.num_classes;
    let labels = clouds
        .iter()
        .map(|c| match c.label() {
            Some(l) if l < classes => Ok(l),
            other => Err(Error::config(format!("training label {other:?} outside 0..{classes}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let plans = plan_all(model, clouds)?;
    let mut optimizer = AdamState::new(model.params());
    let mut logs = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    for epoch in 0..opts.epochs {
        let start = Instant::now();
        let adam = AdamConfig { lr: opts.learning_rate(epoch), ..opts.adam };
        order.shuffle(&mut rng_for(opts.seed, &[epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            let bc: Vec<&PointCloud> = batch.iter().map(|&i| &clouds[i]).collect();
            let bp: Vec<&CloudPlan> = batch.iter().map(|&i| &plans[i]).collect();
            let bl: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut ctx = ForwardCtx::train(derive_seed(opts.seed, &[epoch as u64, b as u64, 1]));
            let out = model.loss_and_grads(&bc, &bp, &bl, &mut ctx)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += argmax_rows(&out.logits).iter().zip(&bl).filter(|(p, l)| p == l).count();
            adam_step(model.params_mut(), &out.grads, &mut optimizer, &adam);
            apply_norm_updates(model.params_mut(), &ctx.norm_updates);
        }
        let n = clouds.len().max(1) as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            lr: adam.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { logs, optimizer })
}

/// Per-epoch log as CSV with a header row.
pub fn epoch_log_csv(logs: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in logs {
        w.serialize(l)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format { what: "epoch log", detail: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_schedule() {
        let o = TrainOptions::default();
        assert_eq!(o.learning_rate(0), 1e-3);
        assert_eq!(o.learning_rate(9), 1e-3);
        assert!((o.learning_rate(10) - 7e-4).abs() < 1e-15);
        assert!((o.learning_rate(29) - 4.9e-4).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0, 3.0], vec![-1.0, -2.0, -3.0]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
