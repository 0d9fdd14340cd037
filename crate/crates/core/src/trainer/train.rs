use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{adam_step, AdamState};
use super::TrainConfig;
use crate::error::{check_dim, Error, Result};
use crate::metrics::{argmax_map, pcc2};
use crate::synthdata::{normalize, LabeledImage, NormalizationStats};
use crate::tensor::Tensor;
use crate::unet::UNetModel;

/// Normalized images with their (H, W) class targets.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    inputs: Vec<Tensor>,
    targets: Vec<Vec<u8>>,
}

impl Dataset {
    /// Each input is a (1, C, H, W) tensor; each target holds H·W class indices.
    pub fn new(inputs: Vec<Tensor>, targets: Vec<Vec<u8>>) -> Result<Self> {
        check_dim("target count", inputs.len(), targets.len())?;
        for (x, t) in inputs.iter().zip(&targets) {
            check_dim("batch", 1, x.batch())?;
            check_dim("target length", x.height() * x.width(), t.len())?;
            if x.shape() != inputs[0].shape() {
                return Err(Error::Config("dataset images differ in shape".into()));
            }
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn from_labeled<'a>(
        images: impl IntoIterator<Item = &'a LabeledImage>,
        stats: &NormalizationStats,
    ) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for li in images {
            inputs.push(normalize(&li.image, stats)?);
            targets.push(li.mask.as_raw().to_vec());
        }
        Dataset::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Stacks the given samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let xs: Vec<&Tensor> = indices.iter().map(|&i| &self.inputs[i]).collect();
        let x = Tensor::stack(&xs)?;
        let t = indices.iter().flat_map(|&i| self.targets[i].iter().copied()).collect();
        Ok((x, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Pixel accuracy on the holdout set after the epoch, if there is one.
    pub holdout_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Best-holdout snapshot and its epoch.
    pub best: Option<(usize, UNetModel)>,
}

/// Eval-mode pixel accuracy of `model` over `data`.
pub fn evaluate_accuracy(model: &UNetModel, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 8;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, t) = data.batch(chunk)?;
        pred.extend(argmax_map(&model.segment(&x)?));
        truth.extend(t);
    }
    Ok(pcc2(&pred, &truth, None)?.0)
}

/// Mini-batch Adam training. `model` ends holding the final parameters; the
/// best-holdout snapshot is returned alongside the per-epoch history.
pub fn train(
    model: &mut UNetModel,
    data: &Dataset,
    holdout: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut state = AdamState::default();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, UNetModel)> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let (x, t) = data.batch(batch)?;
            let step = model.forward_train(&x, &t)?;
            if !step.loss.is_finite() || !step.grads.is_finite() {
                return Err(Error::Degenerate(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            adam_step(model, &step.grads, &mut state, config)?;
            loss_sum += f64::from(step.loss) * batch.len() as f64;
        }
        let holdout_accuracy = if holdout.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(model, holdout)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            holdout_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.4}, holdout accuracy {}",
            record.train_loss,
            holdout_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        if let Some(acc) = holdout_accuracy {
            if acc > best_acc {
                best_acc = acc;
                best = Some((epoch, model.clone()));
            }
        }
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { history, best })
}
