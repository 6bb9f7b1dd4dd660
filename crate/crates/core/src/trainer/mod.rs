//! Optimization: per-pixel cross-entropy, poly learning-rate decay, SGD with
//! momentum, one-dataset batches for joint training, checkpoints.

mod augment;
mod checkpoint;
mod config;
mod schedule;


use std::collections::BTreeMap;
use std::fmt;

pub use augment::{
    augment, augment_example, augment_image, augment_mask, augment_with, flip_map, AugmentParams,
    Example,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadReport, MAGIC, VERSION};
pub use config::TrainConfig;
pub use schedule::{poly_lr, universal_schedule, BatchSampler};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::Model;
use crate::numcore::{sgd_step, Tape, Tensor};
use crate::rng::stream;
use crate::segnet::argmax_channels;
use crate::synthdata::LabelMask;
use crate::taxonomy::LabelTaxonomy;

/// Network input from an image in [0, 1]: centered and scaled to unit-ish range.
pub fn image_input(image: &Tensor<f32>) -> Tensor<f32> {
    image.map(|v| (v - 0.5) * 4.0)
}

/// One log record; displays as `step<TAB>dataset<TAB>lr<TAB>loss`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub dataset: String,
    pub lr: f64,
    pub loss: f32,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.6e}\t{:.6}", self.step, self.dataset, self.lr, self.loss)
    }
}

/// Mean per-pixel cross-entropy of `batch` under `dataset`'s head, without
/// updating anything. Gradients are accumulated into the model's store.
pub fn batch_loss(model: &mut Model<f32>, batch: &[&Example]) -> Result<f32> {
    let dataset = &batch
        .first()
        .ok_or_else(|| Error::Usage("empty batch".into()))?
        .dataset;
    if let Some(other) = batch.iter().find(|e| &e.dataset != dataset) {
        return Err(Error::Usage(format!(
            "batch mixes datasets {dataset} and {}",
            other.dataset
        )));
    }
    let mut tape = Tape::new();
    let mut total = None;
    for ex in batch {
        let (h, w) = (ex.mask.height, ex.mask.width);
        let img = tape.constant(image_input(&ex.image));
        let logits = model.forward(&mut tape, img, dataset)?;
        let k = tape.shape(logits)[2];
        let flat = tape.reshape(logits, &[h * w, k])?;
        let labels: Vec<usize> = ex.mask.data.iter().map(|&v| v as usize).collect();
        let loss = tape.cross_entropy(flat, &labels, None)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let loss = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f32);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    model.store.zero_grad();
    tape.backward(loss, &mut model.store)?;
    Ok(value)
}

/// Forward, backward and one SGD update at `poly_lr(step)`. At the end of the
/// schedule the learning rate is zero and parameters are left untouched.
pub fn train_step(
    model: &mut Model<f32>,
    batch: &[&Example],
    config: &TrainConfig,
    step: usize,
    max_steps: usize,
) -> Result<f32> {
    let lr = poly_lr(step, max_steps, config)?;
    let loss = batch_loss(model, batch)?;
    if lr > 0.0 {
        sgd_step(&mut model.store, lr, config.momentum, config.weight_decay)?;
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub last_loss: f32,
    /// Mean loss over the final tenth of the run.
    pub tail_loss: f32,
}

/// Train on `data` (dataset id → examples). Each step draws one dataset,
/// proportionally to its size, and a batch from it; with one dataset this is
/// ordinary single-dataset training. `on_step` sees every log record.
pub fn train(
    model: &mut Model<f32>,
    data: &BTreeMap<String, Vec<Example>>,
    taxonomy: &LabelTaxonomy,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainSummary> {
    config.validate()?;
    let sizes: Vec<(String, usize)> = data.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let steps = config.total_steps(total);
    let schedule = universal_schedule(&sizes, config.seed, steps)?;
    let mut samplers: BTreeMap<&str, BatchSampler> = BTreeMap::new();
    for (id, n) in &sizes {
        samplers.insert(id, BatchSampler::new(*n, config.seed, id)?);
    }
    let mut losses = Vec::with_capacity(steps);
    for (step, dataset) in schedule.iter().enumerate() {
        let examples = &data[dataset];
        let idx = samplers
            .get_mut(dataset.as_str())
            .expect("sampler per dataset")
            .next_batch(config.batch_size);
        let batch: Vec<Example> = if config.augment {
            idx.iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut r = stream(
                        config.seed,
                        "augment",
                        (step * config.batch_size + j) as u64,
                    );
                    augment_example(&examples[i], config, taxonomy, &mut r)
                })
                .collect::<Result<_>>()?
        } else {
            idx.iter().map(|&i| examples[i].clone()).collect()
        };
        let refs: Vec<&Example> = batch.iter().collect();
        let lr = poly_lr(step, steps, config)?;
        let loss = train_step(model, &refs, config, step, steps)?;
        on_step(&StepLog {
            step,
            dataset: dataset.clone(),
            lr,
            loss,
        });
        losses.push(loss);
    }
    let tail = &losses[losses.len() - (losses.len() / 10).max(1)..];
    Ok(TrainSummary {
        steps,
        last_loss: *losses.last().expect("at least one step"),
        tail_loss: tail.iter().sum::<f32>() / tail.len() as f32,
    })
}

/// Per-pixel argmax of the full-resolution logits.
pub fn predict(model: &Model<f32>, image: &Tensor<f32>, dataset: &str) -> Result<LabelMask> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut tape = Tape::new();
    let img = tape.constant(image_input(image));
    let logits = model.forward(&mut tape, img, dataset)?;
    let k = tape.shape(logits)[2];
    LabelMask::new(h, w, argmax_channels(tape.value(logits).data(), k))
}

/// Confusion matrix of `model` over `examples`, all of one dataset.
pub fn evaluate(
    model: &Model<f32>,
    examples: &[Example],
    taxonomy: &LabelTaxonomy,
) -> Result<ConfusionMatrix> {
    let dataset = &examples
        .first()
        .ok_or_else(|| Error::Usage("nothing to evaluate".into()))?
        .dataset;
    let mut cm = ConfusionMatrix::new(taxonomy.num_labels(dataset)?);
    for ex in examples {
        if &ex.dataset != dataset {
            return Err(Error::Usage("evaluation set mixes datasets".into()));
        }
        let pred = predict(model, &ex.image, dataset)?;
        cm.accumulate(&pred.data, &ex.mask.data)?;
    }
    Ok(cm)
}
