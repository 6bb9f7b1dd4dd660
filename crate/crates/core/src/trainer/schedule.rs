use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::rng::stream;

/// `base_lr · (1 − step/max_steps)^poly_power`.
pub fn poly_lr(step: usize, max_steps: usize, config: &TrainConfig) -> Result<f64> {
    if step > max_steps || max_steps == 0 {
        return Err(Error::Usage(format!(
            "step {step} outside schedule of {max_steps} steps"
        )));
    }
    let frac = 1.0 - step as f64 / max_steps as f64;
    Ok(config.base_lr * frac.powf(config.poly_power))
}

/// Dataset for each of `steps` steps, drawn with probability proportional to
/// the dataset sizes. `sizes` pairs a dataset id with its sample count.
pub fn universal_schedule(sizes: &[(String, usize)], seed: u64, steps: usize) -> Result<Vec<String>> {
    if sizes.is_empty() {
        return Err(Error::Config("universal schedule needs at least one dataset".into()));
    }
    if let Some((id, _)) = sizes.iter().find(|(_, n)| *n == 0) {
        return Err(Error::Config(format!("dataset {id} has no samples")));
    }
    if sizes.len() == 1 {
        return Ok(vec![sizes[0].0.clone(); steps]);
    }
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let mut r = stream(seed, "universal-schedule", 0);
    Ok((0..steps)
        .map(|_| {
            let mut u = r.gen_range(0..total);
            for (id, n) in sizes {
                if u < *n {
                    return id.clone();
                }
                u -= n;
            }
            unreachable!("draw below total")
        })
        .collect())
}

/// Sample indices for one dataset: a seeded permutation per epoch, consumed
/// in order.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    seed: u64,
    purpose: String,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64, dataset: &str) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config(format!("dataset {dataset} has no samples")));
        }
        let mut s = BatchSampler {
            len,
            seed,
            purpose: format!("epoch-order/{dataset}"),
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order
            .shuffle(&mut stream(self.seed, &self.purpose, self.epoch));
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.len {
                    self.epoch += 1;
                    self.shuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}
