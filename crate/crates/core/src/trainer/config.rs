use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub batch_size: usize,
    /// Passes over the training data; ignored when `steps` is nonzero.
    pub epochs: usize,
    /// Total optimizer steps; 0 derives the count from `epochs`.
    pub steps: usize,
    /// Random rescale range before cropping back to the input size.
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
    /// Apply rescale/crop/flip augmentation.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.007,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
            batch_size: 8,
            epochs: 10,
            steps: 0,
            scale_min: 0.5,
            scale_max: 2.0,
            flip_prob: 0.5,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.poly_power > 0.0) {
            return bad(format!("poly_power must be positive, got {}", self.poly_power));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad(format!(
                "scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        if self.steps == 0 && self.epochs == 0 {
            return bad("either steps or epochs must be nonzero".into());
        }
        Ok(())
    }

    /// Optimizer steps for `examples` training samples.
    pub fn total_steps(&self, examples: usize) -> usize {
        if self.steps > 0 {
            self.steps
        } else {
            (self.epochs * examples).div_ceil(self.batch_size).max(1)
        }
    }
}
