//! Small convolutional encoder, per-dataset 1×1 classifiers and bilinear
//! upsampling back to input resolution.
//!
//! Feature maps are `H×W×C` tensors on a [`Tape`].

use crate::error::{dim_err, Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Var};

#[cfg(test)]
mod tests;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Output channels of each stage.
    pub widths: Vec<usize>,
    /// Convolutions per stage; the first one of a downsampling stage has
    /// stride 2.
    pub convs_per_stage: usize,
    pub kernel: usize,
    /// 1, 2, 4, 8 or 16; the last `log2(output_stride)` stages downsample.
    pub output_stride: usize,
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            widths: vec![16, 32, 64],
            convs_per_stage: 2,
            kernel: 3,
            output_stride: 4,
            in_channels: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("backbone needs nonzero stage widths".into()));
        }
        if self.convs_per_stage == 0 || self.kernel % 2 == 0 || self.in_channels == 0 {
            return Err(Error::Config(format!(
                "backbone needs at least one conv per stage and an odd kernel, got {} and {}",
                self.convs_per_stage, self.kernel
            )));
        }
        let s = self.output_stride;
        if !s.is_power_of_two() || s > 16 || self.downsampling_stages() > self.widths.len() {
            return Err(Error::Config(format!(
                "output stride {s} not reachable with {} stages",
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    fn downsampling_stages(&self) -> usize {
        self.output_stride.trailing_zeros() as usize
    }

    fn stage_stride(&self, stage: usize) -> usize {
        if stage + self.downsampling_stages() >= self.widths.len() {
            2
        } else {
            1
        }
    }

    pub fn weight_name(stage: usize, conv: usize) -> String {
        format!("backbone.s{stage}.c{conv}.weight")
    }

    pub fn bias_name(stage: usize, conv: usize) -> String {
        format!("backbone.s{stage}.c{conv}.bias")
    }

    /// He-uniform kernels, zero biases.
    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.validate()?;
        let k = self.kernel;
        let mut cin = self.in_channels;
        for (s, &w) in self.widths.iter().enumerate() {
            for c in 0..self.convs_per_stage {
                let fan_in = k * k * cin;
                let bound = (6.0 / fan_in as f64).sqrt();
                store.insert_uniform_bound(&Self::weight_name(s, c), &[k, k, cin, w], bound, seed)?;
                store.insert_zeros(&Self::bias_name(s, c), &[w])?;
                cin = w;
            }
        }
        Ok(())
    }
}

/// Stacked `conv + bias + relu`; returns an `H/s × W/s × C_last` map.
pub fn backbone_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &BackboneConfig,
    image: Var,
) -> Result<Var> {
    config.validate()?;
    let (h, w) = match tape.shape(image) {
        &[h, w, c] if c == config.in_channels => (h, w),
        s => {
            return Err(dim_err!(
                "backbone expects H×W×{}, got {:?}",
                config.in_channels,
                s
            ))
        }
    };
    let s = config.output_stride;
    if h % s != 0 || w % s != 0 {
        return Err(dim_err!("{h}×{w} input is not divisible by output stride {s}"));
    }
    let pad = config.kernel / 2;
    let mut x = image;
    for stage in 0..config.widths.len() {
        for c in 0..config.convs_per_stage {
            let stride = if c == 0 { config.stage_stride(stage) } else { 1 };
            let wv = tape.param_named(store, &BackboneConfig::weight_name(stage, c))?;
            let bv = tape.param_named(store, &BackboneConfig::bias_name(stage, c))?;
            let y = tape.conv2d(x, wv, stride, pad)?;
            let y = tape.add_bias(y, bv)?;
            x = tape.relu(y);
        }
    }
    Ok(x)
}

pub fn classifier_weight(dataset: &str) -> String {
    format!("head.{dataset}.weight")
}

pub fn classifier_bias(dataset: &str) -> String {
    format!("head.{dataset}.bias")
}

pub fn register_classifier<T: Real>(
    store: &mut ParamStore<T>,
    dataset: &str,
    channels: usize,
    num_labels: usize,
    seed: u64,
) -> Result<()> {
    store.insert_uniform(&classifier_weight(dataset), &[channels, num_labels], channels, seed)?;
    store.insert_zeros(&classifier_bias(dataset), &[num_labels])?;
    Ok(())
}

/// 1×1 convolution to the dataset's label count.
pub fn classify<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    features: Var,
    dataset: &str,
) -> Result<Var> {
    let (h, w, c) = match tape.shape(features) {
        &[h, w, c] => (h, w, c),
        s => return Err(dim_err!("classify expects H×W×C, got {:?}", s)),
    };
    let (wname, bname) = (classifier_weight(dataset), classifier_bias(dataset));
    if store.by_name(&wname).is_none() {
        return Err(Error::Config(format!("no classifier for dataset {dataset}")));
    }
    let wv = tape.param_named(store, &wname)?;
    let bv = tape.param_named(store, &bname)?;
    let k = tape.shape(wv)[1];
    let flat = tape.reshape(features, &[h * w, c])?;
    let logits = tape.matmul(flat, wv)?;
    let logits = tape.add_bias(logits, bv)?;
    tape.reshape(logits, &[h, w, k])
}

/// Bilinear upscaling with half-pixel centers; downscaling is a usage error.
pub fn upsample_bilinear<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    tape.upsample_bilinear(logits, out_h, out_w)
}

/// Per-pixel argmax over the channel axis of an `H×W×K` value.
pub fn argmax_channels<T: Real>(values: &[T], k: usize) -> Vec<u8> {
    values
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}
