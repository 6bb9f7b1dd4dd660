//! Random rescale, crop/pad back to the input size, and horizontal flip.
//!
//! Flipping mirrors the picture, so labels naming a side (`left-*`/`right-*`)
//! swap to keep their meaning.

use rand::Rng;

use super::TrainConfig;
use crate::error::Result;
use crate::numcore::Tensor;
use crate::rng::StreamRng;
use crate::synthdata::{LabelMask, Sample, RENDER_DATASET};
use crate::taxonomy::{hierarchy_projection, Dataset, LabelTaxonomy};

/// One training image with the mask of the dataset it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `H×W×3` in [0, 1].
    pub image: Tensor<f32>,
    pub mask: LabelMask,
    pub dataset: String,
}

impl Example {
    pub fn from_sample(sample: &Sample, dataset: &str) -> Result<Self> {
        Ok(Example {
            image: sample.image.clone(),
            mask: sample.mask(dataset)?.clone(),
            dataset: dataset.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    /// Top-left of the output window in rescaled coordinates; negative values
    /// pad on that side.
    pub offset: (i64, i64),
    pub flip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            offset: (0, 0),
            flip: false,
        }
    }

    /// Draw parameters for a `size×size` input.
    pub fn sample(config: &TrainConfig, height: usize, width: usize, r: &mut StreamRng) -> Self {
        let scale = if config.scale_min < config.scale_max {
            r.gen_range(config.scale_min..=config.scale_max)
        } else {
            config.scale_min
        };
        let mut offset = |n: usize| {
            let s = scaled(n, scale) as i64;
            let slack = s - n as i64;
            let (lo, hi) = (slack.min(0), slack.max(0));
            r.gen_range(lo..=hi)
        };
        let oy = offset(height);
        let ox = offset(width);
        AugmentParams {
            scale,
            offset: (oy, ox),
            flip: r.gen_bool(config.flip_prob),
        }
    }
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Source index in the rescaled axis for output index `o`, or `None` when it
/// falls in the padding.
fn window(o: usize, n: usize, offset: i64, scaled_n: usize, flip: bool) -> Option<usize> {
    let o = if flip { n - 1 - o } else { o };
    let s = o as i64 + offset;
    (0..scaled_n as i64).contains(&s).then_some(s as usize)
}

/// Rescale bilinearly (half-pixel centers), crop/pad with mid-gray, flip.
pub fn augment_image(image: &Tensor<f32>, p: &AugmentParams) -> Tensor<f32> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let (sh, sw) = (scaled(h, p.scale), scaled(w, p.scale));
    let d = image.data();
    let axis = |s: usize, n: usize, sn: usize| {
        let src = ((s as f64 + 0.5) * n as f64 / sn as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let mut out = vec![0.5f32; h * w * 3];
    for y in 0..h {
        let Some(sy) = window(y, h, p.offset.0, sh, false) else { continue };
        let (y0, y1, ly) = axis(sy, h, sh);
        for x in 0..w {
            let Some(sx) = window(x, w, p.offset.1, sw, p.flip) else { continue };
            let (x0, x1, lx) = axis(sx, w, sw);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| d[(yy * w + xx) * 3 + c];
                let top = at(y0, x0) * (1.0 - lx) + at(y0, x1) * lx;
                let bottom = at(y1, x0) * (1.0 - lx) + at(y1, x1) * lx;
                out[(y * w + x) * 3 + c] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    Tensor::new(&[h, w, 3], out).expect("same shape")
}

/// Nearest-neighbor rescale, crop/pad with background, flip with label swap
/// through `flip_map`.
pub fn augment_mask(mask: &LabelMask, p: &AugmentParams, flip_map: &[usize]) -> LabelMask {
    let (h, w) = (mask.height, mask.width);
    let (sh, sw) = (scaled(h, p.scale), scaled(w, p.scale));
    let nn = |s: usize, n: usize, sn: usize| ((2 * s + 1) * n / (2 * sn)).min(n - 1);
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let Some(sy) = window(y, h, p.offset.0, sh, false) else { continue };
        let yy = nn(sy, h, sh);
        for x in 0..w {
            let Some(sx) = window(x, w, p.offset.1, sw, p.flip) else { continue };
            let v = mask.data[yy * w + nn(sx, w, sw)];
            out[y * w + x] = if p.flip { flip_map[v as usize] as u8 } else { v };
        }
    }
    LabelMask {
        height: h,
        width: w,
        data: out,
    }
}

/// Label permutation for a horizontal flip: `left-x` ↔ `right-x`.
pub fn flip_map(dataset: &Dataset) -> Vec<usize> {
    dataset
        .labels
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mirrored = if let Some(rest) = name.strip_prefix("left-") {
                format!("right-{rest}")
            } else if let Some(rest) = name.strip_prefix("right-") {
                format!("left-{rest}")
            } else {
                return i;
            };
            dataset.label_index(&mirrored).unwrap_or(i)
        })
        .collect()
}

pub fn augment_example(
    ex: &Example,
    config: &TrainConfig,
    taxonomy: &LabelTaxonomy,
    r: &mut StreamRng,
) -> Result<Example> {
    let (h, w) = (ex.mask.height, ex.mask.width);
    let p = AugmentParams::sample(config, h, w, r);
    let map = flip_map(taxonomy.dataset(&ex.dataset)?);
    Ok(Example {
        image: augment_image(&ex.image, &p),
        mask: augment_mask(&ex.mask, &p, &map),
        dataset: ex.dataset.clone(),
    })
}

/// Augment a full sample: the fine mask is transformed and every coarser
/// mask is re-derived from it.
pub fn augment(
    sample: &Sample,
    config: &TrainConfig,
    taxonomy: &LabelTaxonomy,
    r: &mut StreamRng,
) -> Result<Sample> {
    let fine = sample.mask(RENDER_DATASET)?;
    let p = AugmentParams::sample(config, fine.height, fine.width, r);
    augment_with(sample, &p, taxonomy)
}

pub fn augment_with(sample: &Sample, p: &AugmentParams, taxonomy: &LabelTaxonomy) -> Result<Sample> {
    let fine = augment_mask(
        sample.mask(RENDER_DATASET)?,
        p,
        &flip_map(taxonomy.dataset(RENDER_DATASET)?),
    );
    let mut masks = sample.masks.clone();
    for (id, m) in masks.iter_mut() {
        *m = if id == RENDER_DATASET {
            fine.clone()
        } else {
            fine.project(&hierarchy_projection(taxonomy, RENDER_DATASET, id)?)?
        };
    }
    Ok(Sample {
        image: augment_image(&sample.image, p),
        masks,
        seed: sample.seed,
        figures: sample.figures.clone(),
    })
}
