//! Procedural articulated-figure scenes with masks at every granularity of
//! the shipped taxonomy, plus the image/mask codecs, dataset manifests and a
//! synthetic word-embedding table.

mod codec;
mod embeddings;
mod manifest;
pub mod raster;
mod scene;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::sync::OnceLock;

pub use codec::{decode_image, decode_mask, encode_image, encode_mask, mask_to_color};
pub use embeddings::emit_embeddings;
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestRecord};
pub use scene::{FigureMeta, Garments, Legwear};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng;
use crate::taxonomy::{hierarchy_projection, LabelTaxonomy};

/// Integer label map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Data(format!(
                "mask of {height}×{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(LabelMask {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMask {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    /// Relabel every pixel through `map` (fine index → coarse index).
    pub fn project(&self, map: &[usize]) -> Result<LabelMask> {
        let data = self
            .data
            .iter()
            .map(|&v| {
                map.get(v as usize)
                    .map(|&m| m as u8)
                    .ok_or_else(|| Error::Data(format!("label {v} outside projection map")))
            })
            .collect::<Result<_>>()?;
        Ok(LabelMask { data, ..*self })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square image side in pixels; a multiple of 16, at least 32.
    pub resolution: usize,
    /// Figures per scene are drawn uniformly from `1..=max_figures` (1 or 2).
    pub max_figures: usize,
    /// Let figures overlap and occasionally drop an occluding block in front.
    pub occlusion: bool,
    /// Amplitude of per-pixel photometric noise, in [0, 1].
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution: 64,
            max_figures: 2,
            occlusion: false,
            noise: 0.04,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 || self.resolution % 16 != 0 || self.resolution > 1024 {
            return Err(Error::Config(format!(
                "resolution {} must be a multiple of 16 in 32..=1024",
                self.resolution
            )));
        }
        if !(1..=2).contains(&self.max_figures) {
            return Err(Error::Config(format!(
                "max_figures must be 1 or 2, got {}",
                self.max_figures
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1]", self.noise)));
        }
        Ok(())
    }
}

/// One rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `H×W×3`, values are multiples of 1/255 in [0, 1].
    pub image: Tensor<f32>,
    /// Keyed by dataset id of the shipped taxonomy.
    pub masks: BTreeMap<String, LabelMask>,
    pub seed: u64,
    pub figures: Vec<FigureMeta>,
}

impl Sample {
    pub fn mask(&self, dataset: &str) -> Result<&LabelMask> {
        self.masks
            .get(dataset)
            .ok_or_else(|| Error::Config(format!("sample has no mask for dataset {dataset}")))
    }
}

pub(crate) fn shipped() -> &'static LabelTaxonomy {
    static TAX: OnceLock<LabelTaxonomy> = OnceLock::new();
    TAX.get_or_init(LabelTaxonomy::shipped)
}

/// The generator paints fine labels; this is the dataset it paints in.
pub const RENDER_DATASET: &str = "fine";

/// Render a scene. Masks for every shipped dataset are derived from the fine
/// mask through the label hierarchy, so they agree pixel for pixel.
pub fn generate_scene(seed: u64, config: &SynthConfig) -> Result<Sample> {
    config.validate()?;
    let tax = shipped();
    let (image, fine, figures) = scene::render(seed, config, tax.dataset(RENDER_DATASET)?)?;
    let mut masks = BTreeMap::new();
    for id in tax.dataset_ids() {
        let mask = if id == RENDER_DATASET {
            fine.clone()
        } else {
            fine.project(&hierarchy_projection(tax, RENDER_DATASET, id)?)?
        };
        masks.insert(id.to_string(), mask);
    }
    Ok(Sample {
        image,
        masks,
        seed,
        figures,
    })
}

/// Seed of scene `index` of a dataset split; splits and datasets draw from
/// disjoint streams so their image sets differ.
pub fn scene_seed(seed: u64, split: &str, dataset: &str, index: usize) -> u64 {
    rng::derive_seed(seed, &format!("scene/{split}/{dataset}"), index as u64)
}

pub fn generate_split(
    seed: u64,
    split: &str,
    dataset: &str,
    count: usize,
    config: &SynthConfig,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| generate_scene(scene_seed(seed, split, dataset, i), config))
        .collect()
}
