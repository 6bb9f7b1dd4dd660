//! Runs on the synthetic benchmark: the component ablation grid, training
//! from a source-dataset checkpoint, and data-fraction studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graphnn::GraphConfig;
use crate::metrics::{MetricOptions, Metrics};
use crate::model::{GraphMode, Model, ModelConfig};
use crate::segnet::BackboneConfig;
use crate::synthdata::{emit_embeddings, generate_split, SynthConfig};
use crate::taxonomy::{LabelTaxonomy, TransferScheme, WordEmbeddingTable};
use crate::trainer::{evaluate, train, Checkpoint, Example, TrainConfig};

/// Train and test splits of one synthetic dataset family.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub synth: SynthConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            synth: SynthConfig::default(),
            train_count: 1000,
            test_count: 200,
            seed: 0,
        }
    }
}

impl Benchmark {
    /// The first `fraction` of the training split of `dataset`.
    pub fn train_set(&self, dataset: &str, fraction: f64) -> Result<Vec<Example>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
        }
        let n = ((self.train_count as f64 * fraction).round() as usize).max(1);
        self.split("train", dataset, n)
    }

    pub fn test_set(&self, dataset: &str) -> Result<Vec<Example>> {
        self.split("test", dataset, self.test_count)
    }

    fn split(&self, split: &str, dataset: &str, n: usize) -> Result<Vec<Example>> {
        generate_split(self.seed, split, dataset, n, &self.synth)?
            .iter()
            .map(|s| Example::from_sample(s, dataset))
            .collect()
    }
}

/// One row of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Arm {
    /// Backbone and classifier only.
    Baseline,
    /// Intra-graph reasoning on the target graph.
    Intra,
    /// Intra model initialized from the source checkpoint, without transfer.
    FineTune,
    /// Source graph transferred into the target graph with these schemes,
    /// initialized from the source checkpoint.
    Transfer(Vec<TransferScheme>),
}

impl Arm {
    pub fn label(&self) -> String {
        match self {
            Arm::Baseline => "baseline".into(),
            Arm::Intra => "+intra".into(),
            Arm::FineTune => "fine-tune".into(),
            Arm::Transfer(s) => {
                let names: Vec<&str> = s.iter().map(|s| s.as_str()).collect();
                format!("+transfer({})", names.join("+"))
            }
        }
    }

    pub fn needs_source(&self) -> bool {
        matches!(self, Arm::FineTune | Arm::Transfer(_))
    }

    pub fn mode(&self, source: &str, target: &str) -> GraphMode {
        match self {
            Arm::Baseline => GraphMode::None,
            Arm::Intra | Arm::FineTune => GraphMode::Intra,
            Arm::Transfer(schemes) => GraphMode::Transfer {
                edges: vec![(source.to_string(), target.to_string())],
                schemes: schemes.clone(),
            },
        }
    }
}

/// Everything shared by the runs of a study.
#[derive(Clone, Debug)]
pub struct Setup {
    pub backbone: BackboneConfig,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    /// Steps of source-dataset training; 0 uses `train`'s budget.
    pub source_steps: usize,
    pub embeddings: WordEmbeddingTable,
}

impl Setup {
    /// Default architecture with embeddings generated for the taxonomy.
    pub fn new(taxonomy: &LabelTaxonomy, train: TrainConfig) -> Result<Self> {
        Ok(Setup {
            backbone: BackboneConfig::default(),
            graph: GraphConfig::default(),
            embeddings: emit_embeddings(taxonomy, train.seed, 64)?,
            train,
            source_steps: 0,
        })
    }

    fn model_config(&self, mode: GraphMode, heads: &[&str]) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            graph: self.graph.clone(),
            mode,
            heads: heads.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Train a fresh model with `mode` on `data`, optionally starting from
    /// `init` (matching parameter names are loaded, optimizer state reset).
    pub fn fit(
        &self,
        taxonomy: &LabelTaxonomy,
        mode: GraphMode,
        data: &BTreeMap<String, Vec<Example>>,
        init: Option<&Checkpoint>,
        seed: u64,
    ) -> Result<Model<f32>> {
        self.fit_with(taxonomy, mode, data, init, &TrainConfig { seed, ..self.train.clone() })
    }

    fn fit_with(
        &self,
        taxonomy: &LabelTaxonomy,
        mode: GraphMode,
        data: &BTreeMap<String, Vec<Example>>,
        init: Option<&Checkpoint>,
        train_config: &TrainConfig,
    ) -> Result<Model<f32>> {
        let heads: Vec<&str> = data.keys().map(String::as_str).collect();
        let cfg = self.model_config(mode, &heads);
        let mut model = Model::new(cfg, taxonomy, Some(&self.embeddings), train_config.seed)?;
        if let Some(ck) = init {
            ck.apply(&mut model.store, false)?;
        }
        train(&mut model, data, taxonomy, train_config, |_| {})?;
        Ok(model)
    }

    /// Train one arm on `target` and score it on `test`.
    pub fn run_arm(
        &self,
        taxonomy: &LabelTaxonomy,
        arm: &Arm,
        (source, target): (&str, &str),
        train: &[Example],
        test: &[Example],
        source_checkpoint: Option<&Checkpoint>,
        seed: u64,
    ) -> Result<Metrics> {
        if arm.needs_source() && source_checkpoint.is_none() {
            return Err(Error::Usage(format!(
                "{} needs a source checkpoint",
                arm.label()
            )));
        }
        let init = if arm.needs_source() { source_checkpoint } else { None };
        let data = BTreeMap::from([(target.to_string(), train.to_vec())]);
        let model = self.fit(taxonomy, arm.mode(source, target), &data, init, seed)?;
        score(&model, test, taxonomy)
    }

    /// Intra model trained on the source dataset, as a checkpoint.
    pub fn source_checkpoint(
        &self,
        taxonomy: &LabelTaxonomy,
        source: &str,
        train: &[Example],
        seed: u64,
    ) -> Result<Checkpoint> {
        let data = BTreeMap::from([(source.to_string(), train.to_vec())]);
        let mut tc = TrainConfig { seed, ..self.train.clone() };
        if self.source_steps > 0 {
            tc.steps = self.source_steps;
        }
        let model = self.fit_with(taxonomy, GraphMode::Intra, &data, None, &tc)?;
        Ok(Checkpoint::from_store(&model.store, 0, ""))
    }
}

pub fn score(model: &Model<f32>, test: &[Example], taxonomy: &LabelTaxonomy) -> Result<Metrics> {
    evaluate(model, test, taxonomy)?.compute(&MetricOptions::default())
}

/// Mean test mIoU of each arm over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// `miou[arm][seed]`.
    pub miou: Vec<Vec<f64>>,
}

impl GridResult {
    pub fn mean(&self, arm: usize) -> f64 {
        let v = &self.miou[arm];
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Comparison table, mIoU in percentage points.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<34}", "arm");
        for s in &self.seeds {
            let _ = write!(out, "{:>10}", format!("seed {s}"));
        }
        let _ = writeln!(out, "{:>10}", "mean");
        for (i, arm) in self.arms.iter().enumerate() {
            let _ = write!(out, "{:<34}", arm.label());
            for v in &self.miou[i] {
                let _ = write!(out, "{:>10.2}", 100.0 * v);
            }
            let _ = writeln!(out, "{:>10.2}", 100.0 * self.mean(i));
        }
        out
    }
}

/// Train every arm for every seed on `fraction` of the target's training
/// data. Arms needing a source start from an intra model trained on the full
/// source split with the same seed.
pub fn run_grid(
    setup: &Setup,
    taxonomy: &LabelTaxonomy,
    bench: &Benchmark,
    (source, target): (&str, &str),
    arms: &[Arm],
    seeds: &[u64],
    fraction: f64,
    mut progress: impl FnMut(&Arm, u64, f64),
) -> Result<GridResult> {
    let train = bench.train_set(target, fraction)?;
    let test = bench.test_set(target)?;
    let source_train = if arms.iter().any(Arm::needs_source) {
        Some(bench.train_set(source, 1.0)?)
    } else {
        None
    };
    let mut miou = vec![Vec::new(); arms.len()];
    for &seed in seeds {
        let ck = match &source_train {
            Some(st) => Some(setup.source_checkpoint(taxonomy, source, st, seed)?),
            None => None,
        };
        for (i, arm) in arms.iter().enumerate() {
            let m = setup.run_arm(taxonomy, arm, (source, target), &train, &test, ck.as_ref(), seed)?;
            progress(arm, seed, m.mean_iou);
            miou[i].push(m.mean_iou);
        }
    }
    Ok(GridResult {
        arms: arms.to_vec(),
        seeds: seeds.to_vec(),
        miou,
    })
}
