//! Flat `key = value` run configuration.
//!
//! Sources, lowest precedence first: built-in defaults, the file named by
//! `--config`, the `GRAPHONOMY_SEED` environment variable (for `seed` only),
//! then `--key=value` flags. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use taxograph::experiments::{Arm, Benchmark};
use taxograph::graphnn::GraphConfig;
use taxograph::model::{GraphMode, ModelConfig};
use taxograph::segnet::BackboneConfig;
use taxograph::synthdata::SynthConfig;
use taxograph::taxonomy::TransferScheme;
use taxograph::trainer::TrainConfig;
use taxograph::{Error, Result};

pub const SEED_ENV: &str = "GRAPHONOMY_SEED";

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for data, initialization and sampling"),
    ("out", "out", "output directory"),
    ("checkpoint", "", "checkpoint to evaluate or run"),
    ("manifest", "", "dataset manifest to evaluate on (default: synthetic test split)"),
    ("image", "", "P6 image for infer"),
    ("dataset", "", "dataset head for infer (default: every head)"),
    ("count", "100", "synth: training scenes per dataset"),
    ("test_count", "20", "synth: test scenes per dataset"),
    ("taxonomy.path", "", "taxonomy file (default: the shipped one)"),
    ("embeddings.path", "", "word embedding file (default: generated from seed)"),
    ("embeddings.dim", "64", "dimension of generated embeddings"),
    ("data.resolution", "64", "synthetic image side"),
    ("data.max_figures", "2", "figures per synthetic scene"),
    ("data.occlusion", "false", "allow figures to overlap"),
    ("data.noise", "0.04", "synthetic pixel noise amplitude"),
    ("data.train_count", "1000", "synthetic training scenes per dataset"),
    ("data.test_count", "200", "synthetic test scenes per dataset"),
    ("data.fraction", "1.0", "fraction of the training scenes used"),
    ("data.manifests", "", "comma-separated training manifests (default: synthetic)"),
    ("backbone.widths", "16,32,64", "channels per stage"),
    ("backbone.convs_per_stage", "2", "3x3 convolutions per stage"),
    ("backbone.kernel", "3", "convolution kernel size"),
    ("backbone.output_stride", "4", "input side over feature-map side"),
    ("graph.node_dim", "128", "node feature width"),
    ("graph.gcn_layers", "3", "graph convolutions per graph"),
    ("model.mode", "intra", "none, intra or transfer"),
    ("model.heads", "coarse", "comma-separated datasets with a classifier"),
    ("model.edges", "", "transfer edges, e.g. fine>coarse,coarse>fine"),
    ("model.schemes", "feature,semantic", "transfer schemes"),
    ("model.init", "", "checkpoint to initialize matching parameters from"),
    ("train.base_lr", "0.007", "initial learning rate"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.weight_decay", "0.0005", "L2 weight decay"),
    ("train.poly_power", "0.9", "exponent of the poly schedule"),
    ("train.batch_size", "8", "images per step"),
    ("train.epochs", "10", "epochs when train.steps is 0"),
    ("train.steps", "0", "total steps (0: derive from epochs)"),
    ("train.scale_min", "0.5", "smallest augmentation scale"),
    ("train.scale_max", "2.0", "largest augmentation scale"),
    ("train.flip_prob", "0.5", "horizontal flip probability"),
    ("train.augment", "true", "enable augmentation"),
    ("gradcheck.seeds", "1,2,3,4,5", "seeds of the gradient check suite"),
    ("gradcheck.tolerance", "1e-6", "maximum relative error"),
    ("ablate.source", "fine", "source dataset of transfer arms"),
    ("ablate.target", "coarse", "dataset the arms are trained and scored on"),
    ("ablate.source_steps", "0", "steps of source training (0: train.steps)"),
    ("ablate.seeds", "0,1,2", "seeds averaged per arm"),
    ("ablate.arms", "baseline,intra,transfer:feature+semantic", "grid rows"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parse `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key is an error.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::ParseLine { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !known(k) {
            return Err(err(format!("unknown key {k}")));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("key {k} given twice")));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Merge a config file (optional), the seed environment value and flag
    /// overrides onto the defaults.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut cfg = Self::defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            // A bad run configuration is a usage problem, not a data one.
            let parsed = parse_text(&text).map_err(|e| match e {
                Error::ParseLine { line, msg } => {
                    Error::Config(format!("{}:{line}: {msg}", path.display()))
                }
                e => e,
            })?;
            cfg.values.extend(parsed);
        }
        if let Some(seed) = env_seed {
            cfg.values.insert("seed".into(), seed.trim().to_string());
        }
        for (k, v) in flags {
            if !known(k) {
                return Err(Error::Usage(format!("unknown key {k}")));
            }
            cfg.values.insert(k.clone(), v.clone());
        }
        cfg.seed()?;
        Ok(cfg)
    }

    /// Rebuild from the resolved text stored in a checkpoint.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::defaults();
        cfg.values.extend(parse_text(text)?);
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Usage(format!("unknown key {key}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Every key, one `key = value` line each, in key order.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// `None` for an empty value.
    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|v| !v.is_empty())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be {what}, got {:?}", self.str(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key, "a number")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key, "true or false")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed", "a nonnegative integer")
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    fn list_of<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        self.list(key)
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("{key}: {s:?} is not {what}")))
            })
            .collect()
    }

    pub fn seeds(&self, key: &str) -> Result<Vec<u64>> {
        let seeds = self.list_of(key, "a seed")?;
        if seeds.is_empty() {
            return Err(Error::Config(format!("{key} lists no seeds")));
        }
        Ok(seeds)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            resolution: self.usize("data.resolution")?,
            max_figures: self.usize("data.max_figures")?,
            occlusion: self.bool("data.occlusion")?,
            noise: self.f64("data.noise")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        Ok(Benchmark {
            synth: self.synth()?,
            train_count: self.usize("data.train_count")?,
            test_count: self.usize("data.test_count")?,
            seed: self.seed()?,
        })
    }

    pub fn backbone(&self) -> Result<BackboneConfig> {
        let cfg = BackboneConfig {
            widths: self.list_of("backbone.widths", "a channel count")?,
            convs_per_stage: self.usize("backbone.convs_per_stage")?,
            kernel: self.usize("backbone.kernel")?,
            output_stride: self.usize("backbone.output_stride")?,
            in_channels: 3,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The graph head reads the backbone's last stage, so its channel count
    /// follows the backbone widths.
    pub fn graph(&self) -> Result<GraphConfig> {
        Ok(GraphConfig {
            channels: self.backbone()?.out_channels(),
            node_dim: self.usize("graph.node_dim")?,
            gcn_layers: self.usize("graph.gcn_layers")?,
        })
    }

    pub fn schemes(&self) -> Result<Vec<TransferScheme>> {
        self.list_of("model.schemes", "a transfer scheme")
    }

    pub fn edges(&self) -> Result<Vec<(String, String)>> {
        self.list("model.edges")
            .iter()
            .map(|e| {
                e.split_once('>')
                    .map(|(s, t)| (s.trim().to_string(), t.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("model.edges: {e:?} is not source>target")))
            })
            .collect()
    }

    pub fn mode(&self) -> Result<GraphMode> {
        match self.str("model.mode") {
            "none" => Ok(GraphMode::None),
            "intra" => Ok(GraphMode::Intra),
            "transfer" => Ok(GraphMode::Transfer {
                edges: self.edges()?,
                schemes: self.schemes()?,
            }),
            other => Err(Error::Config(format!(
                "model.mode must be none, intra or transfer, got {other:?}"
            ))),
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let heads = self.list("model.heads");
        if heads.is_empty() {
            return Err(Error::Config("model.heads lists no dataset".into()));
        }
        Ok(ModelConfig {
            backbone: self.backbone()?,
            graph: self.graph()?,
            mode: self.mode()?,
            heads,
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            base_lr: self.f64("train.base_lr")?,
            momentum: self.f64("train.momentum")?,
            weight_decay: self.f64("train.weight_decay")?,
            poly_power: self.f64("train.poly_power")?,
            batch_size: self.usize("train.batch_size")?,
            epochs: self.usize("train.epochs")?,
            steps: self.usize("train.steps")?,
            scale_min: self.f64("train.scale_min")?,
            scale_max: self.f64("train.scale_max")?,
            flip_prob: self.f64("train.flip_prob")?,
            augment: self.bool("train.augment")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid rows: `baseline`, `intra`, `finetune` or
    /// `transfer:<scheme>+<scheme>...`.
    pub fn arms(&self) -> Result<Vec<Arm>> {
        let arms = self
            .list("ablate.arms")
            .iter()
            .map(|a| match a.as_str() {
                "baseline" => Ok(Arm::Baseline),
                "intra" => Ok(Arm::Intra),
                "finetune" => Ok(Arm::FineTune),
                t => {
                    let schemes = t
                        .strip_prefix("transfer:")
                        .ok_or_else(|| Error::Config(format!("ablate.arms: unknown arm {t:?}")))?
                        .split('+')
                        .map(str::parse)
                        .collect::<Result<Vec<TransferScheme>>>()?;
                    Ok(Arm::Transfer(schemes))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if arms.is_empty() {
            return Err(Error::Config("ablate.arms lists no arm".into()));
        }
        Ok(arms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_build_every_section() {
        let c = RunConfig::defaults();
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.backbone().unwrap(), BackboneConfig::default());
        assert_eq!(c.graph().unwrap(), GraphConfig::default());
        assert_eq!(c.synth().unwrap(), SynthConfig::default());
        assert_eq!(c.model().unwrap().mode, GraphMode::Intra);
        assert_eq!(c.arms().unwrap().len(), 3);
    }

    #[test]
    fn parse_skips_comments_and_rejects_unknown_or_repeated_keys() {
        let m = parse_text("# comment\n\ntrain.base_lr = 0.1\n  seed=3 \n").unwrap();
        assert_eq!(m["train.base_lr"], "0.1");
        assert_eq!(m["seed"], "3");
        assert!(matches!(
            parse_text("seed = 1\ntrain.lr = 2\n"),
            Err(Error::ParseLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_text("seed = 1\nseed = 2\n"),
            Err(Error::ParseLine { line: 2, .. })
        ));
        assert!(matches!(parse_text("seed\n"), Err(Error::ParseLine { line: 1, .. })));
    }

    #[test]
    fn flag_beats_env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 1\ntrain.steps = 9\n").unwrap();
        let file_only = RunConfig::resolve(Some(&path), None, &flags(&[])).unwrap();
        assert_eq!(file_only.seed().unwrap(), 1);
        let env = RunConfig::resolve(Some(&path), Some("2"), &flags(&[])).unwrap();
        assert_eq!(env.seed().unwrap(), 2);
        let flag = RunConfig::resolve(Some(&path), Some("2"), &flags(&[("seed", "3")])).unwrap();
        assert_eq!(flag.seed().unwrap(), 3);
        assert_eq!(flag.usize("train.steps").unwrap(), 9);
    }

    #[test]
    fn bad_values_name_their_key() {
        let mut c = RunConfig::defaults();
        c.set("train.base_lr", "fast").unwrap();
        let err = c.train().unwrap_err().to_string();
        assert!(err.contains("train.base_lr"), "{err}");
        assert!(RunConfig::resolve(None, Some("x"), &flags(&[])).is_err());
        assert!(c.set("nope", "1").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::defaults();
        c.set("model.edges", "fine>coarse").unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn transfer_mode_and_arms_parse() {
        let mut c = RunConfig::defaults();
        c.set("model.mode", "transfer").unwrap();
        c.set("model.edges", "fine>coarse, coarse>fine").unwrap();
        c.set("ablate.arms", "baseline,transfer:handcraft+learnable").unwrap();
        let GraphMode::Transfer { edges, schemes } = c.mode().unwrap() else {
            panic!("transfer mode expected")
        };
        assert_eq!(edges[1], ("coarse".to_string(), "fine".to_string()));
        assert_eq!(schemes, vec![TransferScheme::Feature, TransferScheme::Semantic]);
        assert_eq!(
            c.arms().unwrap()[1],
            Arm::Transfer(vec![TransferScheme::Handcraft, TransferScheme::Learnable])
        );
        c.set("model.edges", "fine-coarse").unwrap();
        assert!(c.mode().is_err());
    }
}
