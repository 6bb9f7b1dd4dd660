//! Full parsing network: backbone, optional graph head, per-dataset
//! classifiers and upsampling to input resolution.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graphnn::{
    evolve, project, reproject, transfer_round, GraphConfig, GraphHeadParams, StaticMatrices,
};
use crate::numcore::{ParamStore, Real, Tape, Var};
use crate::segnet::{backbone_forward, classify, register_classifier, upsample_bilinear, BackboneConfig};
use crate::taxonomy::{LabelTaxonomy, TransferScheme, WordEmbeddingTable};

#[derive(Clone, Debug, PartialEq)]
pub enum GraphMode {
    /// Backbone and classifier only.
    None,
    /// Intra-graph reasoning on each head's own label graph.
    Intra,
    /// Intra-graph reasoning followed by transfer along directed
    /// `(source, target)` edges.
    Transfer {
        edges: Vec<(String, String)>,
        schemes: Vec<TransferScheme>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub graph: GraphConfig,
    pub mode: GraphMode,
    /// Datasets with a classifier.
    pub heads: Vec<String>,
}

impl ModelConfig {
    /// Every dataset that needs a label graph.
    pub fn graph_datasets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |d: &String| {
            if !out.contains(d) {
                out.push(d.clone());
            }
        };
        match &self.mode {
            GraphMode::None => {}
            GraphMode::Intra => self.heads.iter().for_each(&mut push),
            GraphMode::Transfer { edges, .. } => {
                self.heads.iter().for_each(&mut push);
                for (s, t) in edges {
                    push(s);
                    push(t);
                }
            }
        }
        out
    }

    fn validate(&self, taxonomy: &LabelTaxonomy) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Config("model needs at least one head".into()));
        }
        for d in self.heads.iter().chain(self.graph_datasets().iter()) {
            taxonomy.dataset(d)?;
        }
        if let GraphMode::Transfer { edges, schemes } = &self.mode {
            if schemes.is_empty() || edges.is_empty() {
                return Err(Error::Config(
                    "transfer mode needs at least one edge and one scheme".into(),
                ));
            }
        }
        let mut g = self.graph.clone();
        g.channels = self.backbone.out_channels();
        if g != self.graph && self.mode != GraphMode::None {
            return Err(Error::Config(format!(
                "graph head expects {} channels but the backbone emits {}",
                self.graph.channels,
                self.backbone.out_channels()
            )));
        }
        Ok(())
    }
}

/// Static structure of a parsing network: configuration plus the fixed
/// adjacency and transfer matrices. Parameters live in a separate store so
/// the same network can be evaluated against perturbed copies.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub statics: StaticMatrices,
}

/// A network together with its parameters.
pub struct Model<T> {
    pub network: Network,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Build and initialize. `embeddings` is needed for the semantic scheme.
    pub fn new(
        config: ModelConfig,
        taxonomy: &LabelTaxonomy,
        embeddings: Option<&WordEmbeddingTable>,
        seed: u64,
    ) -> Result<Self> {
        config.validate(taxonomy)?;
        let mut store = ParamStore::new();
        config.backbone.register(&mut store, seed)?;
        let c = config.backbone.out_channels();
        for h in &config.heads {
            register_classifier(&mut store, h, c, taxonomy.num_labels(h)?, seed)?;
        }
        let (edges, schemes) = match &config.mode {
            GraphMode::Transfer { edges, schemes } => (edges.clone(), schemes.clone()),
            _ => (Vec::new(), Vec::new()),
        };
        let statics = if config.mode == GraphMode::None {
            StaticMatrices::default()
        } else {
            let hp = GraphHeadParams::new(config.graph.clone());
            hp.register_shared(&mut store, seed)?;
            for d in config.graph_datasets() {
                hp.register_dataset(&mut store, &d, taxonomy.num_labels(&d)?, seed)?;
            }
            for (s, t) in &edges {
                let ns = taxonomy.num_labels(s)?;
                let nt = taxonomy.num_labels(t)?;
                hp.register_transfer(&mut store, (s, ns), (t, nt), &schemes, seed)?;
            }
            StaticMatrices::build(taxonomy, embeddings, &edges, &schemes)?
        };
        Ok(Model {
            network: Network { config, statics },
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn forward(&self, tape: &mut Tape<T>, image: Var, dataset: &str) -> Result<Var> {
        self.network.forward(tape, &self.store, image, dataset)
    }
}

impl Network {
    /// Full-resolution logits `H×W×K` for `dataset`'s head.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: Var,
        dataset: &str,
    ) -> Result<Var> {
        let (h, w) = (tape.shape(image)[0], tape.shape(image).get(1).copied().unwrap_or(0));
        let feats = self.features(tape, store, image, dataset)?;
        let logits = classify(tape, store, feats, dataset)?;
        upsample_bilinear(tape, logits, h, w)
    }

    /// Backbone features, enhanced by the graph head when configured.
    pub fn features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: Var,
        dataset: &str,
    ) -> Result<Var> {
        if !self.config.heads.iter().any(|d| d == dataset) {
            return Err(Error::Config(format!("model has no head for dataset {dataset}")));
        }
        let x = backbone_forward(tape, store, &self.config.backbone, image)?;
        let layers = self.config.graph.gcn_layers;
        match &self.config.mode {
            GraphMode::None => Ok(x),
            GraphMode::Intra => {
                let adj = self.statics.adjacency_var(tape, dataset)?;
                let (g, q) = project(tape, store, x, dataset, adj)?;
                let g = evolve(tape, store, layers, &g)?;
                reproject(tape, store, x, q, &g)
            }
            GraphMode::Transfer { edges, schemes } => {
                // Only graphs feeding this head matter for its output.
                let sources: BTreeSet<&str> = edges
                    .iter()
                    .filter(|(_, t)| t == dataset)
                    .map(|(s, _)| s.as_str())
                    .collect();
                let mut graphs = Vec::new();
                let mut target_q = None;
                for (i, d) in std::iter::once(dataset).chain(sources.iter().copied()).enumerate() {
                    let adj = self.statics.adjacency_var(tape, d)?;
                    let (g, q) = project(tape, store, x, d, adj)?;
                    graphs.push(evolve(tape, store, layers, &g)?);
                    if i == 0 {
                        target_q = Some(q);
                    }
                }
                let round: Vec<(usize, usize)> = (1..graphs.len()).map(|s| (s, 0)).collect();
                let graphs = transfer_round(tape, store, &self.statics, &graphs, &round, schemes)?;
                reproject(tape, store, x, target_q.expect("target graph"), &graphs[0])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::numcore::{grad_check, GradCheckConfig, Tensor};
    use crate::rng::stream;

    fn rand_tensor(shape: &[usize], seed: u64, purpose: &str) -> Tensor<f64> {
        let mut r = stream(seed, purpose, 0);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small(mode: GraphMode, heads: &[&str]) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                widths: vec![3, 4],
                convs_per_stage: 1,
                kernel: 3,
                output_stride: 2,
                in_channels: 3,
            },
            graph: GraphConfig {
                channels: 4,
                node_dim: 5,
                gcn_layers: 3,
            },
            mode,
            heads: heads.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn embeddings(tax: &LabelTaxonomy) -> WordEmbeddingTable {
        let mut r = stream(0, "emb", 0);
        let mut t = WordEmbeddingTable::new(6);
        for tok in tax.all_tokens() {
            t.insert(tok, (0..6).map(|_| r.gen_range(-1.0..1.0)).collect())
                .unwrap();
        }
        t
    }

    #[test]
    fn zero_reprojection_matches_baseline_bitwise() {
        let tax = LabelTaxonomy::shipped();
        let base = Model::<f32>::new(small(GraphMode::None, &["coarse"]), &tax, None, 11).unwrap();
        let intra = Model::<f32>::new(small(GraphMode::Intra, &["coarse"]), &tax, None, 11).unwrap();
        let img = rand_tensor(&[8, 8, 3], 2, "img").cast::<f32>();
        let mut t1 = Tape::new();
        let i1 = t1.constant(img.clone());
        let l1 = base.forward(&mut t1, i1, "coarse").unwrap();
        let mut t2 = Tape::new();
        let i2 = t2.constant(img);
        let l2 = intra.forward(&mut t2, i2, "coarse").unwrap();
        assert_eq!(t1.value(l1), t2.value(l2));
    }

    #[test]
    fn missing_head_is_config_error() {
        let tax = LabelTaxonomy::shipped();
        let m = Model::<f64>::new(small(GraphMode::None, &["coarse"]), &tax, None, 0).unwrap();
        let mut t = Tape::new();
        let i = t.constant(Tensor::zeros(&[8, 8, 3]));
        assert!(matches!(m.forward(&mut t, i, "fine"), Err(Error::Config(_))));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let tax = LabelTaxonomy::shipped();
        let emb = embeddings(&tax);
        let transfer = GraphMode::Transfer {
            edges: vec![("fine".into(), "coarse".into()), ("coarse".into(), "fine".into())],
            schemes: vec![TransferScheme::Feature, TransferScheme::Semantic],
        };
        for seed in 1..=5 {
            for (mode, head) in [
                (GraphMode::Intra, "fine"),
                (transfer.clone(), "coarse"),
            ] {
                let mut m =
                    Model::<f64>::new(small(mode, &["coarse", "fine"]), &tax, Some(&emb), seed)
                        .unwrap();
                let (d, c) = (5, 4);
                m.store.by_name_mut(GraphHeadParams::REPROJ).unwrap().value =
                    rand_tensor(&[d, c], seed, "reproj");
                let img = rand_tensor(&[8, 8, 3], seed, "img");
                let labels: Vec<usize> = {
                    let mut r = stream(seed, "labels", 0);
                    let k = tax.num_labels(head).unwrap();
                    (0..64).map(|_| r.gen_range(0..k)).collect()
                };
                let k = tax.num_labels(head).unwrap();
                let net = m.network.clone();
                let report = grad_check(
                    &mut m.store,
                    |tape, store| {
                        let i = tape.constant(img.clone());
                        let logits = net.forward(tape, store, i, head)?;
                        let flat = tape.reshape(logits, &[64, k])?;
                        tape.cross_entropy(flat, &labels, None)
                    },
                    &GradCheckConfig {
                        seed,
                        ..GradCheckConfig::default()
                    },
                )
                .unwrap();
                assert!(report.pass, "seed {seed} {head}: {:?}", report.worst());
            }
        }
    }
}
