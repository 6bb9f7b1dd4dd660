//! Label vocabularies, their hierarchy and body-structure connectivity.
//!
//! The taxonomy file is line oriented:
//!
//! ```text
//! [labels <dataset>]        one label per line, optional embedding tokens after it
//! [edges <dataset>]         unordered label pairs that are anatomically adjacent
//! [hierarchy <coarse>:<fine>]  "coarse_label fine_label" containment pairs
//! ```
//!
//! `#` starts a comment. Background must be the first label of every dataset.

mod embeddings;
mod matrices;

pub use embeddings::{load_embeddings, parse_embeddings, WordEmbeddingTable};
pub use matrices::{
    build_adjacency, handcraft_transfer, hierarchy_projection, semantic_transfer, AdjacencyMatrix,
    TransferMatrix, TransferScheme,
};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const BACKGROUND: &str = "background";

/// The taxonomy shipped with the crate.
pub const SHIPPED_TAXONOMY: &str = include_str!("../../data/taxonomy.txt");

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub labels: Vec<String>,
    /// Embedding tokens per label (the label itself when none are listed).
    pub tokens: Vec<Vec<String>>,
    /// Unordered adjacency pairs, stored with the smaller index first.
    pub edges: BTreeSet<(usize, usize)>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// Containment pairs between two datasets, as `(coarse index, fine index)`.
#[derive(Clone, Debug)]
pub struct HierarchySection {
    pub coarse: String,
    pub fine: String,
    pub pairs: BTreeSet<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct LabelTaxonomy {
    datasets: Vec<Dataset>,
    hierarchy: Vec<HierarchySection>,
}

enum Section {
    None,
    Labels(usize),
    Edges(usize),
    Hierarchy(usize),
}

impl LabelTaxonomy {
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tax = LabelTaxonomy {
            datasets: Vec::new(),
            hierarchy: Vec::new(),
        };
        // Edges and hierarchy pairs may name labels of datasets declared later,
        // so they are resolved after the whole file has been read.
        let mut raw_edges: Vec<(usize, usize, String, String)> = Vec::new();
        let mut raw_pairs: Vec<(usize, usize, String, String)> = Vec::new();
        let mut edge_owner: Vec<String> = Vec::new();
        let mut section = Section::None;

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::ParseLine { line: line_no, msg };
            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| perr(format!("unterminated section header {line:?}")))?;
                let mut parts = header.split_whitespace();
                let kind = parts.next().unwrap_or("");
                let arg = parts
                    .next()
                    .ok_or_else(|| perr(format!("section {kind:?} needs an argument")))?;
                if parts.next().is_some() {
                    return Err(perr(format!("trailing text in section header {line:?}")));
                }
                section = match kind {
                    "labels" => {
                        if tax.datasets.iter().any(|d| d.id == arg) {
                            return Err(perr(format!("dataset {arg} declared twice")));
                        }
                        tax.datasets.push(Dataset {
                            id: arg.to_string(),
                            labels: Vec::new(),
                            tokens: Vec::new(),
                            edges: BTreeSet::new(),
                            index: HashMap::new(),
                        });
                        Section::Labels(tax.datasets.len() - 1)
                    }
                    "edges" => {
                        edge_owner.push(arg.to_string());
                        Section::Edges(edge_owner.len() - 1)
                    }
                    "hierarchy" => {
                        let (coarse, fine) = arg
                            .split_once(':')
                            .ok_or_else(|| perr(format!("hierarchy needs <coarse>:<fine>, got {arg}")))?;
                        tax.hierarchy.push(HierarchySection {
                            coarse: coarse.to_string(),
                            fine: fine.to_string(),
                            pairs: BTreeSet::new(),
                        });
                        Section::Hierarchy(tax.hierarchy.len() - 1)
                    }
                    other => return Err(perr(format!("unknown section kind {other:?}"))),
                };
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match section {
                Section::None => return Err(perr("content outside of a section".into())),
                Section::Labels(d) => {
                    let ds = &mut tax.datasets[d];
                    let label = fields[0].to_string();
                    if ds.index.contains_key(&label) {
                        return Err(perr(format!("duplicate label {label} in {}", ds.id)));
                    }
                    let tokens = if fields.len() > 1 {
                        fields[1..].iter().map(|s| s.to_string()).collect()
                    } else {
                        vec![label.clone()]
                    };
                    ds.index.insert(label.clone(), ds.labels.len());
                    ds.labels.push(label);
                    ds.tokens.push(tokens);
                }
                Section::Edges(e) | Section::Hierarchy(e) => {
                    if fields.len() != 2 {
                        return Err(perr(format!("expected a label pair, got {line:?}")));
                    }
                    let entry = (e, line_no, fields[0].to_string(), fields[1].to_string());
                    if matches!(section, Section::Edges(_)) {
                        raw_edges.push(entry);
                    } else {
                        raw_pairs.push(entry);
                    }
                }
            }
        }

        for (e, line, a, b) in raw_edges {
            let perr = |msg: String| Error::ParseLine { line, msg };
            let d = tax
                .dataset_position(&edge_owner[e])
                .ok_or_else(|| perr(format!("edges for unknown dataset {}", edge_owner[e])))?;
            let ds = &mut tax.datasets[d];
            let ia = ds
                .label_index(&a)
                .ok_or_else(|| perr(format!("unknown label {a} in dataset {}", ds.id)))?;
            let ib = ds
                .label_index(&b)
                .ok_or_else(|| perr(format!("unknown label {b} in dataset {}", ds.id)))?;
            if ia == ib {
                return Err(perr(format!("self-loop on {a}")));
            }
            ds.edges.insert((ia.min(ib), ia.max(ib)));
        }
        for (h, line, a, b) in raw_pairs {
            let perr = |msg: String| Error::ParseLine { line, msg };
            let sec = &tax.hierarchy[h];
            let coarse = tax
                .dataset(&sec.coarse)
                .map_err(|_| perr(format!("hierarchy names unknown dataset {}", sec.coarse)))?;
            let fine = tax
                .dataset(&sec.fine)
                .map_err(|_| perr(format!("hierarchy names unknown dataset {}", sec.fine)))?;
            let ic = coarse
                .label_index(&a)
                .ok_or_else(|| perr(format!("unknown label {a} in dataset {}", coarse.id)))?;
            let jf = fine
                .label_index(&b)
                .ok_or_else(|| perr(format!("unknown label {b} in dataset {}", fine.id)))?;
            tax.hierarchy[h].pairs.insert((ic, jf));
        }
        tax.validate()?;
        Ok(tax)
    }

    fn validate(&self) -> Result<()> {
        for ds in &self.datasets {
            if ds.labels.first().map(String::as_str) != Some(BACKGROUND) {
                return Err(Error::Taxonomy(format!(
                    "dataset {} must list {BACKGROUND} first",
                    ds.id
                )));
            }
        }
        for sec in &self.hierarchy {
            let fine = self.dataset(&sec.fine)?;
            for (j, label) in fine.labels.iter().enumerate().skip(1) {
                if !sec.pairs.iter().any(|&(_, f)| f == j) {
                    return Err(Error::Taxonomy(format!(
                        "label {label} of {} has no parent in {}",
                        sec.fine, sec.coarse
                    )));
                }
            }
        }
        Ok(())
    }

    fn dataset_position(&self, id: &str) -> Option<usize> {
        self.datasets.iter().position(|d| d.id == id)
    }

    pub fn dataset(&self, id: &str) -> Result<&Dataset> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Config(format!("unknown dataset {id}")))
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn dataset_ids(&self) -> Vec<&str> {
        self.datasets.iter().map(|d| d.id.as_str()).collect()
    }

    pub fn hierarchy(&self) -> &[HierarchySection] {
        &self.hierarchy
    }

    pub fn num_labels(&self, id: &str) -> Result<usize> {
        Ok(self.dataset(id)?.num_labels())
    }

    /// Hierarchy section linking `a` and `b` in either order.
    pub fn section_between(&self, a: &str, b: &str) -> Option<&HierarchySection> {
        self.hierarchy
            .iter()
            .find(|s| (s.coarse == a && s.fine == b) || (s.coarse == b && s.fine == a))
    }

    /// Datasets ordered from fewest to most labels.
    pub fn by_granularity(&self) -> Vec<&str> {
        let mut ids: Vec<&Dataset> = self.datasets.iter().collect();
        ids.sort_by_key(|d| d.num_labels());
        ids.into_iter().map(|d| d.id.as_str()).collect()
    }

    /// Distinct embedding tokens over all labels, in first-appearance order.
    pub fn all_tokens(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ds in &self.datasets {
            for toks in &ds.tokens {
                for t in toks {
                    if seen.insert(t.as_str()) {
                        out.push(t.as_str());
                    }
                }
            }
        }
        out
    }
}
