use std::fmt;
use std::str::FromStr;

use super::embeddings::WordEmbeddingTable;
use super::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` for one dataset's connectivity graph.
#[derive(Clone, Debug)]
pub struct AdjacencyMatrix {
    pub values: Tensor<f64>,
    pub dataset_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransferScheme {
    Handcraft,
    Learnable,
    Feature,
    Semantic,
}

impl TransferScheme {
    pub const ALL: [TransferScheme; 4] = [
        TransferScheme::Handcraft,
        TransferScheme::Learnable,
        TransferScheme::Feature,
        TransferScheme::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferScheme::Handcraft => "handcraft",
            TransferScheme::Learnable => "learnable",
            TransferScheme::Feature => "feature",
            TransferScheme::Semantic => "semantic",
        }
    }
}

impl fmt::Display for TransferScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferScheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown transfer scheme {s:?}")))
    }
}

/// Cross-taxonomy weights, rows indexed by target labels and columns by
/// source labels.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub values: Tensor<f64>,
    pub scheme: TransferScheme,
    pub source_dataset: String,
    pub target_dataset: String,
}

pub fn build_adjacency(taxonomy: &LabelTaxonomy, dataset_id: &str) -> Result<AdjacencyMatrix> {
    let ds = taxonomy.dataset(dataset_id)?;
    let n = ds.num_labels();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(i, j) in &ds.edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    Ok(AdjacencyMatrix {
        values: Tensor::new(&[n, n], a)?,
        dataset_id: dataset_id.to_string(),
    })
}

/// 0/1 matrix marking hierarchy links between target and source labels, in
/// either direction of containment, plus background↔background.
pub fn handcraft_transfer(
    taxonomy: &LabelTaxonomy,
    src_dataset: &str,
    tgt_dataset: &str,
) -> Result<TransferMatrix> {
    let ns = taxonomy.num_labels(src_dataset)?;
    let nt = taxonomy.num_labels(tgt_dataset)?;
    let section = taxonomy.section_between(src_dataset, tgt_dataset).ok_or_else(|| {
        Error::Config(format!(
            "no hierarchy between {src_dataset} and {tgt_dataset}"
        ))
    })?;
    let mut m = vec![0.0; nt * ns];
    m[0] = 1.0;
    for &(c, f) in &section.pairs {
        let (t, s) = if section.coarse == tgt_dataset && section.fine == src_dataset {
            (c, f)
        } else {
            (f, c)
        };
        m[t * ns + s] = 1.0;
    }
    Ok(TransferMatrix {
        values: Tensor::new(&[nt, ns], m)?,
        scheme: TransferScheme::Handcraft,
        source_dataset: src_dataset.to_string(),
        target_dataset: tgt_dataset.to_string(),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Row-wise softmax of cosine similarities between label embeddings.
pub fn semantic_transfer(
    taxonomy: &LabelTaxonomy,
    embeddings: &WordEmbeddingTable,
    src_dataset: &str,
    tgt_dataset: &str,
) -> Result<TransferMatrix> {
    let src = taxonomy.dataset(src_dataset)?;
    let tgt = taxonomy.dataset(tgt_dataset)?;
    let sv = embeddings.label_vectors(src)?;
    let tv = embeddings.label_vectors(tgt)?;
    let (nt, ns) = (tv.len(), sv.len());
    let mut m = Vec::with_capacity(nt * ns);
    for t in &tv {
        let sims: Vec<f64> = sv.iter().map(|s| cosine(t, s)).collect();
        let mx = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = sims.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        m.extend(ex.into_iter().map(|e| e / z));
    }
    Ok(TransferMatrix {
        values: Tensor::new(&[nt, ns], m)?,
        scheme: TransferScheme::Semantic,
        source_dataset: src_dataset.to_string(),
        target_dataset: tgt_dataset.to_string(),
    })
}

fn direct_projection(taxonomy: &LabelTaxonomy, fine: &str, coarse: &str) -> Result<Option<Vec<usize>>> {
    let Some(section) = taxonomy
        .hierarchy()
        .iter()
        .find(|s| s.coarse == coarse && s.fine == fine)
    else {
        return Ok(None);
    };
    let fds = taxonomy.dataset(fine)?;
    let cds = taxonomy.dataset(coarse)?;
    let mut map = vec![0usize; fds.num_labels()];
    for (j, label) in fds.labels.iter().enumerate().skip(1) {
        let parents: Vec<usize> = section
            .pairs
            .iter()
            .filter(|&&(_, f)| f == j)
            .map(|&(c, _)| c)
            .collect();
        match parents[..] {
            [p] => map[j] = p,
            [] => {
                return Err(Error::Taxonomy(format!(
                    "{fine} label {label} has no parent in {coarse}"
                )))
            }
            _ => {
                let names: Vec<&str> = parents.iter().map(|&p| cds.labels[p].as_str()).collect();
                return Err(Error::Taxonomy(format!(
                    "{fine} label {label} has several parents in {coarse}: {}",
                    names.join(", ")
                )));
            }
        }
    }
    Ok(Some(map))
}

/// Total map from `fine_dataset` label indices to `coarse_dataset` label
/// indices (background to background). Uses a direct hierarchy section when
/// present, otherwise composes through one intermediate dataset.
pub fn hierarchy_projection(
    taxonomy: &LabelTaxonomy,
    fine_dataset: &str,
    coarse_dataset: &str,
) -> Result<Vec<usize>> {
    let n = taxonomy.num_labels(fine_dataset)?;
    taxonomy.dataset(coarse_dataset)?;
    if fine_dataset == coarse_dataset {
        return Ok((0..n).collect());
    }
    if let Some(map) = direct_projection(taxonomy, fine_dataset, coarse_dataset)? {
        return Ok(map);
    }
    for mid in taxonomy.dataset_ids() {
        if mid == fine_dataset || mid == coarse_dataset {
            continue;
        }
        let lower = direct_projection(taxonomy, fine_dataset, mid)?;
        let upper = direct_projection(taxonomy, mid, coarse_dataset)?;
        if let (Some(lower), Some(upper)) = (lower, upper) {
            return Ok(lower.into_iter().map(|m| upper[m]).collect());
        }
    }
    Err(Error::Taxonomy(format!(
        "no hierarchy path from {fine_dataset} to {coarse_dataset}"
    )))
}
