//! Synthetic word embeddings whose geometry mirrors the label hierarchy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::taxonomy::{hierarchy_projection, LabelTaxonomy, WordEmbeddingTable};

/// Norm of the noise added to a child relative to its parent's norm.
pub const CHILD_NOISE_RATIO: f64 = 0.3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Remove the components along `basis` (orthonormal) and normalize.
fn orthogonal_unit(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for b in basis {
        let d = dot(&v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
    unit(v)
}

/// Tokens of the coarsest dataset get orthonormal vectors (as far as `dim`
/// allows). Each token first seen in a finer dataset is its parent label's
/// vector plus noise orthogonal to it with norm `0.3 × |parent|`.
pub fn emit_embeddings(taxonomy: &LabelTaxonomy, seed: u64, dim: usize) -> Result<WordEmbeddingTable> {
    if dim < 8 {
        return Err(Error::Config(format!("embedding dim must be at least 8, got {dim}")));
    }
    let mut r = stream(seed, "embeddings", 0);
    let draw = |r: &mut StreamRng| -> Vec<f64> {
        (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()
    };
    let mut table = WordEmbeddingTable::new(dim);
    let order = taxonomy.by_granularity();
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for (level, id) in order.iter().enumerate() {
        let ds = taxonomy.dataset(id)?;
        let parent_ds = (level > 0).then(|| order[level - 1]);
        let map = match parent_ds {
            Some(p) => Some(hierarchy_projection(taxonomy, id, p)?),
            None => None,
        };
        for (j, tokens) in ds.tokens.iter().enumerate() {
            for tok in tokens {
                if table.get(tok).is_some() {
                    continue;
                }
                let v = match (&map, parent_ds) {
                    (Some(map), Some(p)) => {
                        let pds = taxonomy.dataset(p)?;
                        let pl = map[j];
                        let parent = table.label_vector(&pds.tokens[pl], &pds.labels[pl])?;
                        let pn = dot(&parent, &parent).sqrt();
                        let noise = orthogonal_unit(draw(&mut r), &[unit(parent.clone())]);
                        parent
                            .iter()
                            .zip(&noise)
                            .map(|(a, b)| a + CHILD_NOISE_RATIO * pn * b)
                            .collect()
                    }
                    _ => {
                        let v = if roots.len() < dim {
                            orthogonal_unit(draw(&mut r), &roots)
                        } else {
                            unit(draw(&mut r))
                        };
                        roots.push(v.clone());
                        v
                    }
                };
                table.insert(tok, v)?;
            }
        }
    }
    Ok(table)
}
