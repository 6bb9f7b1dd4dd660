use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

/// Token vectors in word2vec text layout: a `count dim` header, then one
/// `token v1 … v_dim` line per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        WordEmbeddingTable {
            dim,
            tokens: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "embedding for {token} has {} values, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(token) {
            return Err(Error::Data(format!("duplicate embedding token {token}")));
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Mean of the label's token vectors.
    pub fn label_vector(&self, tokens: &[String], label: &str) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for tok in tokens {
            let v = self.get(tok).ok_or_else(|| {
                Error::Data(format!("no embedding for token {tok} of label {label}"))
            })?;
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Data(format!(
                    "zero-norm embedding for token {tok} of label {label}"
                )));
            }
            acc.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
        }
        let n = tokens.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Label vectors for every label of a dataset; all missing labels are
    /// reported together.
    pub fn label_vectors(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(dataset.num_labels());
        let mut missing = Vec::new();
        for (label, toks) in dataset.labels.iter().zip(&dataset.tokens) {
            match self.label_vector(toks, label) {
                Ok(v) => out.push(v),
                Err(Error::Data(msg)) if msg.starts_with("no embedding") => {
                    missing.push(label.as_str())
                }
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "missing embeddings for labels of {}: {}",
                dataset.id,
                missing.join(", ")
            )));
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (tok, v) in self.iter() {
            s.push_str(tok);
            for x in v {
                // Shortest representation that parses back to the same f64.
                write!(s, " {x:?}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_embeddings(text: &str) -> Result<WordEmbeddingTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::ParseLine {
        line: 1,
        msg: "empty embedding file".into(),
    })?;
    let hdr: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, line: usize| {
        s.parse::<usize>().map_err(|_| Error::ParseLine {
            line,
            msg: format!("expected a non-negative integer, got {s:?}"),
        })
    };
    if hdr.len() != 2 {
        return Err(Error::ParseLine {
            line: 1,
            msg: "header must be \"count dim\"".into(),
        });
    }
    let count = parse_usize(hdr[0], 1)?;
    let dim = parse_usize(hdr[1], 1)?;
    if dim == 0 {
        return Err(Error::ParseLine {
            line: 1,
            msg: "dimension must be positive".into(),
        });
    }
    let mut table = WordEmbeddingTable::new(dim);
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 1 {
            return Err(Error::ParseLine {
                line: line_no,
                msg: format!("expected token and {dim} values, got {} fields", fields.len()),
            });
        }
        let vector = fields[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::ParseLine {
                        line: line_no,
                        msg: format!("bad value {s:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if table.get(fields[0]).is_some() {
            return Err(Error::Data(format!(
                "duplicate embedding token {} at line {line_no}",
                fields[0]
            )));
        }
        table.insert(fields[0], vector)?;
    }
    if table.len() != count {
        return Err(Error::ParseLine {
            line: 1,
            msg: format!("header announces {count} entries, file has {}", table.len()),
        });
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<WordEmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}
