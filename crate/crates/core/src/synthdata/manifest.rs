//! Tab-separated dataset manifests: `image_path<TAB>mask_path<TAB>dataset_id`.
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are skipped; `#split=<tag>` sets the split tag.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::taxonomy::LabelTaxonomy;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub dataset_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Option<String>,
    /// Non-fatal findings, e.g. an empty manifest.
    pub warnings: Vec<String>,
}

pub fn load_manifest(path: impl AsRef<Path>, taxonomy: &LabelTaxonomy) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = DatasetManifest::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| Error::ParseLine { line: line_no, msg };
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(tag) = rest.trim().strip_prefix("split=") {
                out.split = Some(tag.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        let [image, mask, dataset] = cols[..] else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", cols.len())));
        };
        if taxonomy.dataset(dataset).is_err() {
            return Err(err(format!("unknown dataset {dataset}")));
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let (image, mask) = (resolve(image), resolve(mask));
        for (what, p) in [("image", &image), ("mask", &mask)] {
            if !p.is_file() {
                return Err(err(format!("{what} {} does not exist", p.display())));
            }
        }
        out.records.push(ManifestRecord {
            image,
            mask,
            dataset_id: dataset.to_string(),
        });
    }
    if out.records.is_empty() {
        out.warnings
            .push(format!("manifest {} has no records", path.display()));
    }
    Ok(out)
}

/// Write records with paths relative to the manifest directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    if let Some(split) = &manifest.split {
        writeln!(text, "#split={split}").expect("string write");
    }
    for r in &manifest.records {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        writeln!(text, "{}\t{}\t{}", rel(&r.image), rel(&r.mask), r.dataset_id)
            .expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
