//! Display colors for predicted masks, one `label R G B` line per label.

use std::collections::BTreeMap;

use taxograph::taxonomy::Dataset;
use taxograph::{Error, Result};

pub const SHIPPED_PALETTE: &str = include_str!("../../core/data/palette.txt");

pub fn parse_palette(text: &str) -> Result<BTreeMap<String, [u8; 3]>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::ParseLine { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, r, g, b] = fields[..] else {
            return Err(err(format!("expected `label R G B`, got {line:?}")));
        };
        let mut rgb = [0u8; 3];
        for (c, s) in rgb.iter_mut().zip([r, g, b]) {
            *c = s
                .parse()
                .map_err(|_| err(format!("color component {s:?} is not in 0..=255")))?;
        }
        if out.insert(label.to_string(), rgb).is_some() {
            return Err(err(format!("label {label} given twice")));
        }
    }
    Ok(out)
}

/// Colors indexed by the dataset's label order.
pub fn dataset_colors(palette: &BTreeMap<String, [u8; 3]>, dataset: &Dataset) -> Result<Vec<[u8; 3]>> {
    dataset
        .labels
        .iter()
        .map(|l| {
            palette
                .get(l)
                .copied()
                .ok_or_else(|| Error::Data(format!("palette has no color for {l}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use taxograph::taxonomy::LabelTaxonomy;

    #[test]
    fn shipped_palette_covers_every_label() {
        let p = parse_palette(SHIPPED_PALETTE).unwrap();
        let tax = LabelTaxonomy::shipped();
        for ds in tax.datasets() {
            assert_eq!(dataset_colors(&p, ds).unwrap().len(), ds.num_labels());
        }
        assert_eq!(p["background"], [0, 0, 0]);
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert!(matches!(
            parse_palette("a 1 2 3\nb 1 2\n"),
            Err(Error::ParseLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_palette("a 1 2 300\n"),
            Err(Error::ParseLine { line: 1, .. })
        ));
    }
}
