//! Binary PNM codecs: P6 for images, P5 for label masks (gray value = label).

use super::LabelMask;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// `H×W×3` image in [0, 1] → P6 bytes, each channel rounded to 8 bits.
pub fn encode_image(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        &[h, w, 3] => (h, w),
        s => return Err(crate::error::Error::Dimension(format!("image must be H×W×3, got {s:?}"))),
    };
    let mut out = header("P6", w, h);
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = header("P5", mask.width, mask.height);
    out.extend_from_slice(&mask.data);
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (w, h, start) = parse_header(bytes, b"P6")?;
    let payload = payload(bytes, start, w * h * 3)?;
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(&[h, w, 3], data)
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMask> {
    let (w, h, start) = parse_header(bytes, b"P5")?;
    let payload = payload(bytes, start, w * h)?;
    LabelMask::new(h, w, payload.to_vec())
}

/// Color rendering of a mask through a per-label palette (P6 bytes).
pub fn mask_to_color(mask: &LabelMask, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    let mut out = header("P6", mask.width, mask.height);
    for &v in &mask.data {
        let c = palette
            .get(v as usize)
            .ok_or_else(|| Error::Data(format!("no palette color for label {v}")))?;
        out.extend_from_slice(c);
    }
    Ok(out)
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::ParseByte {
            offset: bytes.len(),
            msg: format!("payload truncated: expected {len} bytes from offset {start}"),
        });
    }
    if bytes.len() > end {
        return Err(Error::ParseByte {
            offset: end,
            msg: format!("{} trailing bytes after payload", bytes.len() - end),
        });
    }
    Ok(&bytes[start..end])
}

/// Returns (width, height, payload offset).
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::ParseByte {
            offset: 0,
            msg: format!("expected magic {}", String::from_utf8_lossy(magic)),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each field; at least one separator.
        let before = pos;
        loop {
            match bytes.get(pos) {
                Some(b' ' | b'\t' | b'\n' | b'\r') => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == before {
            return Err(Error::ParseByte {
                offset: pos,
                msg: "expected whitespace in header".into(),
            });
        }
        let digits_start = pos;
        while matches!(bytes.get(pos), Some(b'0'..=b'9')) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][k];
        if pos == digits_start {
            return Err(Error::ParseByte {
                offset: pos,
                msg: format!("expected {name}"),
            });
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::ParseByte {
            offset: digits_start,
            msg: format!("{name} out of range"),
        })?;
        if *field == 0 {
            return Err(Error::ParseByte {
                offset: digits_start,
                msg: format!("{name} must be positive"),
            });
        }
    }
    if fields[2] != 255 {
        return Err(Error::ParseByte {
            offset: pos,
            msg: format!("maxval {} unsupported, only 255", fields[2]),
        });
    }
    match bytes.get(pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => pos += 1,
        _ => {
            return Err(Error::ParseByte {
                offset: pos,
                msg: "expected single whitespace before payload".into(),
            })
        }
    }
    if fields[0].checked_mul(fields[1]).map_or(true, |n| n > 1 << 28) {
        return Err(Error::ParseByte {
            offset: pos,
            msg: format!("image {}×{} too large", fields[0], fields[1]),
        });
    }
    Ok((fields[0], fields[1], pos))
}
