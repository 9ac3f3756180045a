//! Mask encodings used in annotation files.
//!
//! Binary masks are run-length encoded as `start:len` runs over sorted
//! primitive indices (`"0:3,5:2"`). Soft masks are quantised to 16-bit fixed
//! point and stored as base64 of little-endian `u16`s.

use base64::Engine;

use crate::error::{Error, Result};

pub fn encode_rle(scores: &[f64]) -> String {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < scores.len() {
        if scores[i] > 0.0 {
            let start = i;
            while i < scores.len() && scores[i] > 0.0 {
                i += 1;
            }
            runs.push(format!("{start}:{}", i - start));
        } else {
            i += 1;
        }
    }
    runs.join(",")
}

pub fn decode_rle(rle: &str, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    let mut next_free = 0usize;
    for run in rle.split(',').map(str::trim).filter(|r| !r.is_empty()) {
        let (start, len) = run
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Annotation(format!("malformed RLE run '{run}'")))?;
        if len == 0 {
            return Err(Error::Annotation(format!("empty RLE run '{run}'")));
        }
        if start < next_free {
            return Err(Error::Annotation(format!(
                "RLE runs unsorted or overlapping at '{run}'"
            )));
        }
        let end = start + len;
        if end > n {
            return Err(Error::Annotation(format!(
                "RLE run '{run}' references index {} but the scene has {n} primitives",
                end - 1
            )));
        }
        out[start..end].iter_mut().for_each(|v| *v = 1.0);
        next_free = end;
    }
    Ok(out)
}

pub fn quantize_b16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_soft_b16(scores: &[f64]) -> String {
    let bytes: Vec<u8> = scores
        .iter()
        .flat_map(|&s| quantize_b16(s).to_le_bytes())
        .collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_soft_b16(text: &str, n: usize) -> Result<Vec<f64>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| Error::Annotation(format!("bad soft_b16 payload: {e}")))?;
    if bytes.len() != 2 * n {
        return Err(Error::Annotation(format!(
            "soft_b16 payload holds {} values, scene has {n} primitives",
            bytes.len() / 2
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect())
}
