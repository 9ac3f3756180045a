use std::io::{Read, Write};

use super::{Image, WeightRecord};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"SSWT";

/// Debug dump: magic, then `(x: u16, y: u16, gaussian: u32, weight: f32)`
/// little-endian records until end of stream.
pub fn write_weight_dump(records: &[WeightRecord], out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(WEIGHT_MAGIC)?;
    let mut buf = Vec::with_capacity(records.len() * 12);
    for r in records {
        buf.extend_from_slice(&(r.x as u16).to_le_bytes());
        buf.extend_from_slice(&(r.y as u16).to_le_bytes());
        buf.extend_from_slice(&r.gaussian.to_le_bytes());
        buf.extend_from_slice(&(r.weight as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_weight_dump(input: &mut impl Read) -> Result<Vec<WeightRecord>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<weight dump>", e))?;
    if bytes.len() < 4 || &bytes[..4] != WEIGHT_MAGIC {
        return Err(Error::parse("byte 0", "bad weight dump magic"));
    }
    let body = &bytes[4..];
    if body.len() % 12 != 0 {
        return Err(Error::parse(
            format!("byte {}", 4 + body.len() / 12 * 12),
            "truncated weight record",
        ));
    }
    Ok(body
        .chunks_exact(12)
        .map(|c| WeightRecord {
            x: u16::from_le_bytes([c[0], c[1]]) as u32,
            y: u16::from_le_bytes([c[2], c[3]]) as u32,
            gaussian: u32::from_le_bytes(c[4..8].try_into().unwrap()),
            weight: f32::from_le_bytes(c[8..12].try_into().unwrap()) as f64,
        })
        .collect())
}

/// Binary 8-bit PPM (P6).
pub fn write_ppm(image: &Image, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    out.write_all(&bytes)
}
