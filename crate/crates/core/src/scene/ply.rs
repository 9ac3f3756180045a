//! 3DGS-style PLY reader/writer.
//!
//! Reads ASCII and binary little-endian files with arbitrary extra vertex
//! properties; writes binary little-endian with the 14 required float
//! properties (plus `object_id` when labels are present).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GaussianPrimitive, GaussianScene};
use crate::error::{Error, Result};
use crate::geom::Quat;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// Bytes per vertex record written by [`write_ply`] without object labels.
pub const PLY_RECORD_SIZE: usize = REQUIRED.len() * 4;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(format!("byte {pos}"), "unterminated PLY header"))?;
        let raw = &bytes[pos..pos + end];
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(format!("line {}", line_no + 1), "header is not UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        line_no += 1;
        let loc = || format!("line {line_no}");
        pos += end + 1;
        if line_no == 1 {
            if line != "ply" {
                return Err(Error::parse(loc(), "missing 'ply' magic"));
            }
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    other => {
                        return Err(Error::parse(
                            loc(),
                            format!("unsupported format {:?}", other.unwrap_or("")),
                        ))
                    }
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(loc(), "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(loc(), "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let ty = words
                    .next()
                    .ok_or_else(|| Error::parse(loc(), "property without type"))?;
                if ty == "list" {
                    return Err(Error::parse(loc(), "list properties are not supported"));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::parse(loc(), format!("unknown property type {ty}")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(loc(), "property without name"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(loc(), "property before any element"))?
                    .props
                    .push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(loc(), format!("unexpected header keyword {other}")))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse("header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: pos,
        body_line: line_no,
    })
}

pub fn read_ply(bytes: &[u8]) -> Result<GaussianScene> {
    let header = parse_header(bytes)?;
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse("header", "no 'vertex' element"))?;
    if header.elements[..vidx].iter().any(|e| e.count > 0) {
        return Err(Error::parse(
            "header",
            "non-empty elements before 'vertex' are not supported",
        ));
    }
    let vertex = &header.elements[vidx];
    let mut slots = [usize::MAX; REQUIRED.len()];
    for (slot, name) in slots.iter_mut().zip(REQUIRED) {
        *slot = vertex
            .props
            .iter()
            .position(|(p, _)| p == name)
            .ok_or_else(|| Error::parse("header", format!("missing required property '{name}'")))?;
    }
    let label_slot = vertex.props.iter().position(|(p, _)| p == "object_id");

    let n = vertex.count;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    match header.format {
        Format::BinaryLe => {
            let stride: usize = vertex.props.iter().map(|(_, t)| t.size()).sum();
            let mut offset = header.body_offset;
            for _ in 0..n {
                if offset + stride > bytes.len() {
                    return Err(Error::parse(
                        format!("byte {offset}"),
                        "truncated binary vertex record",
                    ));
                }
                let mut row = Vec::with_capacity(vertex.props.len());
                let mut o = offset;
                for (_, ty) in &vertex.props {
                    row.push(ty.read_le(&bytes[o..o + ty.size()]));
                    o += ty.size();
                }
                rows.push(row);
                offset += stride;
            }
        }
        Format::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_offset..])
                .map_err(|_| Error::parse(format!("byte {}", header.body_offset), "ASCII body is not UTF-8"))?;
            let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for _ in 0..n {
                let (i, line) = lines.next().ok_or_else(|| {
                    Error::parse(format!("line {}", header.body_line + 1), "missing vertex rows")
                })?;
                let line_no = header.body_line + i + 1;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|w| {
                        w.parse::<f64>().map_err(|_| {
                            Error::parse(format!("line {line_no}"), format!("bad number '{w}'"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if row.len() != vertex.props.len() {
                    return Err(Error::parse(
                        format!("line {line_no}"),
                        format!("expected {} values, found {}", vertex.props.len(), row.len()),
                    ));
                }
                rows.push(row);
            }
        }
    }

    let mut primitives = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if label_slot.is_some() { n } else { 0 });
    for (i, row) in rows.iter().enumerate() {
        let v: Vec<f64> = slots.iter().map(|&s| row[s]).collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::parse(
                format!("vertex {i}"),
                format!("non-finite value in '{}'", REQUIRED[k]),
            ));
        }
        // quaternions already unit within f32 precision are kept verbatim so
        // that load∘save∘load is a fixpoint
        let raw = Quat::new(v[10], v[11], v[12], v[13]);
        let rotation = if (raw.norm() - 1.0).abs() <= 1e-6 {
            raw
        } else {
            raw.normalized()
                .ok_or_else(|| Error::parse(format!("vertex {i}"), "zero-norm rotation"))?
        };
        primitives.push(GaussianPrimitive {
            position: [v[0], v[1], v[2]],
            sh_dc: [v[3], v[4], v[5]],
            opacity: v[6].clamp(0.0, 1.0),
            scale: [v[7], v[8], v[9]],
            rotation,
        });
        if let Some(s) = label_slot {
            labels.push(row[s] as u32);
        }
    }
    Ok(GaussianScene {
        primitives,
        object_labels: label_slot.map(|_| labels),
    })
}

pub fn write_ply(scene: &GaussianScene) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in REQUIRED {
        header.push_str(&format!("property float {name}\n"));
    }
    if scene.object_labels.is_some() {
        header.push_str("property int object_id\n");
    }
    header.push_str("end_header\n");
    let record = PLY_RECORD_SIZE + if scene.object_labels.is_some() { 4 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + scene.len() * record);
    out.extend_from_slice(header.as_bytes());
    for (i, p) in scene.primitives.iter().enumerate() {
        let r = p.rotation;
        let vals = [
            p.position[0], p.position[1], p.position[2], p.sh_dc[0], p.sh_dc[1], p.sh_dc[2],
            p.opacity, p.scale[0], p.scale[1], p.scale[2], r.w, r.x, r.y, r.z,
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(labels) = &scene.object_labels {
            out.extend_from_slice(&(labels[i] as i32).to_le_bytes());
        }
    }
    out
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ply(&bytes).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_ply(scene);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
