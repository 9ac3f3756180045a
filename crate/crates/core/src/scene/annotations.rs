use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rle::{decode_rle, decode_soft_b16, encode_rle, encode_soft_b16};
use super::{AffordanceMask, AffordanceSequence, AffordanceStep};
use crate::error::{Error, Result};

/// On-disk annotation document (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    /// Scene PLY path, relative to the annotation file.
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_primitives: Option<usize>,
    pub masks: BTreeMap<String, MaskEntry>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    #[serde(rename = "type")]
    pub affordance_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_b16: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub instruction: String,
    pub steps: Vec<StepEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub text: String,
    pub mask: String,
}

impl MaskEntry {
    pub fn from_mask(mask: &AffordanceMask) -> Self {
        let (rle, soft_b16) = if mask.is_binary() {
            (Some(encode_rle(&mask.scores)), None)
        } else {
            (None, Some(encode_soft_b16(&mask.scores)))
        };
        MaskEntry {
            affordance_type: mask.affordance_type.clone(),
            rle,
            soft_b16,
        }
    }

    pub fn decode(&self, n: usize) -> Result<AffordanceMask> {
        let scores = match (&self.rle, &self.soft_b16) {
            (Some(r), None) => decode_rle(r, n)?,
            (None, Some(s)) => decode_soft_b16(s, n)?,
            _ => {
                return Err(Error::Annotation(
                    "mask must have exactly one of 'rle' or 'soft_b16'".into(),
                ))
            }
        };
        Ok(AffordanceMask {
            scores,
            affordance_type: self.affordance_type.clone(),
        })
    }
}

impl AnnotationFile {
    /// Builds a document from sequences, deduplicating identical masks.
    pub fn from_sequences(scene: impl Into<String>, sequences: &[AffordanceSequence]) -> Self {
        let mut masks = BTreeMap::new();
        let mut ids: Vec<(MaskEntry, String)> = Vec::new();
        let mut samples = Vec::new();
        let mut n = None;
        for seq in sequences {
            let mut steps = Vec::new();
            for step in &seq.steps {
                n.get_or_insert(step.mask.len());
                let entry = MaskEntry::from_mask(&step.mask);
                let id = match ids.iter().find(|(e, _)| *e == entry) {
                    Some((_, id)) => id.clone(),
                    None => {
                        let id = format!("m{:03}", ids.len());
                        ids.push((entry.clone(), id.clone()));
                        masks.insert(id.clone(), entry);
                        id
                    }
                };
                steps.push(StepEntry {
                    text: step.text.clone(),
                    mask: id,
                });
            }
            samples.push(SampleEntry {
                instruction: seq.instruction.clone(),
                steps,
            });
        }
        AnnotationFile {
            scene: scene.into(),
            num_primitives: n,
            masks,
            samples,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serialisation cannot fail")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn scene_path(&self, annotation_path: &Path) -> PathBuf {
        annotation_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.scene)
    }

    /// Decodes every sample against a scene of `n` primitives.
    pub fn decode(&self, n: usize) -> Result<Vec<AffordanceSequence>> {
        if let Some(declared) = self.num_primitives {
            if declared != n {
                return Err(Error::Annotation(format!(
                    "annotation declares {declared} primitives, scene has {n}"
                )));
            }
        }
        let mut decoded = BTreeMap::new();
        for (id, entry) in &self.masks {
            decoded.insert(
                id.as_str(),
                entry
                    .decode(n)
                    .map_err(|e| Error::Annotation(format!("mask '{id}': {e}")))?,
            );
        }
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.steps.is_empty() {
                    return Err(Error::Annotation(format!("sample {i} has an empty steps list")));
                }
                let steps = s
                    .steps
                    .iter()
                    .map(|st| {
                        let mask = decoded.get(st.mask.as_str()).ok_or_else(|| {
                            Error::Annotation(format!(
                                "sample {i} references unknown mask '{}'",
                                st.mask
                            ))
                        })?;
                        Ok(AffordanceStep {
                            text: st.text.clone(),
                            mask: mask.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AffordanceSequence {
                    instruction: s.instruction.clone(),
                    steps,
                })
            })
            .collect()
    }
}

/// Reads an annotation file and decodes it against its referenced scene.
///
/// The primitive count comes from `num_primitives` when present, otherwise
/// from the scene PLY named in the document.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AffordanceSequence>> {
    let path = path.as_ref();
    let file = AnnotationFile::read(path)?;
    let n = match file.num_primitives {
        Some(n) => n,
        None => super::load_scene(file.scene_path(path))?.len(),
    };
    file.decode(n)
}
