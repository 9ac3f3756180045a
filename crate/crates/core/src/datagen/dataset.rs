use std::path::{Path, PathBuf};

use super::{Manifest, Split, MANIFEST_FILE};
use crate::error::Result;
use crate::scene::{load_scene, AffordanceSequence, AnnotationFile, GaussianScene};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetScene {
    pub id: String,
    pub split: Split,
    pub scene: GaussianScene,
    pub sequences: Vec<AffordanceSequence>,
}

/// Scenes and their decoded sequences, loaded from a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub scenes: Vec<DatasetScene>,
}

impl Dataset {
    /// Accepts a manifest file or a directory holding `manifest.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        let manifest = Manifest::read(&manifest_path)?;
        let scenes = manifest
            .entries
            .iter()
            .map(|e| load_entry(&e.id, e.split, &root.join(&e.annotation)))
            .collect::<Result<_>>()?;
        Ok(Dataset { root, scenes })
    }

    /// Builds a dataset from bare annotation files, all assigned to `split`.
    pub fn from_annotations(paths: &[PathBuf], split: Split) -> Result<Self> {
        let scenes = paths
            .iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                load_entry(&id, split, p)
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            root: PathBuf::from("."),
            scenes,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetScene> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Every sequence of every scene in `split`, with its scene index.
    pub fn samples(&self, split: Split) -> Vec<(usize, &AffordanceSequence)> {
        self.scenes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .flat_map(|(i, s)| s.sequences.iter().map(move |q| (i, q)))
            .collect()
    }
}

fn load_entry(id: &str, split: Split, annotation: &Path) -> Result<DatasetScene> {
    let doc = AnnotationFile::read(annotation)?;
    let scene = load_scene(doc.scene_path(annotation))?;
    let sequences = doc.decode(scene.len())?;
    Ok(DatasetScene {
        id: id.to_string(),
        split,
        scene,
        sequences,
    })
}
