//! Gaussian scenes, affordance masks, rigid-plus-scale transforms and file I/O.

mod annotations;
mod ply;
pub mod rle;

pub use annotations::{
    load_annotations, AnnotationFile, MaskEntry, SampleEntry, StepEntry,
};
pub use ply::{load_scene, read_ply, save_scene, write_ply, PLY_RECORD_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Quat, Vec3};

/// Degree-0 spherical-harmonic normalisation constant.
pub const SH_C0: f64 = 0.28209479177387814;

/// The 18 affordance types of the benchmark vocabulary.
pub const AFFORDANCE_TYPES: [&str; 18] = [
    "grasp",
    "contain",
    "lift",
    "open",
    "lay",
    "sit",
    "support",
    "wrap_grasp",
    "pour",
    "move",
    "display",
    "push",
    "pull",
    "listen",
    "wear",
    "press",
    "cut",
    "stab",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quat,
    pub scale: Vec3,
    pub opacity: f64,
    /// Degree-0 SH coefficients (`f_dc_*`).
    pub sh_dc: Vec3,
}

impl GaussianPrimitive {
    /// RGB colour in `[0, 1]` used at render time.
    pub fn rgb(&self) -> Vec3 {
        self.sh_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
    }

    /// Inverse of [`GaussianPrimitive::rgb`] for colours strictly inside `(0, 1)`.
    pub fn sh_from_rgb(rgb: Vec3) -> Vec3 {
        rgb.map(|c| (c - 0.5) / SH_C0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .position
            .iter()
            .chain(self.scale.iter())
            .chain(self.sh_dc.iter())
            .chain(self.rotation.to_array().iter())
            .all(|v| v.is_finite())
            && self.opacity.is_finite();
        if !finite {
            return Err(Error::Invalid("non-finite primitive field".into()));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "rotation not unit norm ({})",
                self.rotation.norm()
            )));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invalid(format!(
                "non-positive scale {:?}",
                self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Invalid(format!("opacity {} outside [0,1]", self.opacity)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    /// Optional per-primitive object instance id.
    pub object_labels: Option<Vec<u32>>,
}

impl GaussianScene {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        GaussianScene {
            primitives,
            object_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Invalid("scene has no primitives".into()));
        }
        if let Some(labels) = &self.object_labels {
            if labels.len() != self.len() {
                return Err(Error::Invalid(format!(
                    "{} object labels for {} primitives",
                    labels.len(),
                    self.len()
                )));
            }
        }
        self.primitives.iter().try_for_each(|p| p.validate())
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.primitives.iter().map(|p| &p.position))
    }

    /// Bounding sphere centred on the AABB centre, radius to the farthest mean.
    ///
    /// Both quantities are order independent, so permuting primitives leaves
    /// them bit-identical.
    pub fn bounding_sphere(&self) -> Option<(Vec3, f64)> {
        let center = self.bounds()?.center();
        let radius = self
            .primitives
            .iter()
            .map(|p| geom::norm(geom::sub(p.position, center)))
            .fold(0.0f64, f64::max);
        Some((center, radius))
    }

    /// Reorders primitives so that output index `i` holds input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GaussianScene {
        GaussianScene {
            primitives: perm.iter().map(|&i| self.primitives[i].clone()).collect(),
            object_labels: self
                .object_labels
                .as_ref()
                .map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMask {
    pub scores: Vec<f64>,
    pub affordance_type: String,
}

impl AffordanceMask {
    pub fn zeros(n: usize, affordance_type: impl Into<String>) -> Self {
        AffordanceMask {
            scores: vec![0.0; n],
            affordance_type: affordance_type.into(),
        }
    }

    pub fn from_indices(
        n: usize,
        indices: impl IntoIterator<Item = usize>,
        affordance_type: impl Into<String>,
    ) -> Self {
        let mut m = Self::zeros(n, affordance_type);
        for i in indices {
            m.scores[i] = 1.0;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.scores.iter().all(|&s| s == 0.0 || s == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.scores.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self
            .scores
            .iter()
            .find(|s| !(s.is_finite() && (0.0..=1.0).contains(*s)))
        {
            return Err(Error::Invalid(format!("mask score {bad} outside [0,1]")));
        }
        Ok(())
    }

    pub fn permuted(&self, perm: &[usize]) -> AffordanceMask {
        AffordanceMask {
            scores: perm.iter().map(|&i| self.scores[i]).collect(),
            affordance_type: self.affordance_type.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceStep {
    pub text: String,
    pub mask: AffordanceMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceSequence {
    pub instruction: String,
    pub steps: Vec<AffordanceStep>,
}

impl AffordanceSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn masks(&self) -> Vec<AffordanceMask> {
        self.steps.iter().map(|s| s.mask.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::Annotation("sequence has no steps".into()))?;
        let n = first.mask.len();
        for s in &self.steps {
            if s.mask.len() != n {
                return Err(Error::Annotation(format!(
                    "mask lengths differ within a sequence ({} vs {n})",
                    s.mask.len()
                )));
            }
            s.mask.validate()?;
        }
        Ok(())
    }
}

/// `x ↦ s·R·x + t` applied to positions, with rotations composed on the left
/// and scales multiplied by `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidScaleTransform {
    pub translation: Vec3,
    pub rotation: Quat,
    pub uniform_scale: f64,
}

impl Default for RigidScaleTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidScaleTransform {
    pub const IDENTITY: RigidScaleTransform = RigidScaleTransform {
        translation: [0.0; 3],
        rotation: Quat::IDENTITY,
        uniform_scale: 1.0,
    };

    pub fn new(translation: Vec3, rotation: Quat, uniform_scale: f64) -> Result<Self> {
        let t = RigidScaleTransform {
            translation,
            rotation,
            uniform_scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(translation: Vec3) -> Self {
        RigidScaleTransform {
            translation,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uniform_scale.is_finite() && self.uniform_scale > 0.0) {
            return Err(Error::Invalid(format!(
                "uniform scale must be positive, got {}",
                self.uniform_scale
            )));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid("transform rotation not unit norm".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        geom::add(
            geom::scale(self.rotation.rotate(p), self.uniform_scale),
            self.translation,
        )
    }

    /// The transform equivalent to applying `self` first and then `next`.
    pub fn then(&self, next: &RigidScaleTransform) -> RigidScaleTransform {
        RigidScaleTransform {
            translation: next.apply_point(self.translation),
            rotation: next
                .rotation
                .mul(&self.rotation)
                .normalized()
                .unwrap_or(Quat::IDENTITY),
            uniform_scale: next.uniform_scale * self.uniform_scale,
        }
    }
}

pub fn apply_transform(scene: &GaussianScene, t: &RigidScaleTransform) -> GaussianScene {
    if t.is_identity() {
        return scene.clone();
    }
    let primitives = scene
        .primitives
        .iter()
        .map(|p| GaussianPrimitive {
            position: t.apply_point(p.position),
            rotation: t
                .rotation
                .mul(&p.rotation)
                .normalized()
                .unwrap_or(p.rotation),
            scale: geom::scale(p.scale, t.uniform_scale),
            opacity: p.opacity,
            sh_dc: p.sh_dc,
        })
        .collect();
    GaussianScene {
        primitives,
        object_labels: scene.object_labels.clone(),
    }
}

/// One object of a composition: its scene, placement and annotated masks.
pub struct ScenePart {
    pub scene: GaussianScene,
    pub transform: RigidScaleTransform,
    pub masks: Vec<AffordanceMask>,
}

/// Concatenates transformed parts; masks are shifted by each part's offset and
/// zero-padded to the total length. Object labels are set to the part index.
pub fn compose_scenes(parts: &[ScenePart]) -> Result<(GaussianScene, Vec<AffordanceMask>)> {
    let total: usize = parts.iter().map(|p| p.scene.len()).sum();
    let mut primitives = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut masks = Vec::new();
    let mut offset = 0;
    for (part_idx, part) in parts.iter().enumerate() {
        let n = part.scene.len();
        for m in &part.masks {
            if m.len() != n {
                return Err(Error::Shape(format!(
                    "part {part_idx}: mask of length {} for {n} primitives",
                    m.len()
                )));
            }
            let mut scores = vec![0.0; total];
            scores[offset..offset + n].copy_from_slice(&m.scores);
            masks.push(AffordanceMask {
                scores,
                affordance_type: m.affordance_type.clone(),
            });
        }
        primitives.extend(apply_transform(&part.scene, &part.transform).primitives);
        labels.extend(std::iter::repeat_n(part_idx as u32, n));
        offset += n;
    }
    Ok((
        GaussianScene {
            primitives,
            object_labels: Some(labels),
        },
        masks,
    ))
}

/// Random valid scene for tests and benchmarks.
pub fn random_scene(n: usize, seed: u64) -> GaussianScene {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..n)
        .map(|_| GaussianPrimitive {
            position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            rotation: Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalized()
            .unwrap(),
            scale: [rng.random_range(0.01..0.1), rng.random_range(0.01..0.1), rng.random_range(0.01..0.1)],
            opacity: rng.random_range(0.0..1.0),
            sh_dc: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        })
        .collect();
    GaussianScene::new(prims)
}
