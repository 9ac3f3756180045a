//! Procedural multi-object scenes with part-level affordance masks and
//! instruction → ordered-step sequences.
//!
//! Every scene is generated from its own seed, `derive_seed(seed, index)`,
//! so parallel and serial runs write identical files.

mod catalog;
mod dataset;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use catalog::{
    default_rules, default_step_text, default_templates, GaussianStyle, InstructionRule,
    ObjectTemplate, PartTemplate, Shape, StepSpec,
};
pub use dataset::{Dataset, DatasetScene};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Quat, Vec3};
use crate::scene::{
    apply_transform, compose_scenes, write_ply, AffordanceMask, AffordanceSequence, AffordanceStep,
    AnnotationFile, GaussianPrimitive, GaussianScene, RigidScaleTransform, ScenePart,
};
use crate::util::{derive_seed, sha256_hex, write_atomic};

/// Samples a point on the surface of a centred shape.
fn sample_surface(shape: Shape, half: Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
    let u = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..=1.0);
    match shape {
        Shape::Box => {
            let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.random_range(0.0..total);
            let mut axis = 2;
            for (k, a) in areas.iter().enumerate() {
                if pick < *a {
                    axis = k;
                    break;
                }
                pick -= a;
            }
            let mut p = [u(rng) * half[0], u(rng) * half[1], u(rng) * half[2]];
            p[axis] = if rng.random_bool(0.5) { half[axis] } else { -half[axis] };
            p
        }
        Shape::Cylinder => {
            let r = 0.5 * (half[0] + half[1]);
            let side = TAU * r * 2.0 * half[2];
            let caps = 2.0 * std::f64::consts::PI * r * r;
            let theta = rng.random_range(0.0..TAU);
            if rng.random_range(0.0..side + caps) < side {
                [half[0] * theta.cos(), half[1] * theta.sin(), u(rng) * half[2]]
            } else {
                let rho = rng.random_range(0.0f64..1.0).sqrt();
                let z = if rng.random_bool(0.5) { half[2] } else { -half[2] };
                [half[0] * rho * theta.cos(), half[1] * rho * theta.sin(), z]
            }
        }
        Shape::Ellipsoid => {
            let n = Normal::new(0.0, 1.0).unwrap();
            let v: Vec3 = [n.sample(rng), n.sample(rng), n.sample(rng)];
            let len = crate::geom::norm(v).max(1e-12);
            [half[0] * v[0] / len, half[1] * v[1] / len, half[2] * v[2] / len]
        }
    }
}

/// One Gaussian scene per template instance with one binary mask per part.
///
/// Primitives are laid out part by part, so mask `k` covers exactly
/// `template.part_ranges()[k]`.
pub fn generate_object(template: &ObjectTemplate, seed: u64) -> (GaussianScene, Vec<AffordanceMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.04).unwrap();
    let tilt = Normal::new(0.0, 0.05).unwrap();
    let tint = Normal::new(0.0, 0.03).unwrap();
    let base = template.base_size();
    let n = template.num_primitives();
    let mut prims = Vec::with_capacity(n);
    for part in &template.parts {
        for _ in 0..part.count {
            let local = sample_surface(part.shape, part.half_extents, &mut rng);
            let position = crate::geom::add(local, part.center);
            let scale = part.style.log_scale.map(|l| base * (l + jitter.sample(&mut rng)).exp());
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
            let rotation = Quat::from_axis_angle(axis, tilt.sample(&mut rng))
                .mul(&part.style.orientation)
                .normalized()
                .unwrap_or(Quat::IDENTITY);
            let rgb = part.style.color.map(|c| (c + tint.sample(&mut rng)).clamp(0.02, 0.98));
            prims.push(GaussianPrimitive {
                position,
                rotation,
                scale,
                opacity: rng.random_range(0.6..0.95),
                sh_dc: GaussianPrimitive::sh_from_rgb(rgb),
            });
        }
    }
    let masks = template
        .part_ranges()
        .into_iter()
        .zip(&template.parts)
        .map(|(r, p)| AffordanceMask::from_indices(n, r, p.affordance.clone()))
        .collect();
    (GaussianScene::new(prims), masks)
}

/// Per-scene knobs shared by [`generate_scene`] and [`emit_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Upper bound on (rule, wording) sequences emitted per scene.
    pub sequences_per_scene: usize,
    /// Placement attempts before giving up on a scene.
    pub max_attempts: usize,
    /// Clearance kept between object bounding boxes.
    pub margin: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 3,
            max_objects: 4,
            sequences_per_scene: 8,
            max_attempts: 2000,
            margin: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.min_objects) || !(self.min_objects..=6).contains(&self.max_objects) {
            return Err(Error::Config(format!(
                "object count range {}..={} must lie within 2..=6",
                self.min_objects, self.max_objects
            )));
        }
        if self.sequences_per_scene == 0 || self.max_attempts == 0 {
            return Err(Error::Config("sequences_per_scene and max_attempts must be positive".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin {} must be non-negative", self.margin)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub category: String,
    pub transform: RigidScaleTransform,
    pub bounds: Aabb,
    pub range: std::ops::Range<usize>,
    /// Whether any emitted sequence refers to this object.
    pub referenced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub scene: GaussianScene,
    pub sequences: Vec<AffordanceSequence>,
    pub objects: Vec<PlacedObject>,
}

fn template_index(templates: &[ObjectTemplate]) -> Result<HashMap<&str, &ObjectTemplate>> {
    let mut by_name = HashMap::new();
    for t in templates {
        if t.parts.is_empty() {
            return Err(Error::Generation(format!("template '{}' has no parts", t.name)));
        }
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(Error::Generation(format!("duplicate template '{}'", t.name)));
        }
    }
    Ok(by_name)
}

/// Fails unless every step of every rule names a (category, affordance)
/// pair some template provides.
pub fn check_rules(templates: &[ObjectTemplate], rules: &[InstructionRule]) -> Result<()> {
    let by_name = template_index(templates)?;
    for rule in rules {
        if rule.steps.is_empty() || rule.steps.len() > 8 {
            return Err(Error::Generation(format!(
                "rule '{}' has {} steps, expected 1..=8",
                rule.name,
                rule.steps.len()
            )));
        }
        if rule.instructions().is_empty() {
            return Err(Error::Generation(format!("rule '{}' produces no instruction", rule.name)));
        }
        for s in &rule.steps {
            let t = by_name.get(s.category.as_str()).ok_or_else(|| {
                Error::Generation(format!(
                    "rule '{}' needs category '{}', which no template provides",
                    rule.name, s.category
                ))
            })?;
            if t.part_index(&s.affordance).is_none() {
                return Err(Error::Generation(format!(
                    "rule '{}': '{}' has no '{}' part",
                    rule.name, s.category, s.affordance
                )));
            }
        }
    }
    Ok(())
}

/// Places 2–6 objects without overlap and emits every sequence whose
/// categories are all present. With three or more objects at least one is a
/// distractor that no sequence mentions.
pub fn generate_scene(
    templates: &[ObjectTemplate],
    rules: &[InstructionRule],
    seed: u64,
    config: &SceneConfig,
) -> Result<GeneratedScene> {
    config.validate()?;
    check_rules(templates, rules)?;
    if rules.is_empty() {
        return Err(Error::Generation("empty rule set".into()));
    }
    let by_name = template_index(templates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let k = rng
        .random_range(config.min_objects..=config.max_objects)
        .min(templates.len());
    let budget = if k >= 3 { k - 1 } else { k };

    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.shuffle(&mut rng);
    let mut active: BTreeSet<String> = BTreeSet::new();
    for &r in &order {
        let mut union = active.clone();
        union.extend(rules[r].categories());
        if union.len() <= budget {
            active = union;
        }
    }
    if active.is_empty() {
        return Err(Error::Generation(format!(
            "no rule fits in a scene of {k} objects"
        )));
    }

    let mut spare: Vec<&str> = templates
        .iter()
        .map(|t| t.name.as_str())
        .filter(|n| !active.contains(*n))
        .collect();
    spare.shuffle(&mut rng);
    let mut categories: Vec<String> = active.iter().cloned().collect();
    categories.extend(spare.iter().take(k - active.len()).map(|s| s.to_string()));
    categories.shuffle(&mut rng);

    let mut candidates: Vec<(usize, String)> = rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.categories().iter().all(|c| active.contains(c)))
        .flat_map(|(i, r)| r.instructions().into_iter().map(move |s| (i, s)))
        .collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(config.sequences_per_scene);

    let (parts, objects) = place_objects(&by_name, &categories, &mut rng, seed, config)?;
    let mask_base: Vec<usize> = categories
        .iter()
        .scan(0, |acc, c| {
            let b = *acc;
            *acc += by_name[c.as_str()].parts.len();
            Some(b)
        })
        .collect();
    let (scene, masks) = compose_scenes(&parts)?;

    let mut referenced = vec![false; categories.len()];
    let sequences = candidates
        .into_iter()
        .map(|(r, instruction)| {
            let steps = rules[r]
                .steps
                .iter()
                .map(|s| {
                    let obj = categories.iter().position(|c| *c == s.category).unwrap();
                    referenced[obj] = true;
                    let part = by_name[s.category.as_str()].part_index(&s.affordance).unwrap();
                    AffordanceStep {
                        text: s.text.clone(),
                        mask: masks[mask_base[obj] + part].clone(),
                    }
                })
                .collect();
            AffordanceSequence { instruction, steps }
        })
        .collect();
    let objects = objects
        .into_iter()
        .zip(referenced)
        .map(|(o, referenced)| PlacedObject { referenced, ..o })
        .collect();
    Ok(GeneratedScene {
        scene,
        sequences,
        objects,
    })
}

/// Rejection-samples yaw, scale and floor position for each object. The
/// placement region grows by 15% after every 100 consecutive failures.
fn place_objects(
    by_name: &HashMap<&str, &ObjectTemplate>,
    categories: &[String],
    rng: &mut ChaCha8Rng,
    seed: u64,
    config: &SceneConfig,
) -> Result<(Vec<ScenePart>, Vec<PlacedObject>)> {
    let built: Vec<(GaussianScene, Vec<AffordanceMask>)> = categories
        .iter()
        .enumerate()
        .map(|(j, c)| generate_object(by_name[c.as_str()], derive_seed(seed, j as u64 + 1)))
        .collect();
    let footprint: f64 = built
        .iter()
        .map(|(s, _)| {
            let b = s.bounds().unwrap();
            let w = b.max[0] - b.min[0] + config.margin;
            let d = b.max[1] - b.min[1] + config.margin;
            w.max(d).powi(2)
        })
        .sum();
    let mut half_width = 0.75 * footprint.sqrt();

    let mut parts = Vec::new();
    let mut objects: Vec<PlacedObject> = Vec::new();
    let mut attempts = 0;
    let mut offset = 0;
    for ((scene, masks), category) in built.into_iter().zip(categories) {
        let mut failures = 0;
        let (transform, bounds) = loop {
            attempts += 1;
            if attempts > config.max_attempts {
                return Err(Error::Generation(format!(
                    "could not place {} objects without overlap in {} attempts",
                    categories.len(),
                    config.max_attempts
                )));
            }
            let yaw = Quat::from_axis_angle([0.0, 0.0, 1.0], rng.random_range(0.0..TAU));
            let s = rng.random_range(0.8..1.2);
            let at = [
                rng.random_range(-half_width..half_width),
                rng.random_range(-half_width..half_width),
            ];
            let posed = apply_transform(&scene, &RigidScaleTransform::new([0.0; 3], yaw, s)?)
                .bounds()
                .unwrap();
            let c = posed.center();
            let t = RigidScaleTransform::new([at[0] - c[0], at[1] - c[1], -posed.min[2]], yaw, s)?;
            let bounds = apply_transform(&scene, &t).bounds().unwrap();
            let clear = objects
                .iter()
                .all(|o| !o.bounds.inflate(config.margin).overlaps(&bounds));
            if clear {
                break (t, bounds);
            }
            failures += 1;
            if failures % 100 == 0 {
                half_width *= 1.15;
            }
        };
        let n = scene.len();
        objects.push(PlacedObject {
            category: category.clone(),
            transform,
            bounds,
            range: offset..offset + n,
            referenced: false,
        });
        offset += n;
        parts.push(ScenePart {
            scene,
            transform,
            masks,
        });
    }
    Ok((parts, objects))
}

/// Dataset generation settings; echoed verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Fraction of scenes assigned to the train split.
    pub split_ratio: f64,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenes: 8,
            seed: 0,
            split_ratio: 0.75,
            scene: SceneConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::Config("scenes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::Config(format!("split_ratio {} outside [0, 1]", self.split_ratio)));
        }
        self.scene.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub scene: String,
    pub annotation: String,
    pub split: Split,
    pub num_primitives: usize,
    pub num_objects: usize,
    pub num_sequences: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub scenes: usize,
    pub train: usize,
    pub val: usize,
    pub sequences: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DataConfig,
    pub entries: Vec<ManifestEntry>,
    pub counts: Counts,
    /// SHA-256 over every scene and annotation file, in entry order.
    pub content_hash: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::parse(
                format!("{}: line {} column {}", path.display(), e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialisation cannot fail")
    }
}

/// Train/val assignment: ids ordered by the SHA-256 of the id, the first
/// `round(ratio · n)` go to train.
pub fn split_ids(ids: &[String], ratio: f64) -> BTreeMap<String, Split> {
    let mut keyed: Vec<(String, &String)> = ids.iter().map(|id| (sha256_hex(id.as_bytes()), id)).collect();
    keyed.sort();
    let train = (ratio * ids.len() as f64).round() as usize;
    keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, id))| (id.clone(), if i < train { Split::Train } else { Split::Val }))
        .collect()
}

/// Generates `config.scenes` scenes with the built-in catalog and writes
/// `scenes/*.ply`, `annotations/*.json` and `manifest.json` under `out_dir`.
pub fn emit_dataset(config: &DataConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    emit_dataset_with(config, &default_templates(), &default_rules(), out_dir)
}

pub fn emit_dataset_with(
    config: &DataConfig,
    templates: &[ObjectTemplate],
    rules: &[InstructionRule],
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    config.validate()?;
    let out = out_dir.as_ref();
    for sub in ["scenes", "annotations"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let generated: Vec<GeneratedScene> = (0..config.scenes)
        .into_par_iter()
        .map(|i| generate_scene(templates, rules, derive_seed(config.seed, i as u64), &config.scene))
        .collect::<Result<_>>()?;

    let ids: Vec<String> = (0..config.scenes).map(|i| format!("scene_{i:03}")).collect();
    let split = split_ids(&ids, config.split_ratio);
    let mut hasher_input = Vec::new();
    let mut entries = Vec::new();
    let mut counts = Counts::default();
    for (id, g) in ids.iter().zip(&generated) {
        let scene_rel = format!("scenes/{id}.ply");
        let ann_rel = format!("annotations/{id}.json");
        let ply = write_ply(&g.scene);
        let ann = AnnotationFile::from_sequences(format!("../{scene_rel}"), &g.sequences).to_json();
        write_atomic(&out.join(&scene_rel), &ply)?;
        write_atomic(&out.join(&ann_rel), ann.as_bytes())?;
        hasher_input.extend_from_slice(&ply);
        hasher_input.extend_from_slice(ann.as_bytes());

        let s = split[id];
        counts.scenes += 1;
        match s {
            Split::Train => counts.train += 1,
            Split::Val => counts.val += 1,
        }
        counts.sequences += g.sequences.len();
        counts.steps += g.sequences.iter().map(|q| q.len()).sum::<usize>();
        entries.push(ManifestEntry {
            id: id.clone(),
            scene: scene_rel,
            annotation: ann_rel,
            split: s,
            num_primitives: g.scene.len(),
            num_objects: g.objects.len(),
            num_sequences: g.sequences.len(),
        });
    }
    let manifest = Manifest {
        config: config.clone(),
        entries,
        counts,
        content_hash: sha256_hex(&hasher_input),
    };
    write_atomic(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}
