//! Learning-free lifting of 2D feature maps onto Gaussians.
//!
//! `f_i = Σ w_i(v,p) F_p^(v) / Σ w_i(v,p)` over every (view, pixel) record of
//! Gaussian `i`. Gaussians without records get a zero row and coverage 0.

mod bank;
mod featureize;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{default_view_ring, render_weights, rgb_from_weights, ViewWeights};
use crate::scene::{write_ply, GaussianScene};
use crate::util::{sha256_hex, KahanSum};

pub use bank::{FeatureBank, BANK_MAGIC};
pub use featureize::{upsample_bilinear, Featureizer, ProceduralFeatureizer, PROCEDURAL_DIM};

/// `H × W × d` feature grid produced from one view, row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub data: Vec<f64>,
    pub view_id: usize,
}

impl FeatureMap {
    pub fn at(&self, x: u32, y: u32) -> &[f64] {
        let p = (y as usize * self.width as usize + x as usize) * self.dim;
        &self.data[p..p + self.dim]
    }
}

/// Per-Gaussian mean of pixel features, weighted by compositing weight, over
/// all records of all views.
///
/// Views are accumulated in ascending `view_id` order and pixel-major order
/// within a view, so the result does not depend on the order of `views`.
pub fn lift_features(n: usize, views: &[(&FeatureMap, &ViewWeights)]) -> Result<FeatureBank> {
    let Some((first, _)) = views.first() else {
        return Err(Error::Invalid("lifting needs at least one view".into()));
    };
    let dim = first.dim;
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&k| views[k].0.view_id);
    for pair in order.windows(2) {
        if views[pair[0]].0.view_id == views[pair[1]].0.view_id {
            return Err(Error::Invalid(format!(
                "duplicate view id {}",
                views[pair[0]].0.view_id
            )));
        }
    }
    let mut num = vec![KahanSum::default(); n * dim];
    let mut den = vec![KahanSum::default(); n];
    for k in order {
        let (map, weights) = views[k];
        if map.dim != dim {
            return Err(Error::Shape(format!(
                "view {} has {} channels, expected {dim}",
                map.view_id, map.dim
            )));
        }
        if map.width != weights.width || map.height != weights.height {
            return Err(Error::Shape(format!(
                "view {}: feature map {}x{} does not match weights {}x{}",
                map.view_id, map.width, map.height, weights.width, weights.height
            )));
        }
        for r in &weights.records {
            let g = r.gaussian as usize;
            if g >= n {
                return Err(Error::Invalid(format!(
                    "weight record references gaussian {g}, scene has {n}"
                )));
            }
            let f = map.at(r.x, r.y);
            den[g].add(r.weight);
            for (acc, &v) in num[g * dim..(g + 1) * dim].iter_mut().zip(f) {
                acc.add(r.weight * v);
            }
        }
    }
    let coverage: Vec<f64> = den.iter().map(KahanSum::value).collect();
    let mut data = vec![0.0; n * dim];
    for g in 0..n {
        if coverage[g] > 0.0 {
            for c in 0..dim {
                data[g * dim + c] = num[g * dim + c].value() / coverage[g];
            }
        }
    }
    FeatureBank::new(n, dim, data, coverage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftConfig {
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub background: [f64; 3],
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            views: 8,
            width: 256,
            height: 256,
            background: [0.0; 3],
        }
    }
}

/// Rendered views of a scene on the default ring: feature maps at pixel
/// resolution and the weights used to render them.
pub fn render_views(
    scene: &GaussianScene,
    config: &LiftConfig,
    featureizer: &dyn Featureizer,
) -> Result<Vec<(FeatureMap, ViewWeights)>> {
    let cams = default_view_ring(scene, config.views, (config.width, config.height))?;
    cams.par_iter()
        .enumerate()
        .map(|(v, cam)| {
            let weights = render_weights(scene, cam);
            let image = rgb_from_weights(scene, &weights, config.background);
            let raw = featureizer.featureize(&image, v);
            let map = upsample_bilinear(&raw, cam.width, cam.height);
            Ok((map, weights))
        })
        .collect()
}

/// Cache key: scene content, view count, featureizer and resolution.
pub fn cache_key(scene: &GaussianScene, config: &LiftConfig, featureizer: &dyn Featureizer) -> String {
    let scene_hash = sha256_hex(&write_ply(scene));
    let key = format!(
        "{scene_hash}|m={}|{}|{}x{}|bg={:?}",
        config.views,
        featureizer.id(),
        config.width,
        config.height,
        config.background
    );
    sha256_hex(key.as_bytes())[..24].to_string()
}

/// Renders, featureizes and lifts; with `cache_dir`, reuses a stored bank
/// for the same key.
///
/// The bank is rounded to `f32` (the on-disk precision) whether or not it
/// came from the cache, so hits and misses are bit-identical.
pub fn lift_pipeline(
    scene: &GaussianScene,
    config: &LiftConfig,
    featureizer: &dyn Featureizer,
    cache_dir: Option<&Path>,
) -> Result<FeatureBank> {
    let path = cache_dir.map(|d| d.join(format!("{}.ssfb", cache_key(scene, config, featureizer))));
    if let Some(p) = &path {
        if p.exists() {
            let bank = FeatureBank::load(p)?;
            if bank.n() == scene.len() && bank.dim() == featureizer.dim() {
                return Ok(bank);
            }
        }
    }
    let views = render_views(scene, config, featureizer)?;
    let pairs: Vec<(&FeatureMap, &ViewWeights)> = views.iter().map(|(m, w)| (m, w)).collect();
    let bank = lift_features(scene.len(), &pairs)?.rounded_to_f32();
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        bank.save(p)?;
    }
    Ok(bank)
}
