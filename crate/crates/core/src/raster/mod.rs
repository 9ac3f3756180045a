//! Tile-based software splatting with per-pixel compositing weights.
//!
//! For pixel `p` and Gaussians sorted front to back,
//! `α_i = min(o_i · exp(-½ dᵀ Σ⁻¹ d), 0.99)` and
//! `w_i = α_i · Π_{j<i} (1 - α_j)`. Compositing stops once transmittance
//! drops below `1e-4`; records with `w ≤ 1/255` are not kept.

mod camera;
mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};
use crate::scene::{GaussianPrimitive, GaussianScene};

pub use camera::{default_view_ring, Camera};
pub use io::{read_weight_dump, write_ppm, write_weight_dump, WEIGHT_MAGIC};

pub const TILE: u32 = 16;

/// Splatting constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSettings {
    pub alpha_max: f64,
    /// Added to both diagonal entries of every screen covariance (px²).
    pub lowpass: f64,
    pub min_transmittance: f64,
    /// Records with weight at or below this are dropped.
    pub weight_cutoff: f64,
    /// Screen-space support in standard deviations.
    pub sigma_extent: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            alpha_max: 0.99,
            lowpass: 0.3,
            min_transmittance: 1e-4,
            weight_cutoff: 1.0 / 255.0,
            sigma_extent: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScreenGaussian {
    pub mean2d: [f64; 2],
    /// Symmetric covariance `[a, b, c]` for `[[a, b], [b, c]]`, in px².
    pub cov2d: [f64; 3],
    pub conic: [f64; 3],
    pub depth: f64,
    pub source_index: usize,
    pub opacity: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the support box.
    pub bbox: [i64; 4],
}

impl ScreenGaussian {
    pub fn covers(&self, x: i64, y: i64) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2] && y >= self.bbox[1] && y <= self.bbox[3]
    }

    pub fn alpha_at(&self, x: f64, y: f64, alpha_max: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        (self.opacity * power.exp()).min(alpha_max)
    }
}

/// EWA projection of one primitive, or `None` when culled.
pub fn project_gaussian(
    g: &GaussianPrimitive,
    source_index: usize,
    cam: &Camera,
    settings: &RasterSettings,
) -> Option<ScreenGaussian> {
    let pc = cam.world_to_camera(g.position);
    let z = pc[2];
    if !(z > cam.near && z < cam.far) {
        return None;
    }
    let u = cam.fx * pc[0] / z + cam.cx;
    let v = cam.fy * pc[1] / z + cam.cy;

    let m = g.rotation.to_mat3();
    let s2: Vec3 = g.scale.map(|s| s * s);
    // Σ = M diag(s²) Mᵀ, then into camera space.
    let mut sigma = [[0.0; 3]; 3];
    for (i, row) in sigma.iter_mut().enumerate() {
        for (j, out) in row.iter_mut().enumerate() {
            *out = (0..3).map(|k| m[i][k] * s2[k] * m[j][k]).sum();
        }
    }
    let w = &cam.rotation;
    let cov_cam = geom::mat_mul(&geom::mat_mul(w, &sigma), &geom::transpose(w));
    let j = [
        [cam.fx / z, 0.0, -cam.fx * pc[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * pc[1] / (z * z)],
    ];
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += j[r][k] * cov_cam[k][l] * j[c][l];
                }
            }
            cov[r][c] = acc;
        }
    }
    let a = cov[0][0] + settings.lowpass;
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    let c = cov[1][1] + settings.lowpass;
    let det = a * c - b * b;
    assert!(det > 0.0, "screen covariance not positive definite");
    let conic = [c / det, -b / det, a / det];

    let ex = settings.sigma_extent * a.sqrt();
    let ey = settings.sigma_extent * c.sqrt();
    let bbox = [
        (u - ex).ceil() as i64,
        (v - ey).ceil() as i64,
        (u + ex).floor() as i64,
        (v + ey).floor() as i64,
    ];
    if bbox[2] < 0 || bbox[3] < 0 || bbox[0] > cam.width as i64 - 1 || bbox[1] > cam.height as i64 - 1 || bbox[0] > bbox[2] || bbox[1] > bbox[3] {
        return None;
    }
    Some(ScreenGaussian {
        mean2d: [u, v],
        cov2d: [a, b, c],
        conic,
        depth: z,
        source_index,
        opacity: g.opacity,
        bbox,
    })
}

/// Projects every primitive and sorts front to back, ties by index.
pub fn project_scene(
    scene: &GaussianScene,
    cam: &Camera,
    settings: &RasterSettings,
) -> Vec<ScreenGaussian> {
    let mut out: Vec<ScreenGaussian> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam, settings))
        .collect();
    out.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightRecord {
    pub x: u32,
    pub y: u32,
    pub gaussian: u32,
    pub weight: f64,
}

/// All weight records of one view, pixel-major (row by row), front to back
/// within a pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewWeights {
    pub width: u32,
    pub height: u32,
    pub records: Vec<WeightRecord>,
    /// `records[offsets[p]..offsets[p + 1]]` belong to pixel `p = y·width + x`.
    pub offsets: Vec<usize>,
    /// Transmittance left after compositing, per pixel.
    pub t_final: Vec<f64>,
}

impl ViewWeights {
    pub fn pixel(&self, x: u32, y: u32) -> &[WeightRecord] {
        let p = (y * self.width + x) as usize;
        &self.records[self.offsets[p]..self.offsets[p + 1]]
    }

    /// `Σ_p w_i(p)` for every Gaussian index below `n`.
    pub fn total_per_gaussian(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for r in &self.records {
            out[r.gaussian as usize] += r.weight;
        }
        out
    }
}

struct PixelResult {
    hits: Vec<(u32, f64)>,
    t_final: f64,
}

fn composite_pixel(
    sorted: &[ScreenGaussian],
    candidates: &[u32],
    x: i64,
    y: i64,
    settings: &RasterSettings,
) -> PixelResult {
    let mut t = 1.0;
    let mut hits = Vec::new();
    for &k in candidates {
        let g = &sorted[k as usize];
        if !g.covers(x, y) {
            continue;
        }
        let alpha = g.alpha_at(x as f64, y as f64, settings.alpha_max);
        let w = alpha * t;
        if w > settings.weight_cutoff {
            hits.push((g.source_index as u32, w));
        }
        t *= 1.0 - alpha;
        if t < settings.min_transmittance {
            break;
        }
    }
    PixelResult { hits, t_final: t }
}

/// Per-pixel compositing weights for one view.
pub fn render_weights(scene: &GaussianScene, cam: &Camera) -> ViewWeights {
    render_weights_with(scene, cam, &RasterSettings::default())
}

pub fn render_weights_with(
    scene: &GaussianScene,
    cam: &Camera,
    settings: &RasterSettings,
) -> ViewWeights {
    let sorted = project_scene(scene, cam, settings);
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, g) in sorted.iter().enumerate() {
        let tx0 = (g.bbox[0].max(0) as u32) / TILE;
        let ty0 = (g.bbox[1].max(0) as u32) / TILE;
        let tx1 = (g.bbox[2].min(w as i64 - 1) as u32) / TILE;
        let ty1 = (g.bbox[3].min(h as i64 - 1) as u32) / TILE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }

    let tiles: Vec<Vec<(usize, PixelResult)>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, cand)| {
            let tx = t as u32 % tiles_x;
            let ty = t as u32 / tiles_x;
            let mut out = Vec::with_capacity((TILE * TILE) as usize);
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    let res = composite_pixel(&sorted, cand, x as i64, y as i64, settings);
                    out.push(((y * w + x) as usize, res));
                }
            }
            out
        })
        .collect();

    let npix = cam.num_pixels();
    let mut per_pixel: Vec<Option<PixelResult>> = (0..npix).map(|_| None).collect();
    for tile in tiles {
        for (p, res) in tile {
            per_pixel[p] = Some(res);
        }
    }
    let mut records = Vec::new();
    let mut offsets = Vec::with_capacity(npix + 1);
    let mut t_final = Vec::with_capacity(npix);
    for (p, res) in per_pixel.into_iter().enumerate() {
        let res = res.expect("every pixel belongs to a tile");
        offsets.push(records.len());
        let (x, y) = (p as u32 % w, p as u32 / w);
        records.extend(res.hits.into_iter().map(|(g, weight)| WeightRecord {
            x,
            y,
            gaussian: g,
            weight,
        }));
        t_final.push(res.t_final);
    }
    offsets.push(records.len());
    ViewWeights {
        width: w,
        height: h,
        records,
        offsets,
        t_final,
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Vec3) -> Image {
        Image {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Blends primitive colours with the weights of [`render_weights`], plus
/// `T_final · background`.
pub fn render_rgb(scene: &GaussianScene, cam: &Camera, background: Vec3) -> Image {
    let weights = render_weights(scene, cam);
    rgb_from_weights(scene, &weights, background)
}

pub fn rgb_from_weights(scene: &GaussianScene, weights: &ViewWeights, background: Vec3) -> Image {
    let colors: Vec<Vec3> = scene.primitives.iter().map(|g| g.rgb()).collect();
    let npix = weights.t_final.len();
    let pixels = (0..npix)
        .map(|p| {
            let mut c = geom::scale(background, weights.t_final[p]);
            for r in &weights.records[weights.offsets[p]..weights.offsets[p + 1]] {
                c = geom::add(c, geom::scale(colors[r.gaussian as usize], r.weight));
            }
            c
        })
        .collect();
    Image {
        width: weights.width,
        height: weights.height,
        pixels,
    }
}

#[cfg(test)]
mod tests;
