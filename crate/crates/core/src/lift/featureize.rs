use std::f64::consts::TAU;

use super::FeatureMap;
use crate::raster::Image;

/// A frozen image → feature-grid function. Implementations may return a
/// coarser grid than the image; it is upsampled before lifting.
pub trait Featureizer: Send + Sync {
    /// Stable identifier used in cache keys.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn featureize(&self, image: &Image, view_id: usize) -> FeatureMap;
}

pub const PROCEDURAL_DIM: usize = 16;

/// Hand-built 16-channel features:
///
/// | channels | content |
/// |---|---|
/// | 0–2 | RGB |
/// | 3–6 | `sin, cos (2πx/W)`, `sin, cos (2πy/H)` |
/// | 7–9 | 3×3 window mean per colour channel |
/// | 10–12 | 3×3 window standard deviation |
/// | 13–15 | cube root of the 3×3 window third central moment |
///
/// Windows are clipped at the image border.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProceduralFeatureizer;

impl Featureizer for ProceduralFeatureizer {
    fn id(&self) -> String {
        "procedural-v1".into()
    }

    fn dim(&self) -> usize {
        PROCEDURAL_DIM
    }

    fn featureize(&self, image: &Image, view_id: usize) -> FeatureMap {
        let (w, h) = (image.width, image.height);
        let mut data = Vec::with_capacity(w as usize * h as usize * PROCEDURAL_DIM);
        for y in 0..h {
            for x in 0..w {
                let rgb = image.get(x, y);
                data.extend_from_slice(&rgb);
                let ax = TAU * x as f64 / w as f64;
                let ay = TAU * y as f64 / h as f64;
                data.extend_from_slice(&[ax.sin(), ax.cos(), ay.sin(), ay.cos()]);

                let mut window = Vec::with_capacity(9);
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        window.push(image.get(xx, yy));
                    }
                }
                let k = window.len() as f64;
                let mut mean = [0.0; 3];
                let mut var = [0.0; 3];
                let mut third = [0.0; 3];
                for c in 0..3 {
                    mean[c] = window.iter().map(|p| p[c]).sum::<f64>() / k;
                    var[c] = window.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / k;
                    third[c] = window.iter().map(|p| (p[c] - mean[c]).powi(3)).sum::<f64>() / k;
                }
                data.extend_from_slice(&mean);
                data.extend(var.iter().map(|v| v.sqrt()));
                data.extend(third.iter().map(|v| v.cbrt()));
            }
        }
        FeatureMap {
            width: w,
            height: h,
            dim: PROCEDURAL_DIM,
            data,
            view_id,
        }
    }
}

/// Bilinear resampling to `width × height` with pixel-centre alignment;
/// returns the map unchanged when it already has that size.
pub fn upsample_bilinear(map: &FeatureMap, width: u32, height: u32) -> FeatureMap {
    if map.width == width && map.height == height {
        return map.clone();
    }
    let d = map.dim;
    let sx = map.width as f64 / width as f64;
    let sy = map.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width as usize * height as usize * d);
    let max_x = map.width as f64 - 1.0;
    let max_y = map.height as f64 - 1.0;
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as u32;
        let y1 = (y0 + 1).min(map.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as u32;
            let x1 = (x0 + 1).min(map.width - 1);
            let tx = fx - x0 as f64;
            let (a, b, c, e) = (map.at(x0, y0), map.at(x1, y0), map.at(x0, y1), map.at(x1, y1));
            for k in 0..d {
                let top = a[k] * (1.0 - tx) + b[k] * tx;
                let bot = c[k] * (1.0 - tx) + e[k] * tx;
                data.push(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    FeatureMap {
        width,
        height,
        dim: d,
        data,
        view_id: map.view_id,
    }
}
