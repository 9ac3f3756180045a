use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Vec3};
use crate::scene::GaussianScene;

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
///
/// Pixel `(x, y)` samples the image plane at integer coordinates, so the
/// image spans `[0, width-1] × [0, height-1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation: `x_cam = rotation · x_world + translation`.
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` projecting to screen-up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Camera> {
        let f = geom::sub(target, eye);
        if geom::norm(f) == 0.0 {
            return Err(Error::Invalid("camera eye coincides with target".into()));
        }
        let f = geom::normalize(f);
        let r = geom::cross(f, up);
        if geom::norm(r) < 1e-12 {
            return Err(Error::Invalid("camera up vector parallel to view".into()));
        }
        let r = geom::normalize(r);
        let d = geom::cross(f, r);
        let rotation = [r, d, f];
        let translation = geom::scale(geom::mat_vec(&rotation, eye), -1.0);
        let cam = Camera {
            rotation,
            translation,
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as u32 + 1 || self.height > u16::MAX as u32 + 1 {
            return Err(Error::Invalid(format!(
                "unsupported resolution {}x{}",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Invalid(format!(
                "clip range must satisfy 0 < near < far, got ({}, {})",
                self.near, self.far
            )));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        geom::add(geom::mat_vec(&self.rotation, p), self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn eye(&self) -> Vec3 {
        geom::scale(
            geom::mat_vec(&geom::transpose(&self.rotation), self.translation),
            -1.0,
        )
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// `m` cameras on a ring around the scene's bounding sphere: distance
/// 1.5 × radius, elevation 30°, azimuths `k·360°/m` starting on +x, z up,
/// 90° field of view.
pub fn default_view_ring(
    scene: &GaussianScene,
    m: usize,
    resolution: (u32, u32),
) -> Result<Vec<Camera>> {
    if m == 0 {
        return Err(Error::Invalid("view ring needs at least one view".into()));
    }
    let (center, radius) = scene
        .bounding_sphere()
        .ok_or_else(|| Error::Invalid("cannot place cameras around an empty scene".into()))?;
    if !(radius > 0.0) {
        return Err(Error::Invalid("scene has zero bounding radius".into()));
    }
    let (w, h) = resolution;
    let dist = 1.5 * radius;
    let elev = 30f64.to_radians();
    (0..m)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            let dir = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
            let eye = geom::add(center, geom::scale(dir, dist));
            Camera::look_at(
                eye,
                center,
                [0.0, 0.0, 1.0],
                w as f64 / 2.0,
                h as f64 / 2.0,
                w,
                h,
                0.01 * radius,
                10.0 * radius,
            )
        })
        .collect()
}
