//! Pinhole cameras and ray generation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

/// Pinhole camera: intrinsics in pixels, world-from-camera pose, image
/// size and the scene depth bounds used for sampling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-from-camera rotation, row major.
    pub rotation: [[f64; 3]; 3],
    /// Camera center in world coordinates.
    pub center: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Parameter("focal lengths must be positive".into()));
        }
        if self.near >= self.far {
            return Err(Error::Parameter(format!(
                "near {} must be below far {}",
                self.near, self.far
            )));
        }
        // R Rᵀ = I within 1e-9.
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::Parameter(
                        "camera rotation is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Ray through the center of pixel (x, y); fractional coordinates are
    /// allowed, the half-pixel shift is applied here.
    pub fn ray_for_pixel(&self, x: f64, y: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&x) || !(0.0..self.height as f64).contains(&y) {
            return Err(Error::Parameter(format!(
                "pixel ({x}, {y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let dx = (x + 0.5 - self.cx) / self.fx;
        let dy = (y + 0.5 - self.cy) / self.fy;
        let cam = [dx, dy, 1.0];
        let mut world = [0.0; 3];
        for (i, out) in world.iter_mut().enumerate() {
            *out = (0..3).map(|k| self.rotation[i][k] * cam[k]).sum();
        }
        let norm = (world[0] * world[0] + world[1] * world[1] + world[2] * world[2]).sqrt();
        Ok(Ray {
            origin: self.center,
            dir: [world[0] / norm, world[1] / norm, world[2] / norm],
        })
    }

    pub fn generate_rays(&self, pixels: &[(f64, f64)]) -> Result<Vec<Ray>> {
        pixels
            .iter()
            .map(|&(x, y)| self.ray_for_pixel(x, y))
            .collect()
    }

    /// Camera-frame z depth of a world point (positive in front).
    pub fn depth_of(&self, point: [f64; 3]) -> f64 {
        let d = [
            point[0] - self.center[0],
            point[1] - self.center[1],
            point[2] - self.center[2],
        ];
        // Camera-from-world rotation is the transpose; z row is column 2.
        (0..3).map(|k| self.rotation[k][2] * d[k]).sum()
    }
}

pub fn identity_rotation() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotation that points the camera's +z axis from `from` towards `at`,
/// with +y approximately along world `up`.
pub fn look_at_rotation(from: [f64; 3], at: [f64; 3], up: [f64; 3]) -> [[f64; 3]; 3] {
    let fwd = normalize([at[0] - from[0], at[1] - from[1], at[2] - from[2]]);
    let right = normalize(cross(up, fwd));
    let down = cross(fwd, right);
    // Columns are the camera axes expressed in world coordinates.
    [
        [right[0], down[0], fwd[0]],
        [right[1], down[1], fwd[1]],
        [right[2], down[2], fwd[2]],
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
