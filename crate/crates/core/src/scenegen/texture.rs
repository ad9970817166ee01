//! Procedural plane textures, anchored in world coordinates so every view
//! samples the same surface.

/// Deterministic hash to [0, 1).
fn hash01(ix: i64, iy: i64, salt: u64) -> f64 {
    let mut v = (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ salt.wrapping_mul(0x1656_67b1_9e37_79f9);
    v ^= v >> 29;
    v = v.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    v ^= v >> 32;
    (v & 0xff_ffff) as f64 / 16_777_215.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly interpolated lattice noise.
pub fn value_noise(x: f64, y: f64, cell: f64, salt: u64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let ix = gx.floor() as i64;
    let iy = gy.floor() as i64;
    let fx = smoothstep(gx - gx.floor());
    let fy = smoothstep(gy - gy.floor());
    let v00 = hash01(ix, iy, salt);
    let v01 = hash01(ix + 1, iy, salt);
    let v10 = hash01(ix, iy + 1, salt);
    let v11 = hash01(ix + 1, iy + 1, salt);
    v00 * (1.0 - fx) * (1.0 - fy)
        + v01 * fx * (1.0 - fy)
        + v10 * (1.0 - fx) * fy
        + v11 * fx * fy
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TextureKind {
    Noise,
    Checker,
    Stripes,
}

/// Texture of one plane: a smooth aperiodic base plus fine detail so both
/// feature matching and focus measures have something to bite on.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PlaneTexture {
    pub kind: TextureKind,
    pub seed: u64,
    /// World-unit size of the dominant structure.
    pub base_cell: f64,
    /// World-unit size of the fine detail layer.
    pub detail_cell: f64,
}

impl PlaneTexture {
    /// RGB sample at world coordinates on the plane; display-encoded
    /// values within [0.04, 0.97].
    ///
    /// Structure is shared across channels (so grayscale keeps its
    /// gradient energy) and colored by a slowly varying per-channel tint.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let salt = self.seed;
        let base = value_noise(x, y, self.base_cell, salt);
        let detail = value_noise(x, y, self.detail_cell, salt ^ 0xabcd);
        let coarse = value_noise(x, y, self.base_cell * 3.0, salt ^ 0x77);
        let structural = match self.kind {
            TextureKind::Noise => base,
            TextureKind::Checker => {
                let cx = (x / self.base_cell).floor() as i64;
                let cy = (y / self.base_cell).floor() as i64;
                let shade = 0.25 + 0.5 * hash01(cx, cy, salt ^ 0x3333);
                if (cx + cy).rem_euclid(2) == 0 {
                    shade
                } else {
                    1.0 - shade
                }
            }
            TextureKind::Stripes => {
                let phase = x + 0.35 * y + 2.0 * self.base_cell * base;
                0.5 + 0.5 * (std::f64::consts::PI * phase / self.base_cell).sin()
            }
        };
        let luminance = 0.12 + 0.42 * structural + 0.34 * detail + 0.1 * coarse;
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let tint = 0.78
                + 0.4 * value_noise(x, y, self.base_cell * 5.0, salt.wrapping_add(c as u64 * 7919));
            *slot = (luminance * tint).clamp(0.04, 0.97);
        }
        out
    }
}
