//! Homography estimation (normalized DLT inside RANSAC) and warping.

use super::features::Correspondence;
use crate::imaging::{Image, ScalarMap};
use crate::rng::Rng;
use crate::{Error, Result};

/// 3×3 projective transform, normalized so the bottom-right entry is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        if s.abs() < 1e-15 {
            return Err(Error::Estimation(
                "homography bottom-right entry is zero".into(),
            ));
        }
        let mut n = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                n[r][c] = m[r][c] / s;
            }
        }
        let h = Homography { m: n };
        if h.det().abs() <= 1e-12 {
            return Err(Error::Estimation("homography is singular".into()));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Row-major 9-element view, as serialized to JSON.
    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Result<Self> {
        Homography::new([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.det();
        let inv = [
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
            ],
        ];
        Homography::new(inv)
    }
}

/// Smallest eigenpair of a symmetric matrix by cyclic Jacobi rotations.
fn smallest_eigenvector(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..n {
        if a[i][i] < a[best][best] {
            best = i;
        }
    }
    (0..n).map(|k| v[k][best]).collect()
}

struct Normalizer {
    cx: f64,
    cy: f64,
    scale: f64,
}

impl Normalizer {
    fn fit(points: impl Iterator<Item = (f64, f64)> + Clone) -> Self {
        let mut n = 0usize;
        let (mut cx, mut cy) = (0.0, 0.0);
        for (x, y) in points.clone() {
            cx += x;
            cy += y;
            n += 1;
        }
        cx /= n as f64;
        cy /= n as f64;
        let mut dist = 0.0;
        for (x, y) in points {
            dist += ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        }
        dist /= n as f64;
        let scale = if dist > 1e-12 {
            std::f64::consts::SQRT_2 / dist
        } else {
            1.0
        };
        Normalizer { cx, cy, scale }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) * self.scale, (y - self.cy) * self.scale)
    }

    /// Similarity transform as a matrix.
    fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.scale, 0.0, -self.scale * self.cx],
            [0.0, self.scale, -self.scale * self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    fn inverse_matrix(&self) -> [[f64; 3]; 3] {
        [
            [1.0 / self.scale, 0.0, self.cx],
            [0.0, 1.0 / self.scale, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

/// Direct linear transform on >= 4 correspondences mapping a -> b.
pub fn estimate_homography_dlt(matches: &[Correspondence]) -> Result<Homography> {
    if matches.len() < 4 {
        return Err(Error::Estimation(format!(
            "homography needs at least 4 correspondences, got {}",
            matches.len()
        )));
    }
    let na = Normalizer::fit(matches.iter().map(|m| (m.xa, m.ya)));
    let nb = Normalizer::fit(matches.iter().map(|m| (m.xb, m.yb)));
    // Accumulate AᵀA directly (9×9) from the two DLT rows per match.
    let mut ata = vec![vec![0.0f64; 9]; 9];
    let mut add_row = |row: [f64; 9]| {
        for i in 0..9 {
            for j in 0..9 {
                ata[i][j] += row[i] * row[j];
            }
        }
    };
    for m in matches {
        let (x, y) = na.apply(m.xa, m.ya);
        let (u, v) = nb.apply(m.xb, m.yb);
        add_row([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        add_row([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = smallest_eigenvector(ata);
    let h_norm = [
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], h[8]],
    ];
    // Denormalize: H = T_b⁻¹ Ĥ T_a.
    let full = mat_mul(&nb.inverse_matrix(), &mat_mul(&h_norm, &na.matrix()));
    Homography::new(full)
}

fn collinear(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    let area2 = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    area2.abs() < 1e-6
}

fn sample_degenerate(sample: &[&Correspondence]) -> bool {
    let idx = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    idx.iter().any(|&(i, j, k)| {
        collinear(
            (sample[i].xa, sample[i].ya),
            (sample[j].xa, sample[j].ya),
            (sample[k].xa, sample[k].ya),
        ) || collinear(
            (sample[i].xb, sample[i].yb),
            (sample[j].xb, sample[j].yb),
            (sample[k].xb, sample[k].yb),
        )
    })
}

#[derive(Clone, Copy, Debug)]
pub struct RansacParams {
    pub iters: usize,
    pub inlier_tol_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iters: 2000,
            inlier_tol_px: 3.0,
            seed: 0,
        }
    }
}

fn reprojection_error(h: &Homography, m: &Correspondence) -> f64 {
    let (px, py) = h.apply(m.xa, m.ya);
    ((px - m.xb).powi(2) + (py - m.yb).powi(2)).sqrt()
}

/// Best-consensus 4-point DLT homography, refit on its inliers.
/// Deterministic for a fixed seed; ties in consensus go to the earlier
/// trial.
pub fn estimate_homography_ransac(
    matches: &[Correspondence],
    params: &RansacParams,
) -> Result<Homography> {
    if matches.len() < 4 {
        return Err(Error::Estimation(format!(
            "RANSAC needs at least 4 matches, got {}",
            matches.len()
        )));
    }
    let mut rng = Rng::substream(params.seed, "ransac");
    let mut best: Option<(usize, Homography)> = None;
    for _trial in 0..params.iters {
        let mut idx = [0usize; 4];
        for slot in 0..4 {
            loop {
                let cand = rng.usize_below(matches.len());
                if !idx[..slot].contains(&cand) {
                    idx[slot] = cand;
                    break;
                }
            }
        }
        let sample = [
            &matches[idx[0]],
            &matches[idx[1]],
            &matches[idx[2]],
            &matches[idx[3]],
        ];
        if sample_degenerate(&sample) {
            continue;
        }
        let owned: Vec<Correspondence> = sample.iter().map(|&&m| m).collect();
        let Ok(h) = estimate_homography_dlt(&owned) else {
            continue;
        };
        let inliers = matches
            .iter()
            .filter(|m| reprojection_error(&h, m) < params.inlier_tol_px)
            .count();
        let better = match &best {
            None => inliers >= 4,
            Some((count, _)) => inliers > *count,
        };
        if better {
            best = Some((inliers, h));
        }
    }
    let (_, coarse) = best.ok_or_else(|| {
        Error::Estimation("RANSAC found no non-degenerate consensus model".into())
    })?;
    let inliers: Vec<Correspondence> = matches
        .iter()
        .filter(|m| reprojection_error(&coarse, m) < params.inlier_tol_px)
        .copied()
        .collect();
    if inliers.len() < 4 {
        return Err(Error::Estimation("too few RANSAC inliers for refit".into()));
    }
    estimate_homography_dlt(&inliers)
}

/// Backward-warped image with a validity plane.
#[derive(Clone, Debug)]
pub struct Warped {
    pub image: Image,
    /// 1 where the source sample was fully in bounds, 0 elsewhere.
    pub validity: ScalarMap,
}

pub(crate) fn sample_bilinear(
    data: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    x: f64,
    y: f64,
) -> Option<[f64; 3]> {
    // A hair of slack keeps numerically-identity warps valid at borders.
    const EDGE_EPS: f64 = 1e-6;
    if !(-EDGE_EPS..=(w - 1) as f64 + EDGE_EPS).contains(&x)
        || !(-EDGE_EPS..=(h - 1) as f64 + EDGE_EPS).contains(&y)
    {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate().take(channels) {
        let v00 = data[(y0 * w + x0) * channels + c];
        let v01 = data[(y0 * w + x1) * channels + c];
        let v10 = data[(y1 * w + x0) * channels + c];
        let v11 = data[(y1 * w + x1) * channels + c];
        *slot = v00 * (1.0 - fx) * (1.0 - fy)
            + v01 * fx * (1.0 - fy)
            + v10 * (1.0 - fx) * fy
            + v11 * fx * fy;
    }
    Some(out)
}

/// Warp `img` into the frame the homography maps it onto: for each output
/// pixel p the source is sampled at H⁻¹·p with bilinear interpolation.
pub fn warp_homography(img: &Image, h: &Homography) -> Result<Warped> {
    let inv = h.inverse()?;
    let (ih, iw, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; ih * iw * c];
    let mut valid = vec![0.0; ih * iw];
    for y in 0..ih {
        for x in 0..iw {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if let Some(px) = sample_bilinear(img.data(), ih, iw, c, sx, sy) {
                for ch in 0..c {
                    data[(y * iw + x) * c + ch] = px[ch];
                }
                valid[y * iw + x] = 1.0;
            }
        }
    }
    Ok(Warped {
        image: Image::from_clamped(ih, iw, c, img.encoding(), data)?,
        validity: ScalarMap::new(ih, iw, valid)?,
    })
}
