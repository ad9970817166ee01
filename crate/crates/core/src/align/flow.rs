//! Dense coarse-to-fine Lucas-Kanade optical flow and forward-backward
//! consistency.

use rayon::prelude::*;

use super::homography::{sample_bilinear, Warped};
use crate::imaging::{Image, ScalarMap};
use crate::{Error, Result};

/// Dense displacement field. `src(p) ≈ dst(p + flow(p))`: the flow lives
/// on the source grid and points into the destination image.
#[derive(Clone, Debug)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(Error::Shape("flow buffers do not match dimensions".into()));
        }
        if !dx.iter().chain(dy.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numeric("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    pub levels: usize,
    /// Full window width (odd).
    pub window: usize,
    pub iters: usize,
    /// Tikhonov damping of the 2×2 normal equations; keeps textureless
    /// regions at zero flow.
    pub damping: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 4,
            window: 5,
            iters: 10,
            damping: 1e-3,
        }
    }
}

fn downsample_half(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let nh = (h + 1) / 2;
    let nw = (w + 1) / 2;
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            let y0 = 2 * y;
            let x0 = 2 * x;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            out[y * nw + x] =
                0.25 * (src[y0 * w + x0] + src[y0 * w + x1] + src[y1 * w + x0] + src[y1 * w + x1]);
        }
    }
    (out, nh, nw)
}

#[inline]
fn sample_clamped(data: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    data[y0 * w + x0] * (1.0 - fx) * (1.0 - fy)
        + data[y0 * w + x1] * fx * (1.0 - fy)
        + data[y1 * w + x0] * (1.0 - fx) * fy
        + data[y1 * w + x1] * fx * fy
}

fn gradients(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| -> f64 {
        data[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx[y as usize * w + x as usize] = 0.5 * (at(y, x + 1) - at(y, x - 1));
            gy[y as usize * w + x as usize] = 0.5 * (at(y + 1, x) - at(y - 1, x));
        }
    }
    (gx, gy)
}

fn box3_smooth(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += data[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = acc / 9.0;
        }
    }
    out
}

/// 3×3 median; suppresses the impulse outliers the per-pixel solve leaves
/// behind without smearing them into neighbors.
fn median3_filter(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut window = [0.0f64; 9];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    window[n] = data[yy * w + xx];
                    n += 1;
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[y as usize * w + x as usize] = window[4];
        }
    }
    out
}

fn upsample_double(src: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = sample_clamped(src, h, w, x as f64 * 0.5, y as f64 * 0.5);
        }
    }
    out
}

/// Dense flow from `src` to `dst` by Gauss-Newton on local brightness
/// constancy over a coarse-to-fine pyramid.
pub fn pyramid_flow(src: &Image, dst: &Image, params: &FlowParams) -> Result<FlowField> {
    if src.height() != dst.height() || src.width() != dst.width() {
        return Err(Error::Shape("pyramid_flow: image shapes differ".into()));
    }
    if params.levels < 1 {
        return Err(Error::Parameter("pyramid_flow needs at least one level".into()));
    }
    // Brightness constancy is evaluated on lightly blurred planes; raw
    // high-frequency content plus interpolation noise otherwise drives the
    // weakly-constrained aperture direction of the 2×2 solve.
    let presmooth = |img: &Image| {
        let g = img.to_gray();
        box3_smooth(&box3_smooth(&g, img.height(), img.width()), img.height(), img.width())
    };
    let mut pyr_src = vec![(presmooth(src), src.height(), src.width())];
    let mut pyr_dst = vec![(presmooth(dst), dst.height(), dst.width())];
    for _ in 1..params.levels {
        let (s, h, w) = pyr_src.last().unwrap();
        if *h < 16 || *w < 16 {
            break;
        }
        pyr_src.push(downsample_half(s, *h, *w));
        let (d, h, w) = pyr_dst.last().unwrap();
        pyr_dst.push(downsample_half(d, *h, *w));
    }

    let half = (params.window / 2) as isize;
    let coarsest = pyr_src.len() - 1;
    let (mut fx, mut fy): (Vec<f64>, Vec<f64>) = {
        let (_, h, w) = pyr_src[coarsest];
        (vec![0.0; h * w], vec![0.0; h * w])
    };

    for level in (0..=coarsest).rev() {
        let (ref s, h, w) = pyr_src[level];
        let (ref d, dh, dw) = pyr_dst[level];
        debug_assert_eq!((h, w), (dh, dw));
        if level != coarsest {
            let (_, ph, pw) = pyr_src[level + 1];
            fx = upsample_double(&fx, ph, pw, h, w)
                .iter()
                .map(|v| v * 2.0)
                .collect();
            fy = upsample_double(&fy, ph, pw, h, w)
                .iter()
                .map(|v| v * 2.0)
                .collect();
        }
        let (gx, gy) = gradients(d, h, w);

        let mut nfx = vec![0.0; h * w];
        let mut nfy = vec![0.0; h * w];
        // A refinement may move at most this far from its pyramid
        // initialization; larger displacements belong to coarser levels.
        let max_increment = params.window as f64;
        nfx.par_chunks_mut(w)
            .zip(nfy.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (rowx, rowy))| {
                for x in 0..w {
                    let u0 = fx[y * w + x];
                    let v0 = fy[y * w + x];
                    let window_ssd = |u: f64, v: f64| -> f64 {
                        let mut acc = 0.0;
                        for dy in -half..=half {
                            for dx in -half..=half {
                                let qy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                                let qx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                                let r = sample_clamped(d, h, w, qx as f64 + u, qy as f64 + v)
                                    - s[qy * w + qx];
                                acc += r * r;
                            }
                        }
                        acc
                    };
    let mut u = u0;
                    let mut v = v0;
                    let mut structure_ok = true;
                    for _ in 0..params.iters {
                        let mut a11 = params.damping;
                        let mut a12 = 0.0;
                        let mut a22 = params.damping;
                        let mut b1 = 0.0;
                        let mut b2 = 0.0;
                        for dy in -half..=half {
                            for dx in -half..=half {
                                let qy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                                let qx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                                let tx = qx as f64 + u;
                                let ty = qy as f64 + v;
                                let jx = sample_clamped(&gx, h, w, tx, ty);
                                let jy = sample_clamped(&gy, h, w, tx, ty);
                                let r = sample_clamped(d, h, w, tx, ty) - s[qy * w + qx];
                                a11 += jx * jx;
                                a12 += jx * jy;
                                a22 += jy * jy;
                                b1 += jx * r;
                                b2 += jy * r;
                            }
                        }
                        // Windows without usable gradient energy keep their
                        // pyramid initialization (aperture fallback).
                        if a11 + a22 - 2.0 * params.damping < 2e-3 {
                            structure_ok = false;
                            break;
                        }
                        let det = a11 * a22 - a12 * a12;
                        if det.abs() < 1e-12 {
                            break;
                        }
                        let mut du = -(a22 * b1 - a12 * b2) / det;
                        let mut dv = -(a11 * b2 - a12 * b1) / det;
                        // Trust region: one pixel per Gauss-Newton step.
                        let step = (du * du + dv * dv).sqrt();
                        if step > 1.0 {
                            du /= step;
                            dv /= step;
                        }
                        u += du;
                        v += dv;
                        let drift = ((u - u0).powi(2) + (v - v0).powi(2)).sqrt();
                        if drift > max_increment {
                            u = u0 + (u - u0) / drift * max_increment;
                            v = v0 + (v - v0) / drift * max_increment;
                            break;
                        }
                        if du * du + dv * dv < 1e-8 {
                            break;
                        }
                    }
                    // Keep the refinement only if it actually improved
                    // brightness constancy.
                    if structure_ok && window_ssd(u, v) <= window_ssd(u0, v0) {
                        rowx[x] = u;
                        rowy[x] = v;
                    } else {
                        rowx[x] = u0;
                        rowy[x] = v0;
                    }
                }
            });
        let mfx = median3_filter(&nfx, h, w);
        let mfy = median3_filter(&nfy, h, w);
        fx = box3_smooth(&mfx, h, w);
        fy = box3_smooth(&mfy, h, w);
    }
    FlowField::new(src.height(), src.width(), fx, fy)
}

/// Backward warp: out(p) = img(p + flow(p)), with a validity plane marking
/// in-bounds samples.
pub fn warp_flow(img: &Image, flow: &FlowField) -> Result<Warped> {
    if flow.height() != img.height() || flow.width() != img.width() {
        return Err(Error::Shape("warp_flow: flow does not match image".into()));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; h * w * c];
    let mut valid = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            if let Some(px) = sample_bilinear(img.data(), h, w, c, x as f64 + u, y as f64 + v) {
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = px[ch];
                }
                valid[y * w + x] = 1.0;
            }
        }
    }
    Ok(Warped {
        image: Image::from_clamped(h, w, c, img.encoding(), data)?,
        validity: ScalarMap::new(h, w, valid)?,
    })
}

/// Forward-backward consistency: a pixel is confident iff
/// t·‖roundtrip(p) − p‖₂ ≤ 1, i.e. the round trip through both flows
/// returns within 1/t pixels. Binary mask on the forward flow's grid.
pub fn fb_confidence(fwd: &FlowField, bwd: &FlowField, t: f64) -> Result<ScalarMap> {
    if fwd.height() != bwd.height() || fwd.width() != bwd.width() {
        return Err(Error::Shape("fb_confidence: flow shapes differ".into()));
    }
    let (h, w) = (fwd.height(), fwd.width());
    let mut mask = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = fwd.get(y, x);
            let qx = x as f64 + u;
            let qy = y as f64 + v;
            let bu = sample_clamped(bwd.dx(), h, w, qx, qy);
            let bv = sample_clamped(bwd.dy(), h, w, qx, qy);
            let rx = qx + bu;
            let ry = qy + bv;
            let err = ((rx - x as f64).powi(2) + (ry - y as f64).powi(2)).sqrt();
            mask[y * w + x] = if t * err <= 1.0 { 1.0 } else { 0.0 };
        }
    }
    ScalarMap::new(h, w, mask)
}
