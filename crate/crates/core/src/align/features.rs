//! Harris corners with normalized-patch descriptors and ratio-test
//! matching.

use crate::imaging::Image;

pub const PATCH: usize = 11;
const PATCH_HALF: usize = PATCH / 2;
const RATIO_TEST: f64 = 0.8;
const MAX_CORNERS: usize = 500;
const HARRIS_K: f64 = 0.04;

/// A matched keypoint pair with its normalized-correlation score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub xa: f64,
    pub ya: f64,
    pub xb: f64,
    pub yb: f64,
    pub score: f64,
}

struct Keypoint {
    x: usize,
    y: usize,
    descriptor: Vec<f64>,
}

fn harris_response(gray: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        gray[yy * w + xx]
    };
    let mut ixx = vec![0.0; h * w];
    let mut iyy = vec![0.0; h * w];
    let mut ixy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            let gy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    // 5×5 box-accumulated structure tensor.
    let blur = |src: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        acc += src[yy * w + xx];
                    }
                }
                out[y as usize * w + x as usize] = acc / 25.0;
            }
        }
        out
    };
    let sxx = blur(&ixx);
    let syy = blur(&iyy);
    let sxy = blur(&ixy);
    (0..h * w)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - HARRIS_K * tr * tr
        })
        .collect()
}

/// 7×7 Gaussian (σ = 1.5) pre-smoothing; corners and patches computed on
/// the smoothed plane stay stable under subpixel warps.
fn smooth_gray(gray: &[f64], h: usize, w: usize) -> Vec<f64> {
    let sigma = 1.5f64;
    let taps: Vec<f64> = (-3..=3)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let at = |data: &[f64], y: isize, x: isize| -> f64 {
        data[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * at(gray, y, x + i as isize - 3);
            }
            tmp[y as usize * w + x as usize] = acc / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * at(&tmp, y + i as isize - 3, x);
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}

fn detect_keypoints(img: &Image) -> Vec<Keypoint> {
    let gray = smooth_gray(&img.to_gray(), img.height(), img.width());
    let (h, w) = (img.height(), img.width());
    let margin = PATCH_HALF + 1;
    if h <= 2 * margin || w <= 2 * margin {
        return Vec::new();
    }
    let resp = harris_response(&gray, h, w);
    let max_resp = resp.iter().copied().fold(0.0f64, f64::max);
    if max_resp <= 1e-12 {
        return Vec::new();
    }
    // A permissive relative threshold: a single high-contrast structure
    // must not starve ordinary texture corners (top-N caps the count).
    let threshold = 1e-3 * max_resp;

    // 3×3 non-maximum suppression inside the descriptor-safe margin.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let r = resp[y * w + x];
            if r < threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let n = resp[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
                    if n > r {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                candidates.push((r, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.truncate(MAX_CORNERS);

    candidates
        .into_iter()
        .filter_map(|(_, x, y)| {
            descriptor(&gray, h, w, x, y).map(|descriptor| Keypoint { x, y, descriptor })
        })
        .collect()
}

/// Zero-mean, unit-norm 11×11 patch; flat patches yield no descriptor.
fn descriptor(gray: &[f64], _h: usize, w: usize, x: usize, y: usize) -> Option<Vec<f64>> {
    let mut patch = Vec::with_capacity(PATCH * PATCH);
    for dy in 0..PATCH {
        for dx in 0..PATCH {
            let yy = y + dy - PATCH_HALF;
            let xx = x + dx - PATCH_HALF;
            patch.push(gray[yy * w + xx]);
        }
    }
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    patch.iter_mut().for_each(|v| *v -= mean);
    let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    patch.iter_mut().for_each(|v| *v /= norm);
    Some(patch)
}

/// Detect keypoints in both images and match descriptors under the 0.8
/// ratio test. The score is the normalized correlation of the patches.
pub fn detect_and_match(a: &Image, b: &Image) -> Vec<Correspondence> {
    let ka = detect_keypoints(a);
    let kb = detect_keypoints(b);
    if ka.is_empty() || kb.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for p in &ka {
        let mut best = (-1.0f64, 0usize);
        let mut second = -1.0f64;
        for (j, q) in kb.iter().enumerate() {
            let ncc: f64 = p
                .descriptor
                .iter()
                .zip(&q.descriptor)
                .map(|(x, y)| x * y)
                .sum();
            if ncc > best.0 {
                second = best.0;
                best = (ncc, j);
            } else if ncc > second {
                second = ncc;
            }
        }
        // Ratio test on descriptor distances: d² = 2 - 2·ncc.
        let d1 = (2.0 - 2.0 * best.0).max(0.0).sqrt();
        let d2 = (2.0 - 2.0 * second).max(0.0).sqrt();
        if second > -1.0 && d1 >= RATIO_TEST * d2 {
            continue;
        }
        let q = &kb[best.1];
        out.push(Correspondence {
            xa: p.x as f64,
            ya: p.y as f64,
            xb: q.x as f64,
            yb: q.y as f64,
            score: best.0,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Encoding;

    /// Checkerboard with per-cell hashed intensities so corners are
    /// locally distinctive (a uniform board defeats the ratio test by
    /// making every corner identical).
    fn checkerboard(h: usize, w: usize, cell: usize, phase: usize) -> Image {
        let shade = |cx: usize, cy: usize| -> f64 {
            let mut v = (cx as u64).wrapping_mul(0x9e3779b1) ^ (cy as u64).wrapping_mul(0x85ebca6b);
            v ^= v >> 13;
            v = v.wrapping_mul(0xc2b2ae35);
            0.15 + 0.7 * ((v >> 8) & 0xffff) as f64 / 65535.0
        };
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let y = i / w;
                let x = (i % w) + phase;
                let (cx, cy) = (x / cell, y / cell);
                if (cx + cy) % 2 == 0 {
                    shade(cx, cy)
                } else {
                    0.02
                }
            })
            .collect();
        Image::new(h, w, 1, Encoding::Display, data).unwrap()
    }

    #[test]
    fn identical_checkerboards_match_with_zero_displacement() {
        let img = checkerboard(48, 64, 8, 0);
        let matches = detect_and_match(&img, &img);
        assert!(matches.len() >= 10, "only {} matches", matches.len());
        for m in &matches {
            assert_eq!(m.xa, m.xb);
            assert_eq!(m.ya, m.yb);
            assert!(m.score > 0.99);
        }
    }

    #[test]
    fn translated_copy_reports_the_shift() {
        let a = checkerboard(48, 64, 8, 0);
        let b = checkerboard(48, 64, 8, 5); // shifted 5 px left content
        let matches = detect_and_match(&a, &b);
        assert!(matches.len() >= 8);
        let mut dxs: Vec<f64> = matches.iter().map(|m| m.xb - m.xa).collect();
        dxs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dxs[dxs.len() / 2];
        assert!((median - (-5.0)).abs() <= 0.5, "median dx {median}");
    }

    #[test]
    fn constant_images_produce_no_matches() {
        let img = Image::constant(32, 32, 1, 0.5).unwrap();
        assert!(detect_and_match(&img, &img).is_empty());
    }
}
