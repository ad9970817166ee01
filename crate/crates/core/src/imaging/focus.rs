//! Laplacian focus measure and multi-focus fusion for ground-truth synthesis.

use super::{Image, ScalarMap};
use crate::{Error, Result};

/// Box mean with replicated borders.
pub fn box_filter(map: &ScalarMap, radius: usize) -> ScalarMap {
    let (h, w) = (map.height(), map.width());
    let r = radius as isize;
    let mut out = vec![0.0; h * w];
    let count = ((2 * r + 1) * (2 * r + 1)) as f64;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += map.get(yy, xx);
                }
            }
            out[y as usize * w + x as usize] = acc / count;
        }
    }
    ScalarMap::new(h, w, out).expect("same dims")
}

/// Absolute 4-neighbor Laplacian of the grayscale image, box-smoothed with
/// radius 4. Non-negative; zero on constant images.
pub fn focus_measure(img: &Image) -> Result<ScalarMap> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "focus_measure expects a 3-channel image, got {}",
            img.channels()
        )));
    }
    let gray = img.to_gray();
    let (h, w) = (img.height(), img.width());
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        gray[yy * w + xx]
    };
    let mut lap = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
            lap[y as usize * w + x as usize] = v.abs();
        }
    }
    Ok(box_filter(&ScalarMap::new(h, w, lap)?, 4))
}

/// Select the in-focus pixel from a foreground-focused / background-focused
/// pair. The hard selection mask is box-smoothed (radius 2) into [0, 1] and
/// the images are blended with it.
pub fn multifocus_fuse(fg: &Image, bg: &Image) -> Result<(ScalarMap, Image)> {
    if !fg.same_shape(bg) {
        return Err(Error::Shape("multifocus_fuse: image shapes differ".into()));
    }
    let fm_fg = focus_measure(fg)?;
    let fm_bg = focus_measure(bg)?;
    let (h, w) = (fg.height(), fg.width());
    let hard: Vec<f64> = fm_fg
        .data()
        .iter()
        .zip(fm_bg.data())
        .map(|(a, b)| if a >= b { 1.0 } else { 0.0 })
        .collect();
    let mask = box_filter(&ScalarMap::new(h, w, hard)?, 2);

    let c = fg.channels();
    let mut data = vec![0.0; h * w * c];
    for (i, px) in data.chunks_exact_mut(c).enumerate() {
        let m = mask.data()[i];
        for (ch, out) in px.iter_mut().enumerate() {
            let f = fg.data()[i * c + ch];
            let b = bg.data()[i * c + ch];
            // b + m(f-b) keeps the result exactly inside [min, max] and
            // reproduces f bit-for-bit when f == b.
            *out = b + m * (f - b);
        }
    }
    let fused = Image::new(h, w, c, fg.encoding(), data)?;
    Ok((mask, fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Encoding;
    use crate::rng::Rng;

    #[test]
    fn constant_image_has_zero_focus_measure() {
        let img = Image::constant(16, 16, 3, 0.4).unwrap();
        let fm = focus_measure(&img).unwrap();
        assert!(fm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_peaks_on_the_edge() {
        let (h, w) = (16, 32);
        let mut data = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let v = if x >= w / 2 { 1.0 } else { 0.0 };
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = v;
                }
            }
        }
        let img = Image::new(h, w, 3, Encoding::Display, data).unwrap();
        let fm = focus_measure(&img).unwrap();
        let mid = fm.get(h / 2, w / 2 - 1).max(fm.get(h / 2, w / 2));
        let far = fm.get(h / 2, 2);
        assert!(mid > far, "edge response {mid} vs flat response {far}");
    }

    #[test]
    fn single_bright_pixel_response_stays_local() {
        let (h, w) = (21, 21);
        let mut data = vec![0.0; h * w * 3];
        for c in 0..3 {
            data[(10 * w + 10) * 3 + c] = 1.0;
        }
        let img = Image::new(h, w, 3, Encoding::Display, data).unwrap();
        let fm = focus_measure(&img).unwrap();
        // Laplacian support (1) + smoothing radius (4) = 5 pixels.
        let mut outside = 0.0f64;
        let mut inside = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let d = (y as isize - 10).abs().max((x as isize - 10).abs());
                if d <= 5 {
                    inside += fm.get(y, x);
                } else {
                    outside += fm.get(y, x);
                }
            }
        }
        assert!(inside > 0.0);
        assert_eq!(outside, 0.0);
    }

    #[test]
    fn fusing_identical_images_returns_them_exactly() {
        let mut rng = Rng::new(20);
        let data: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.f64()).collect();
        let img = Image::new(16, 16, 3, Encoding::Display, data).unwrap();
        let (_, fused) = multifocus_fuse(&img, &img).unwrap();
        assert_eq!(fused.data(), img.data());
    }

    #[test]
    fn mask_is_in_unit_interval_and_fused_between_inputs() {
        let mut rng = Rng::new(21);
        let a_data: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.f64()).collect();
        let b_data: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.f64()).collect();
        let a = Image::new(24, 24, 3, Encoding::Display, a_data).unwrap();
        let b = Image::new(24, 24, 3, Encoding::Display, b_data).unwrap();
        let (mask, fused) = multifocus_fuse(&a, &b).unwrap();
        assert!(mask.data().iter().all(|&m| (0.0..=1.0).contains(&m)));
        for i in 0..fused.data().len() {
            let lo = a.data()[i].min(b.data()[i]);
            let hi = a.data()[i].max(b.data()[i]);
            assert!(fused.data()[i] >= lo && fused.data()[i] <= hi);
        }
    }
}
