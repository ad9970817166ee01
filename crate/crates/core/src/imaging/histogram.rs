//! Histogram matching over 256-level cumulative distribution functions.

use super::{Encoding, Image};
use crate::{Error, Result};

pub const LEVELS: usize = 256;

/// Quantize a [0, 1] sample to its 8-bit level.
#[inline]
pub fn quantize_level(v: f64) -> usize {
    ((v * 255.0).round() as isize).clamp(0, 255) as usize
}

/// Per-channel 256-bin cumulative distribution. Non-decreasing with the
/// final bin equal to 1.
#[derive(Clone, Debug)]
pub struct HistogramCdf {
    pub channels: Vec<[f64; LEVELS]>,
}

impl HistogramCdf {
    pub fn cdf(&self, channel: usize, level: usize) -> f64 {
        self.channels[channel][level]
    }
}

/// Build the per-channel CDF of an image on the quantized 256-level grid.
pub fn histogram_cdf(img: &Image) -> HistogramCdf {
    let c = img.channels();
    let n = (img.height() * img.width()) as f64;
    let mut channels = vec![[0.0f64; LEVELS]; c];
    for px in img.data().chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            channels[ch][quantize_level(v)] += 1.0;
        }
    }
    for hist in channels.iter_mut() {
        let mut run = 0.0;
        for bin in hist.iter_mut() {
            run += *bin / n;
            *bin = run;
        }
        // Guard against accumulation drift; the last bin is exactly 1.
        hist[LEVELS - 1] = 1.0;
    }
    HistogramCdf { channels }
}

/// Map each source level to the smallest reference level whose CDF reaches
/// the source CDF. Deterministic; ties break to the smallest level.
fn match_lut(src: &[f64; LEVELS], reference: &[f64; LEVELS]) -> [usize; LEVELS] {
    let mut lut = [0usize; LEVELS];
    let mut k = 0usize;
    for (i, lut_i) in lut.iter_mut().enumerate() {
        while k + 1 < LEVELS && reference[k] < src[i] {
            k += 1;
        }
        *lut_i = k;
    }
    lut
}

/// Transfer the reference image's per-channel distribution onto `src`.
///
/// Both images must be 3-channel and display-encoded. Output samples are
/// the looked-up levels mapped back to [0, 1] (`k/255`).
pub fn histogram_match(src: &Image, reference: &Image) -> Result<Image> {
    for (img, role) in [(src, "source"), (reference, "reference")] {
        if img.channels() != 3 {
            return Err(Error::Shape(format!(
                "histogram_match expects 3-channel images, {role} has {}",
                img.channels()
            )));
        }
        if img.encoding() != Encoding::Display {
            return Err(Error::Parameter(format!(
                "histogram_match expects display-encoded images, {role} is linear"
            )));
        }
    }
    let s = histogram_cdf(src);
    let r = histogram_cdf(reference);
    let luts: Vec<[usize; LEVELS]> = (0..3)
        .map(|c| match_lut(&s.channels[c], &r.channels[c]))
        .collect();
    let data: Vec<f64> = src
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            [
                luts[0][quantize_level(px[0])] as f64 / 255.0,
                luts[1][quantize_level(px[1])] as f64 / 255.0,
                luts[2][quantize_level(px[2])] as f64 / 255.0,
            ]
        })
        .collect();
    Image::new(
        src.height(),
        src.width(),
        3,
        Encoding::Display,
        data,
    )
}

/// Kolmogorov distance between per-channel CDFs on the 256-level grid.
pub fn cdf_kolmogorov_distance(a: &Image, b: &Image) -> Vec<f64> {
    let ca = histogram_cdf(a);
    let cb = histogram_cdf(b);
    (0..a.channels().min(b.channels()))
        .map(|c| {
            ca.channels[c]
                .iter()
                .zip(&cb.channels[c])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn image_from_levels(levels: &[usize], h: usize, w: usize) -> Image {
        let data: Vec<f64> = levels
            .iter()
            .flat_map(|&l| {
                let v = l as f64 / 255.0;
                [v, v, v]
            })
            .collect();
        Image::new(h, w, 3, Encoding::Display, data).unwrap()
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let mut rng = Rng::new(2);
        let data: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.f64()).collect();
        let img = Image::new(16, 16, 3, Encoding::Display, data).unwrap();
        let cdf = histogram_cdf(&img);
        for ch in &cdf.channels {
            for pair in ch.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
            assert_eq!(ch[LEVELS - 1], 1.0);
        }
    }

    #[test]
    fn matching_self_is_identity_on_present_levels() {
        let levels: Vec<usize> = (0..64).map(|i| (i * 4) % 256).collect();
        let img = image_from_levels(&levels, 8, 8);
        let out = histogram_match(&img, &img).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_to_half_range_halves_levels() {
        // src uniform over {0..255}, ref uniform over {0..127}:
        // level i must map to floor(i/2) within one level.
        let src_levels: Vec<usize> = (0..256).collect();
        let ref_levels: Vec<usize> = (0..256).map(|i| i / 2).collect();
        let src = image_from_levels(&src_levels, 16, 16);
        let reference = image_from_levels(&ref_levels, 16, 16);
        let out = histogram_match(&src, &reference).unwrap();
        for (i, px) in out.data().chunks_exact(3).enumerate() {
            let got = (px[0] * 255.0).round() as isize;
            let want = (src_levels[i] / 2) as isize;
            assert!(
                (got - want).abs() <= 1,
                "level {i}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn constant_source_maps_to_top_occupied_reference_level() {
        // With inclusive CDFs the source CDF at the constant level is 1, so
        // the smallest qualifying reference level is the highest occupied one.
        let src = image_from_levels(&vec![100; 64], 8, 8);
        let ref_levels: Vec<usize> = (0..64).map(|i| 40 + i).collect();
        let reference = image_from_levels(&ref_levels, 8, 8);
        let out = histogram_match(&src, &reference).unwrap();
        let got = (out.data()[0] * 255.0).round() as usize;
        assert_eq!(got, 103); // max of 40..=103
    }

    #[test]
    fn kolmogorov_distance_after_matching_is_small() {
        let mut rng = Rng::new(9);
        // Spread-out source and a compressed, shifted reference at the
        // pipeline's working resolution; the 2/256 bound needs enough
        // pixels that no single level carries more than ~1/256 mass.
        let src_data: Vec<f64> = (0..96 * 72 * 3).map(|_| rng.f64()).collect();
        let ref_data: Vec<f64> = (0..96 * 72 * 3).map(|_| 0.2 + 0.5 * rng.f64()).collect();
        let src = Image::new(72, 96, 3, Encoding::Display, src_data).unwrap();
        let reference = Image::new(72, 96, 3, Encoding::Display, ref_data).unwrap();
        let out = histogram_match(&src, &reference).unwrap();
        for d in cdf_kolmogorov_distance(&out, &reference) {
            assert!(d < 2.0 / 256.0, "K distance {d}");
        }
    }

    #[test]
    fn matching_is_idempotent_up_to_quantization() {
        let mut rng = Rng::new(10);
        let src_data: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.f64() * rng.f64()).collect();
        let ref_data: Vec<f64> = (0..32 * 32 * 3).map(|_| 0.1 + 0.8 * rng.f64()).collect();
        let src = Image::new(32, 32, 3, Encoding::Display, src_data).unwrap();
        let reference = Image::new(32, 32, 3, Encoding::Display, ref_data).unwrap();
        let once = histogram_match(&src, &reference).unwrap();
        let twice = histogram_match(&once, &reference).unwrap();
        for (a, b) in cdf_kolmogorov_distance(&once, &reference)
            .iter()
            .zip(cdf_kolmogorov_distance(&twice, &reference))
        {
            assert!((a - b).abs() < 2.0 / 256.0);
        }
    }
}
