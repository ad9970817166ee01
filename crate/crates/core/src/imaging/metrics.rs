//! PSNR and SSIM, plus the tape-differentiable SSIM used as a loss.

use std::sync::Arc;

use super::Image;
use crate::autodiff::{CustomOp, NodeId, Tape, Tensor};
use crate::{Error, Result};

/// PSNR cap applied when the MSE underflows (identical images).
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Peak signal-to-noise ratio in dB against a peak of 1.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("psnr: image shapes differ".into()));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized 11×11 Gaussian window (σ = 1.5).
#[derive(Clone, Debug)]
pub struct GaussianWindow {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl GaussianWindow {
    pub fn ssim_default() -> Self {
        Self::new(SSIM_WINDOW, SSIM_SIGMA)
    }

    pub fn new(size: usize, sigma: f64) -> Self {
        let half = (size / 2) as isize;
        let mut weights = Vec::with_capacity(size * size);
        for dy in -half..=half {
            for dx in -half..=half {
                let r2 = (dx * dx + dy * dy) as f64;
                weights.push((-r2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        GaussianWindow { size, weights }
    }
}

/// Valid-region cross-correlation of a grayscale plane with a kernel.
pub(crate) fn conv2d_valid(
    src: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let oh = h - kh + 1;
    let ow = w - kw + 1;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..kh {
                let row = &src[(oy + ky) * w + ox..(oy + ky) * w + ox + kw];
                let krow = &kernel[ky * kw..(ky + 1) * kw];
                for (s, k) in row.iter().zip(krow) {
                    acc += s * k;
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    out
}

fn ssim_planes(gray_a: &[f64], gray_b: &[f64], h: usize, w: usize) -> f64 {
    let win = GaussianWindow::ssim_default();
    let k = win.size;
    let mu_a = conv2d_valid(gray_a, h, w, &win.weights, k, k);
    let mu_b = conv2d_valid(gray_b, h, w, &win.weights, k, k);
    let aa: Vec<f64> = gray_a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gray_b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = gray_a.iter().zip(gray_b).map(|(x, y)| x * y).collect();
    let e_aa = conv2d_valid(&aa, h, w, &win.weights, k, k);
    let e_bb = conv2d_valid(&bb, h, w, &win.weights, k, k);
    let e_ab = conv2d_valid(&ab, h, w, &win.weights, k, k);

    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        acc += num / den;
    }
    acc / mu_a.len() as f64
}

/// Mean local SSIM over valid 11×11 windows; channel-mean grayscale first.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim: image shapes differ".into()));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    Ok(ssim_planes(
        &a.to_gray(),
        &b.to_gray(),
        a.height(),
        a.width(),
    ))
}

/// Valid cross-correlation with a fixed kernel as a tape op.
pub(crate) struct Conv2dValidOp {
    pub kernel: Vec<f64>,
    pub kh: usize,
    pub kw: usize,
}

impl CustomOp for Conv2dValidOp {
    fn name(&self) -> &'static str {
        "conv2d_valid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let x = inputs[0];
        let (h, w) = x.shape();
        if h < self.kh || w < self.kw {
            return Err(Error::Shape(format!(
                "conv2d_valid: input {h}x{w} smaller than kernel {}x{}",
                self.kh, self.kw
            )));
        }
        let out = conv2d_valid(x.data(), h, w, &self.kernel, self.kh, self.kw);
        Ok((Tensor::new(h - self.kh + 1, w - self.kw + 1, out)?, vec![]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let (h, w) = inputs[0].shape();
        let (oh, ow) = grad_out.shape();
        let mut gx = vec![0.0; h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data()[oy * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        gx[(oy + ky) * w + ox + kx] += g * self.kernel[ky * self.kw + kx];
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(h, w, gx)?)])
    }
}

/// Differentiable SSIM between two grayscale grid tensors.
///
/// Identical formula to [`ssim`]; either argument may be a constant.
pub fn ssim_tape(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (h, w) = tape.value(a).shape();
    if tape.value(b).shape() != (h, w) {
        return Err(Error::Shape("ssim_tape: shapes differ".into()));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim_tape needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = GaussianWindow::ssim_default();
    let conv = || -> Arc<dyn CustomOp> {
        Arc::new(Conv2dValidOp {
            kernel: win.weights.clone(),
            kh: win.size,
            kw: win.size,
        })
    };
    let mu_a = tape.custom(conv(), &[a])?;
    let mu_b = tape.custom(conv(), &[b])?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let ab = tape.mul(a, b)?;
    let e_aa = tape.custom(conv(), &[aa])?;
    let e_bb = tape.custom(conv(), &[bb])?;
    let e_ab = tape.custom(conv(), &[ab])?;

    let ma_mb = tape.mul(mu_a, mu_b)?;
    let ma2 = tape.mul(mu_a, mu_a)?;
    let mb2 = tape.mul(mu_b, mu_b)?;
    let var_a = tape.sub(e_aa, ma2)?;
    let var_b = tape.sub(e_bb, mb2)?;
    let cov = tape.sub(e_ab, ma_mb)?;

    let l_num = tape.mul_scalar(ma_mb, 2.0);
    let l_num = tape.add_scalar(l_num, SSIM_C1);
    let c_num = tape.mul_scalar(cov, 2.0);
    let c_num = tape.add_scalar(c_num, SSIM_C2);
    let num = tape.mul(l_num, c_num)?;

    let l_den = tape.add(ma2, mb2)?;
    let l_den = tape.add_scalar(l_den, SSIM_C1);
    let v_sum = tape.add(var_a, var_b)?;
    let c_den = tape.add_scalar(v_sum, SSIM_C2);
    let den = tape.mul(l_den, c_den)?;

    let map = tape.div(num, den)?;
    Ok(tape.mean_all(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Encoding;
    use crate::rng::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * c).map(|_| rng.f64()).collect();
        Image::new(h, w, c, Encoding::Display, data).unwrap()
    }

    #[test]
    fn psnr_known_values() {
        let x = random_image(8, 8, 3, 1);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);

        let a = Image::constant(8, 8, 1, 0.0).unwrap();
        let b = Image::constant(8, 8, 1, 0.1).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);

        let black = Image::constant(8, 8, 1, 0.0).unwrap();
        let white = Image::constant(8, 8, 1, 1.0).unwrap();
        assert!((psnr(&black, &white).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shape() {
        let a = random_image(9, 7, 3, 2);
        let b = random_image(9, 7, 3, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = random_image(7, 9, 3, 4);
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn ssim_self_is_one_and_symmetric() {
        let x = random_image(16, 16, 3, 5);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let y = random_image(16, 16, 3, 6);
        let ab = ssim(&x, &y).unwrap();
        let ba = ssim(&y, &x).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_structural_inversion_degrades() {
        let x = random_image(16, 16, 1, 7);
        let inv_data: Vec<f64> = x.data().iter().map(|v| 1.0 - v).collect();
        let inv = Image::new(16, 16, 1, Encoding::Display, inv_data).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (c1v, c2v) = (0.3, 0.7);
        let a = Image::constant(16, 16, 1, c1v).unwrap();
        let b = Image::constant(16, 16, 1, c2v).unwrap();
        let expect = (2.0 * c1v * c2v + SSIM_C1) / (c1v * c1v + c2v * c2v + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(10, 16, 1, 8);
        let b = random_image(10, 16, 1, 9);
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn tape_ssim_matches_plain_ssim() {
        let a = random_image(14, 14, 1, 10);
        let b = random_image(14, 14, 1, 11);
        let plain = ssim(&a, &b).unwrap();
        let mut tape = Tape::new();
        let an = tape.constant(Tensor::new(14, 14, a.data().to_vec()).unwrap());
        let bn = tape.constant(Tensor::new(14, 14, b.data().to_vec()).unwrap());
        let s = ssim_tape(&mut tape, an, bn).unwrap();
        assert!((tape.value(s).item().unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn tape_ssim_gradient_matches_finite_differences() {
        use crate::autodiff::finite_diff_vec;
        let a = random_image(12, 12, 1, 12);
        let b = random_image(12, 12, 1, 13);
        let eval = |bd: &[f64]| {
            let mut tape = Tape::new();
            let an = tape.constant(Tensor::new(12, 12, a.data().to_vec()).unwrap());
            let bn = tape.var(Tensor::new(12, 12, bd.to_vec()).unwrap());
            let s = ssim_tape(&mut tape, an, bn).unwrap();
            tape.value(s).item().unwrap()
        };
        let mut tape = Tape::new();
        let an = tape.constant(Tensor::new(12, 12, a.data().to_vec()).unwrap());
        let bn = tape.var(Tensor::new(12, 12, b.data().to_vec()).unwrap());
        let s = ssim_tape(&mut tape, an, bn).unwrap();
        let grads = tape.backward_full(s).unwrap();
        let got = grads[1].as_ref().unwrap();
        let fd = finite_diff_vec(eval, b.data(), 1e-6);
        for (g, f) in got.data().iter().zip(&fd) {
            assert!(
                (g - f).abs() < 1e-4 * g.abs().max(f.abs()).max(1e-3),
                "{g} vs {f}"
            );
        }
    }
}
