//! Scatter-based bokeh rendering.
//!
//! Every source pixel distributes linear radiance to the targets inside
//! its circle of confusion; each target normalizes by the accumulated
//! weight. Implemented as a gather over a per-source truncation window
//! (Euclidean distance < ceil(r)+1) so outputs are independent and the
//! parallel loop stays deterministic.

use rayon::prelude::*;

use super::{scatter_weight_beta, BETA, R_MIN};
use crate::autodiff::{CustomOp, Tensor};
use crate::imaging::{Encoding, Image, ScalarMap};
use crate::{Error, Result};

/// Per-source squared truncation bound: targets with squared distance
/// strictly below this receive weight.
#[inline]
fn window_sq(r: f64) -> i64 {
    let bound = r.ceil() as i64 + 1;
    bound * bound
}

/// Accumulate weighted radiance and weights for every target pixel.
/// Returns (numerators h·w·3, denominators h·w).
fn scatter_core(linear: &[f64], radius: &[f64], h: usize, w: usize, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let bounds: Vec<i64> = radius.iter().map(|&r| window_sq(r)).collect();
    let reach = radius
        .iter()
        .fold(0i64, |acc, &r| acc.max(r.ceil() as i64 + 1));

    let mut num = vec![0.0; h * w * 3];
    let mut den = vec![0.0; h * w];
    num.par_chunks_mut(w * 3)
        .zip(den.par_chunks_mut(w))
        .enumerate()
        .for_each(|(ty, (num_row, den_row))| {
            let ty = ty as i64;
            let y0 = (ty - reach).max(0);
            let y1 = (ty + reach).min(h as i64 - 1);
            for tx in 0..w as i64 {
                let x0 = (tx - reach).max(0);
                let x1 = (tx + reach).min(w as i64 - 1);
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0f64;
                for sy in y0..=y1 {
                    let dy2 = (sy - ty) * (sy - ty);
                    for sx in x0..=x1 {
                        let d2 = dy2 + (sx - tx) * (sx - tx);
                        let s = (sy * w as i64 + sx) as usize;
                        if d2 < bounds[s] {
                            let wgt = scatter_weight_beta(radius[s], (d2 as f64).sqrt(), beta);
                            acc[0] += wgt * linear[s * 3];
                            acc[1] += wgt * linear[s * 3 + 1];
                            acc[2] += wgt * linear[s * 3 + 2];
                            wsum += wgt;
                        }
                    }
                }
                let t = tx as usize;
                num_row[t * 3] = acc[0];
                num_row[t * 3 + 1] = acc[1];
                num_row[t * 3 + 2] = acc[2];
                den_row[t] = wsum;
            }
        });
    (num, den)
}

fn validate_radius(img: &Image, radius: &ScalarMap) -> Result<()> {
    if radius.height() != img.height() || radius.width() != img.width() {
        return Err(Error::Shape(format!(
            "radius map {}x{} does not match image {}x{}",
            radius.height(),
            radius.width(),
            img.height(),
            img.width()
        )));
    }
    if !radius.data().iter().all(|r| r.is_finite() && *r >= 0.0) {
        return Err(Error::Numeric(
            "blur radii must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Render bokeh of a sharp image under a per-pixel CoC radius map.
///
/// Display-encoded inputs are converted to linear radiance with the power
/// law, scattered, normalized per target and converted back; linear inputs
/// are scattered directly. The output keeps the input encoding.
pub fn scatter_render(sharp: &Image, radius: &ScalarMap, gamma: f64) -> Result<Image> {
    scatter_render_beta(sharp, radius, gamma, BETA)
}

/// [`scatter_render`] with an explicit kernel smoothness β.
pub fn scatter_render_beta(
    sharp: &Image,
    radius: &ScalarMap,
    gamma: f64,
    beta: f64,
) -> Result<Image> {
    validate_radius(sharp, radius)?;
    if gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    let (h, w) = (sharp.height(), sharp.width());
    let three = expand_channels(sharp);
    let linear: Vec<f64> = match sharp.encoding() {
        Encoding::Display => three.iter().map(|v| v.powf(gamma)).collect(),
        Encoding::Linear => three,
    };
    let (num, den) = scatter_core(&linear, radius.data(), h, w, beta);
    let mut out = vec![0.0; h * w * 3];
    for t in 0..h * w {
        for c in 0..3 {
            let u = num[t * 3 + c] / den[t];
            out[t * 3 + c] = match sharp.encoding() {
                Encoding::Display => u.max(0.0).powf(1.0 / gamma),
                Encoding::Linear => u,
            };
        }
    }
    let out = collapse_channels(sharp.channels(), out);
    Image::from_clamped(h, w, sharp.channels(), sharp.encoding(), out)
}

fn expand_channels(img: &Image) -> Vec<f64> {
    if img.channels() == 3 {
        img.data().to_vec()
    } else {
        img.data().iter().flat_map(|&v| [v, v, v]).collect()
    }
}

fn collapse_channels(channels: usize, data: Vec<f64>) -> Vec<f64> {
    if channels == 3 {
        data
    } else {
        data.chunks_exact(3).map(|px| px[0]).collect()
    }
}

/// Tape op: bokeh of a fixed display-encoded image, differentiable with
/// respect to the radius map (and through it the defocus parameters).
pub struct ScatterRenderOp {
    /// Display-encoded h·w·3 source pixels.
    pub img_display: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    pub beta: f64,
}

impl ScatterRenderOp {
    pub fn from_image(img: &Image, gamma: f64) -> Result<Self> {
        if img.encoding() != Encoding::Display {
            return Err(Error::Parameter(
                "ScatterRenderOp expects a display-encoded image".into(),
            ));
        }
        Ok(ScatterRenderOp {
            img_display: expand_channels(img),
            height: img.height(),
            width: img.width(),
            gamma,
            beta: BETA,
        })
    }

    pub fn from_image_beta(img: &Image, gamma: f64, beta: f64) -> Result<Self> {
        Ok(ScatterRenderOp {
            beta,
            ..Self::from_image(img, gamma)?
        })
    }
}

impl CustomOp for ScatterRenderOp {
    fn name(&self) -> &'static str {
        "scatter_render"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let radius = inputs[0];
        let (h, w) = (self.height, self.width);
        if radius.shape() != (h, w) {
            return Err(Error::Shape(format!(
                "scatter_render: radius {:?} vs image {h}x{w}",
                radius.shape()
            )));
        }
        if !radius.data().iter().all(|r| r.is_finite() && *r >= 0.0) {
            return Err(Error::Numeric(
                "blur radii must be finite and non-negative".into(),
            ));
        }
        let linear: Vec<f64> = self.img_display.iter().map(|v| v.powf(self.gamma)).collect();
        let (num, den) = scatter_core(&linear, radius.data(), h, w, self.beta);
        let mut u = vec![0.0; h * w * 3];
        let mut out = vec![0.0; h * w * 3];
        for t in 0..h * w {
            for c in 0..3 {
                u[t * 3 + c] = num[t * 3 + c] / den[t];
                out[t * 3 + c] = u[t * 3 + c].max(0.0).powf(1.0 / self.gamma);
            }
        }
        let saved = vec![
            Tensor::new(h * w, 3, u)?,
            Tensor::new(h, w, den)?,
            Tensor::new(h * w, 3, linear)?,
        ];
        Ok((Tensor::new(h * w, 3, out)?, saved))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let radius = inputs[0].data();
        let (h, w) = (self.height, self.width);
        let u = saved[0].data();
        let den = saved[1].data();
        let linear = saved[2].data();
        let g = grad_out.data();

        // ĝ = ḡ · ∂out/∂u for the final 1/γ power.
        let inv_gamma = 1.0 / self.gamma;
        let mut ghat = vec![0.0; h * w * 3];
        for i in 0..h * w * 3 {
            let base = u[i].max(1e-12);
            ghat[i] = g[i] * inv_gamma * base.powf(inv_gamma - 1.0);
        }
        // Per-target pull coefficient against each source's radiance:
        // ∂L/∂w(s,t) = Σ_c ĝ[t,c]·(I_c(s) − u[t,c]) / den[t].
        let beta = self.beta;
        let mut grad = vec![0.0; h * w];
        grad.par_chunks_mut(w).enumerate().for_each(|(sy, grow)| {
            let sy = sy as i64;
            for sx in 0..w as i64 {
                let s = (sy * w as i64 + sx) as usize;
                let r = radius[s];
                let bound_sq = window_sq(r);
                let reach = r.ceil() as i64 + 1;
                let gmax = r.max(R_MIN);
                let g2 = gmax * gmax;
                let dgdr = if r > R_MIN { -2.0 / (g2 * gmax) } else { 0.0 };
                let mut acc = 0.0;
                let y0 = (sy - reach).max(0);
                let y1 = (sy + reach).min(h as i64 - 1);
                let x0 = (sx - reach).max(0);
                let x1 = (sx + reach).min(w as i64 - 1);
                for ty in y0..=y1 {
                    let dy2 = (ty - sy) * (ty - sy);
                    for tx in x0..=x1 {
                        let d2 = dy2 + (tx - sx) * (tx - sx);
                        if d2 >= bound_sq {
                            continue;
                        }
                        let t = (ty * w as i64 + tx) as usize;
                        let d = (d2 as f64).sqrt();
                        let th = (beta * (r - d)).tanh();
                        let hval = 0.5 + 0.5 * th;
                        let hprime = 0.5 * beta * (1.0 - th * th);
                        let dw_dr = hprime / g2 + hval * dgdr;
                        let mut pull = 0.0;
                        for c in 0..3 {
                            pull += ghat[t * 3 + c] * (linear[s * 3 + c] - u[t * 3 + c]);
                        }
                        acc += pull / den[t] * dw_dr;
                    }
                }
                grow[sx as usize] = acc;
            }
        });
        Ok(vec![Some(Tensor::new(h, w, grad)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_grad, ParamStore, Tape};
    use crate::bokeh::{coc_radius_tape, smooth_heaviside, DefocusParams};
    use crate::rng::Rng;
    use std::sync::Arc;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * 3).map(|_| 0.05 + 0.9 * rng.f64()).collect();
        Image::new(h, w, 3, Encoding::Display, data).unwrap()
    }

    /// Independent O(N²) reference: for every target loop over every
    /// source and apply the kernel definition directly.
    fn brute_force(img: &Image, radius: &ScalarMap, gamma: f64) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let lin: Vec<f64> = img.data().iter().map(|v| v.powf(gamma)).collect();
        let mut out = vec![0.0; h * w * 3];
        for ty in 0..h {
            for tx in 0..w {
                let mut num = [0.0f64; 3];
                let mut den = 0.0f64;
                for sy in 0..h {
                    for sx in 0..w {
                        let s = sy * w + sx;
                        let r = radius.data()[s];
                        let d2 = ((ty as f64 - sy as f64).powi(2)
                            + (tx as f64 - sx as f64).powi(2)) as f64;
                        let d = d2.sqrt();
                        if d < r.ceil() + 1.0 {
                            let wgt = crate::bokeh::scatter_weight(r, d);
                            for c in 0..3 {
                                num[c] += wgt * lin[s * 3 + c];
                            }
                            den += wgt;
                        }
                    }
                }
                for c in 0..3 {
                    out[(ty * w + tx) * 3 + c] = (num[c] / den).powf(1.0 / gamma);
                }
            }
        }
        out
    }

    #[test]
    fn zero_radius_is_identity() {
        let img = random_image(12, 14, 1);
        let radius = ScalarMap::filled(12, 14, 0.0);
        let out = scatter_render(&img, &radius, 2.0).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Image::constant(16, 16, 3, 0.37).unwrap();
        let mut rng = Rng::new(2);
        let radius = ScalarMap::new(16, 16, (0..256).map(|_| rng.f64() * 4.0).collect()).unwrap();
        let out = scatter_render(&img, &radius, 2.0).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..3u64 {
            let img = random_image(32, 32, 100 + seed);
            let mut rng = Rng::new(seed);
            let radius =
                ScalarMap::new(32, 32, (0..1024).map(|_| rng.f64() * 3.5).collect()).unwrap();
            let fast = scatter_render(&img, &radius, 2.0).unwrap();
            let slow = brute_force(&img, &radius, 2.0);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn never_exceeds_max_linear_value() {
        let img = random_image(16, 16, 7);
        let mut rng = Rng::new(8);
        let radius = ScalarMap::new(16, 16, (0..256).map(|_| rng.f64() * 5.0).collect()).unwrap();
        let max_in = img
            .data()
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        let out = scatter_render(&img, &radius, 2.0).unwrap();
        let max_out = out.data().iter().copied().fold(0.0f64, f64::max);
        assert!(max_out <= max_in + 1e-9);
    }

    #[test]
    fn point_source_spreads_with_kernel_falloff() {
        let (h, w) = (17, 17);
        let mut data = vec![0.0; h * w * 3];
        for c in 0..3 {
            data[(8 * w + 8) * 3 + c] = 1.0;
        }
        let img = Image::new(h, w, 3, Encoding::Display, data).unwrap();
        let radius = ScalarMap::filled(h, w, 3.0);
        let out = scatter_render(&img, &radius, 2.0).unwrap();
        // Neighbors at distances 1 and 2 both sit well inside the CoC; the
        // received fraction follows the H falloff of the shared kernel.
        let v1 = out.get(8, 9, 0);
        let v2 = out.get(8, 10, 0);
        assert!(v1 > 0.0 && v2 > 0.0);
        let ratio_expected = smooth_heaviside(3.0 - 1.0) / smooth_heaviside(3.0 - 2.0);
        // All sources share the same radius, so the normalization per
        // target is close to uniform away from the border and the linear
        // ratio tracks H(r-1)/H(r-2).
        let lin1 = v1 * v1;
        let lin2 = v2 * v2;
        assert!((lin1 / lin2 - ratio_expected).abs() < 0.05);
        // Beyond the truncation window nothing arrives.
        assert_eq!(out.get(8, 16, 0), 0.0);
    }

    #[test]
    fn gradient_wrt_defocus_params_matches_finite_differences() {
        let (h, w) = (16, 16);
        let img = random_image(h, w, 21);
        let mut rng = Rng::new(22);
        // Disparities kept away from the focal plane kink.
        let disp = ScalarMap::new(
            h,
            w,
            (0..h * w)
                .map(|_| {
                    let d = rng.f64();
                    if (d - 0.5).abs() < 2e-3 {
                        0.55
                    } else {
                        d
                    }
                })
                .collect(),
        )
        .unwrap();

        let mut store = ParamStore::new();
        DefocusParams::init_store(&mut store, 2.5, 0.5).unwrap();

        let eval = |store: &ParamStore| -> crate::Result<f64> {
            let mut tape = Tape::new();
            let (a, d_f) = DefocusParams::tape_nodes(store, &mut tape)?;
            let r = coc_radius_tape(&mut tape, a, d_f, &disp)?;
            let op = Arc::new(ScatterRenderOp::from_image(&img, 2.0)?);
            let blurred = tape.custom(op, &[r])?;
            let l = tape.mean_all(blurred);
            tape.value(l).item()
        };

        let mut tape = Tape::new();
        let (a, d_f) = DefocusParams::tape_nodes(&store, &mut tape).unwrap();
        let r = coc_radius_tape(&mut tape, a, d_f, &disp).unwrap();
        let op = Arc::new(ScatterRenderOp::from_image(&img, 2.0).unwrap());
        let blurred = tape.custom(op, &[r]).unwrap();
        let l = tape.mean_all(blurred);
        tape.backward(l, &mut store).unwrap();

        let fd = finite_diff_grad(eval, &store, 1e-6).unwrap();
        for name in [DefocusParams::BLOCK_A_RAW, DefocusParams::BLOCK_D_F] {
            let got = store.grad(name).unwrap()[0];
            let want = fd[name][0];
            let rel = (got - want).abs() / got.abs().max(want.abs()).max(1e-9);
            assert!(rel < 1e-3, "{name}: {got} vs {want} (rel {rel})");
        }
    }

    #[test]
    fn tape_forward_matches_plain_render() {
        let img = random_image(10, 11, 30);
        let mut rng = Rng::new(31);
        let radius =
            ScalarMap::new(10, 11, (0..110).map(|_| rng.f64() * 2.0).collect()).unwrap();
        let plain = scatter_render(&img, &radius, 2.0).unwrap();
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(10, 11, radius.data().to_vec()).unwrap());
        let op = Arc::new(ScatterRenderOp::from_image(&img, 2.0).unwrap());
        let out = tape.custom(op, &[r]).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
