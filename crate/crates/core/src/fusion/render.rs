//! Fused dual-field volume rendering.
//!
//! Per-sample emissions of the main and ultra fields are blended by the
//! weight η and accumulated under the product-density transmittance
//! T_f(t_i) = exp(-Σ_{j<i} σ_m σ_w δ_j), exactly as the fusion model
//! defines it.

use crate::autodiff::{CustomOp, NodeId, Tape, Tensor};
use crate::{Error, Result};

/// Clamp on the σ_m·σ_w product inside the fused transmittance.
pub const DENSITY_PRODUCT_CLAMP: f64 = 1e4;

/// Plain fused forward pass over row-major rays×k batches.
///
/// Returns per-ray colors (rays×3) and the per-sample fused scalar weights
/// T_f·(η α_w + (1-η) α_m) used for fused disparity.
#[allow(clippy::too_many_arguments)]
pub fn fused_volume_render(
    sigma_m: &[f64],
    sigma_w: &[f64],
    color_m: &[f64],
    color_w: &[f64],
    eta: &[f64],
    delta: &[f64],
    rays: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut colors = vec![0.0; rays * 3];
    let mut weights = vec![0.0; rays * k];
    for r in 0..rays {
        let mut trans = 1.0;
        for i in 0..k {
            let idx = r * k + i;
            let alpha_m = 1.0 - (-sigma_m[idx] * delta[idx]).exp();
            let alpha_w = 1.0 - (-sigma_w[idx] * delta[idx]).exp();
            let e = eta[idx];
            for c in 0..3 {
                let emission =
                    e * alpha_w * color_w[idx * 3 + c] + (1.0 - e) * alpha_m * color_m[idx * 3 + c];
                colors[r * 3 + c] += trans * emission;
            }
            weights[idx] = trans * (e * alpha_w + (1.0 - e) * alpha_m);
            let product = (sigma_m[idx] * sigma_w[idx]).min(DENSITY_PRODUCT_CLAMP);
            trans *= (-product * delta[idx]).exp();
        }
    }
    (colors, weights)
}

/// Tape op over inputs [σ_m, σ_w, c_m, c_w, η]:
/// σ and η as rays×k grids, colors as (rays·k)×3.
pub struct FusedRenderOp {
    pub delta: Vec<f64>,
    pub rays: usize,
    pub k: usize,
}

impl FusedRenderOp {
    fn check(&self, inputs: &[&Tensor]) -> Result<()> {
        let (r, k) = (self.rays, self.k);
        if inputs.len() != 5 {
            return Err(Error::Shape("fused render takes 5 inputs".into()));
        }
        for (i, t) in inputs.iter().enumerate() {
            let want = if i == 2 || i == 3 {
                (r * k, 3)
            } else {
                (r, k)
            };
            if t.shape() != want {
                return Err(Error::Shape(format!(
                    "fused render input {i}: expected {want:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        if self.delta.len() != r * k {
            return Err(Error::Shape("fused render delta size mismatch".into()));
        }
        Ok(())
    }
}

impl CustomOp for FusedRenderOp {
    fn name(&self) -> &'static str {
        "fused_volume_render"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        self.check(inputs)?;
        let (colors, _) = fused_volume_render(
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            &self.delta,
            self.rays,
            self.k,
        );
        Ok((Tensor::new(self.rays, 3, colors)?, vec![]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (rays, k) = (self.rays, self.k);
        let sigma_m = inputs[0].data();
        let sigma_w = inputs[1].data();
        let color_m = inputs[2].data();
        let color_w = inputs[3].data();
        let eta = inputs[4].data();
        let g = grad_out.data();

        let mut g_sm = vec![0.0; rays * k];
        let mut g_sw = vec![0.0; rays * k];
        let mut g_cm = vec![0.0; rays * k * 3];
        let mut g_cw = vec![0.0; rays * k * 3];
        let mut g_eta = vec![0.0; rays * k];

        for r in 0..rays {
            // Forward rerun caching T_i, α, and the projected emission
            // P_i = Σ_c ḡ_c·e_i,c (needed for the transmittance chain).
            let mut trans = vec![0.0; k + 1];
            trans[0] = 1.0;
            let mut alpha_m = vec![0.0; k];
            let mut alpha_w = vec![0.0; k];
            let mut proj = vec![0.0; k];
            let mut clamped = vec![false; k];
            for i in 0..k {
                let idx = r * k + i;
                alpha_m[i] = 1.0 - (-sigma_m[idx] * delta_at(&self.delta, idx)).exp();
                alpha_w[i] = 1.0 - (-sigma_w[idx] * delta_at(&self.delta, idx)).exp();
                let e = eta[idx];
                let mut p = 0.0;
                for c in 0..3 {
                    let emission = e * alpha_w[i] * color_w[idx * 3 + c]
                        + (1.0 - e) * alpha_m[i] * color_m[idx * 3 + c];
                    p += g[r * 3 + c] * emission;
                }
                proj[i] = p;
                let raw = sigma_m[idx] * sigma_w[idx];
                clamped[i] = raw > DENSITY_PRODUCT_CLAMP;
                let product = raw.min(DENSITY_PRODUCT_CLAMP);
                trans[i + 1] = trans[i] * (-product * delta_at(&self.delta, idx)).exp();
            }
            // Suffix sums S_i = Σ_{j>i} T_j·P_j.
            let mut suffix = vec![0.0; k];
            let mut acc = 0.0;
            for i in (0..k).rev() {
                suffix[i] = acc;
                acc += trans[i] * proj[i];
            }
            for i in 0..k {
                let idx = r * k + i;
                let d = delta_at(&self.delta, idx);
                let e = eta[idx];
                let mut g_cw_dot = 0.0;
                let mut g_cm_dot = 0.0;
                for c in 0..3 {
                    let gc = g[r * 3 + c];
                    if needs[3] {
                        g_cw[idx * 3 + c] = trans[i] * e * alpha_w[i] * gc;
                    }
                    if needs[2] {
                        g_cm[idx * 3 + c] = trans[i] * (1.0 - e) * alpha_m[i] * gc;
                    }
                    g_cw_dot += gc * color_w[idx * 3 + c];
                    g_cm_dot += gc * color_m[idx * 3 + c];
                }
                if needs[4] {
                    g_eta[idx] = trans[i] * (alpha_w[i] * g_cw_dot - alpha_m[i] * g_cm_dot);
                }
                // Transmittance term: ∂T_j/∂σ_{m,i} = -σ_{w,i} δ_i T_j for
                // j > i unless the product clamp froze it.
                let chain = if clamped[i] { 0.0 } else { suffix[i] * d };
                if needs[0] {
                    let demit = trans[i] * (1.0 - e) * d * (-sigma_m[idx] * d).exp() * g_cm_dot;
                    g_sm[idx] = demit - sigma_w[idx] * chain;
                }
                if needs[1] {
                    let demit = trans[i] * e * d * (-sigma_w[idx] * d).exp() * g_cw_dot;
                    g_sw[idx] = demit - sigma_m[idx] * chain;
                }
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::new(rays, k, g_sm).expect("shape")),
            needs[1].then(|| Tensor::new(rays, k, g_sw).expect("shape")),
            needs[2].then(|| Tensor::new(rays * k, 3, g_cm).expect("shape")),
            needs[3].then(|| Tensor::new(rays * k, 3, g_cw).expect("shape")),
            needs[4].then(|| Tensor::new(rays, k, g_eta).expect("shape")),
        ])
    }
}

#[inline]
fn delta_at(delta: &[f64], idx: usize) -> f64 {
    delta[idx]
}

/// Convenience wrapper building the op on a tape.
#[allow(clippy::too_many_arguments)]
pub fn fused_render_tape(
    tape: &mut Tape,
    sigma_m: NodeId,
    sigma_w: NodeId,
    color_m: NodeId,
    color_w: NodeId,
    eta: NodeId,
    delta: &[f64],
    rays: usize,
    k: usize,
) -> Result<NodeId> {
    tape.custom(
        std::sync::Arc::new(FusedRenderOp {
            delta: delta.to_vec(),
            rays,
            k,
        }),
        &[sigma_m, sigma_w, color_m, color_w, eta],
    )
}
