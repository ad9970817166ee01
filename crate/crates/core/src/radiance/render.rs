//! Stratified sampling, volume rendering of color and disparity, and the
//! masked reconstruction loss. Plain batch functions for inference plus
//! tape ops for training.

use std::sync::Arc;

use crate::autodiff::{CustomOp, NodeId, Tape, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Division guard for disparity; rays with less expected depth mass than
/// this are flagged as all-transparent.
pub const DISPARITY_EPS: f64 = 1e-8;

/// One uniform draw per equal-width bin (jitter on) or bin centers
/// (jitter off); strictly increasing depths in [near, far].
pub fn stratified_sample(
    near: f64,
    far: f64,
    k: usize,
    jitter: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples, got {k}")));
    }
    if near >= far {
        return Err(Error::Parameter(format!("near {near} must be below far {far}")));
    }
    let width = (far - near) / k as f64;
    Ok((0..k)
        .map(|i| {
            let u = if jitter { rng.f64() } else { 0.5 };
            near + (i as f64 + u) * width
        })
        .collect())
}

/// Per-sample interval lengths: δ_i = t_{i+1} - t_i, with the terminal
/// interval defined as far - t_k.
pub fn deltas_from_depths(t: &[f64], rays: usize, k: usize, far: f64) -> Vec<f64> {
    let mut delta = vec![0.0; rays * k];
    for r in 0..rays {
        let row = &t[r * k..(r + 1) * k];
        for i in 0..k - 1 {
            delta[r * k + i] = row[i + 1] - row[i];
        }
        delta[r * k + k - 1] = far - row[k - 1];
    }
    delta
}

/// A batch of rays sampled at k depths with field responses attached.
#[derive(Clone, Debug)]
pub struct RaySampleBatch {
    pub rays: usize,
    pub k: usize,
    pub near: f64,
    pub far: f64,
    pub origins: Vec<[f64; 3]>,
    /// Unit directions.
    pub dirs: Vec<[f64; 3]>,
    /// Row-major rays×k sample depths, strictly increasing per ray.
    pub t: Vec<f64>,
    /// Row-major rays×k intervals.
    pub delta: Vec<f64>,
    /// Row-major rays×k densities (>= 0).
    pub sigma: Vec<f64>,
    /// Row-major (rays·k)×3 sample colors.
    pub color: Vec<f64>,
}

impl RaySampleBatch {
    pub fn validate(&self) -> Result<()> {
        let (r, k) = (self.rays, self.k);
        if self.t.len() != r * k
            || self.delta.len() != r * k
            || self.sigma.len() != r * k
            || self.color.len() != r * k * 3
            || self.origins.len() != r
            || self.dirs.len() != r
        {
            return Err(Error::Shape("ray batch buffer sizes disagree".into()));
        }
        for d in &self.dirs {
            let n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if (n2 - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric("ray directions must be unit length".into()));
            }
        }
        for row in self.t.chunks_exact(k) {
            for pair in row.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::Numeric(
                        "sample depths must be strictly increasing".into(),
                    ));
                }
            }
            if row[0] < self.near || row[k - 1] > self.far {
                return Err(Error::Numeric("sample depths outside [near, far]".into()));
            }
        }
        if self.sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::Numeric("densities must be non-negative".into()));
        }
        Ok(())
    }
}

/// Transmittance-weighted sample weights for one batch:
/// w_i = T_i (1 - exp(-σ_i δ_i)) with T_i = exp(-Σ_{j<i} σ_j δ_j).
///
/// Returns the weights and the residual transmittance after the last
/// sample.
pub fn volume_weights(sigma: &[f64], delta: &[f64], rays: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut weights = vec![0.0; rays * k];
    let mut residual = vec![0.0; rays];
    for r in 0..rays {
        let mut trans = 1.0;
        for i in 0..k {
            let idx = r * k + i;
            let e = (-sigma[idx] * delta[idx]).exp();
            weights[idx] = trans * (1.0 - e);
            trans *= e;
        }
        residual[r] = trans;
    }
    (weights, residual)
}

/// Rendered color per ray: Σ w_i c_i. Also returns the weights and the
/// residual transmittance.
pub fn volume_render_color(batch: &RaySampleBatch) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    batch.validate()?;
    let (rays, k) = (batch.rays, batch.k);
    let (weights, residual) = volume_weights(&batch.sigma, &batch.delta, rays, k);
    let mut colors = vec![0.0; rays * 3];
    for r in 0..rays {
        for i in 0..k {
            let w = weights[r * k + i];
            for c in 0..3 {
                colors[r * 3 + c] += w * batch.color[(r * k + i) * 3 + c];
            }
        }
    }
    Ok((colors, weights, residual))
}

/// Disparity per ray, the reciprocal of expected depth:
/// D = 1 / Σ w_i t_i, clamped to [1/far, 1/ε]. Rays with no expected
/// depth mass are flagged and clamped to the ceiling.
pub fn render_disparity(
    weights: &[f64],
    t: &[f64],
    rays: usize,
    k: usize,
    far_global: f64,
) -> (Vec<f64>, Vec<bool>) {
    let mut disp = vec![0.0; rays];
    let mut flagged = vec![false; rays];
    for r in 0..rays {
        let s: f64 = (0..k).map(|i| weights[r * k + i] * t[r * k + i]).sum();
        if s <= DISPARITY_EPS {
            disp[r] = 1.0 / DISPARITY_EPS;
            flagged[r] = true;
        } else {
            disp[r] = (1.0 / s).clamp(1.0 / far_global, 1.0 / DISPARITY_EPS);
        }
    }
    (disp, flagged)
}

/// Masked reconstruction loss: channel-summed squared error, averaged over
/// rays with mask 1. The flag reports an empty mask (loss 0).
pub fn recon_loss(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<(f64, bool)> {
    if pred.len() != target.len() || pred.len() != mask.len() * 3 {
        return Err(Error::Shape(format!(
            "recon_loss: {} predictions vs {} targets vs {} mask entries",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m > 0.5).count();
    if count == 0 {
        return Ok((0.0, true));
    }
    let mut acc = 0.0;
    for (r, &m) in mask.iter().enumerate() {
        if m > 0.5 {
            for c in 0..3 {
                let d = pred[r * 3 + c] - target[r * 3 + c];
                acc += d * d;
            }
        }
    }
    Ok((acc / count as f64, false))
}

// ---------------------------------------------------------------------------
// Tape ops

/// Tape op computing volume-rendering weights from densities.
pub struct VolumeWeightsOp {
    pub delta: Vec<f64>,
    pub rays: usize,
    pub k: usize,
}

impl CustomOp for VolumeWeightsOp {
    fn name(&self) -> &'static str {
        "volume_weights"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let sigma = inputs[0];
        if sigma.shape() != (self.rays, self.k) {
            return Err(Error::Shape(format!(
                "volume_weights expects {}x{} densities, got {:?}",
                self.rays,
                self.k,
                sigma.shape()
            )));
        }
        let (weights, _) = volume_weights(sigma.data(), &self.delta, self.rays, self.k);
        Ok((Tensor::new(self.rays, self.k, weights)?, vec![]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        _saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let sigma = inputs[0].data();
        let w = output.data();
        let g = grad_out.data();
        let (rays, k) = (self.rays, self.k);
        let mut gs = vec![0.0; rays * k];
        for r in 0..rays {
            // Suffix sums of ḡw_i · w_i, then
            // ḡσ_j = δ_j (T_j e_j ḡw_j - Σ_{i>j} ḡw_i w_i).
            let base = r * k;
            let mut suffix = 0.0;
            let mut suffixes = vec![0.0; k]; // Σ_{i>j}
            for j in (0..k).rev() {
                suffixes[j] = suffix;
                suffix += g[base + j] * w[base + j];
            }
            let mut trans = 1.0;
            for j in 0..k {
                let idx = base + j;
                let e = (-sigma[idx] * self.delta[idx]).exp();
                gs[idx] = self.delta[idx] * (trans * e * g[idx] - suffixes[j]);
                trans *= e;
            }
        }
        Ok(vec![Some(Tensor::new(rays, k, gs)?)])
    }
}

/// Row-wise dot with constant coefficients: out[r] = Σ_i x[r,i]·coef[r,i].
pub struct RowDotOp {
    pub coef: Vec<f64>,
}

impl CustomOp for RowDotOp {
    fn name(&self) -> &'static str {
        "row_dot"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let x = inputs[0];
        let (n, m) = x.shape();
        if self.coef.len() != n * m {
            return Err(Error::Shape("row_dot coefficient size mismatch".into()));
        }
        let data: Vec<f64> = (0..n)
            .map(|r| {
                (0..m)
                    .map(|i| x.data()[r * m + i] * self.coef[r * m + i])
                    .sum()
            })
            .collect();
        Ok((Tensor::new(n, 1, data)?, vec![]))
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
        let (n, m) = inputs[0].shape();
        let mut gx = vec![0.0; n * m];
        for r in 0..n {
            let g = grad_out.data()[r];
            for i in 0..m {
                gx[r * m + i] = g * self.coef[r * m + i];
            }
        }
        Ok(vec![Some(Tensor::new(n, m, gx)?)])
    }
}

/// Weighted per-ray color reduction: out[r,c] = Σ_i w[r,i]·color[r·k+i,c].
pub struct WeightedColorSumOp {
    pub k: usize,
}

impl CustomOp for WeightedColorSumOp {
    fn name(&self) -> &'static str {
        "weighted_color_sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let (w, color) = (inputs[0], inputs[1]);
        let (rays, k) = w.shape();
        if k != self.k || color.shape() != (rays * k, 3) {
            return Err(Error::Shape(format!(
                "weighted_color_sum: weights {:?} vs colors {:?}",
                w.shape(),
                color.shape()
            )));
        }
        let mut out = vec![0.0; rays * 3];
        for r in 0..rays {
            for i in 0..k {
                let wv = w.data()[r * k + i];
                for c in 0..3 {
                    out[r * 3 + c] += wv * color.data()[(r * k + i) * 3 + c];
                }
            }
        }
        Ok((Tensor::new(rays, 3, out)?, vec![]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: &[Tensor],
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (w, color) = (inputs[0], inputs[1]);
        let (rays, k) = w.shape();
        let g = grad_out.data();
        let gw = needs[0].then(|| {
            let mut gw = vec![0.0; rays * k];
            for r in 0..rays {
                for i in 0..k {
                    gw[r * k + i] = (0..3)
                        .map(|c| g[r * 3 + c] * color.data()[(r * k + i) * 3 + c])
                        .sum();
                }
            }
            Tensor::new(rays, k, gw).expect("shape")
        });
        let gc = needs[1].then(|| {
            let mut gc = vec![0.0; rays * k * 3];
            for r in 0..rays {
                for i in 0..k {
                    let wv = w.data()[r * k + i];
                    for c in 0..3 {
                        gc[(r * k + i) * 3 + c] = wv * g[r * 3 + c];
                    }
                }
            }
            Tensor::new(rays * k, 3, gc).expect("shape")
        });
        Ok(vec![gw, gc])
    }
}

/// Tape pipeline: densities and colors to rendered per-ray colors.
pub fn volume_render_color_tape(
    tape: &mut Tape,
    sigma: NodeId,
    color: NodeId,
    delta: &[f64],
    rays: usize,
    k: usize,
) -> Result<NodeId> {
    let sigma_grid = tape.reshape(sigma, rays, k)?;
    let weights = tape.custom(
        Arc::new(VolumeWeightsOp {
            delta: delta.to_vec(),
            rays,
            k,
        }),
        &[sigma_grid],
    )?;
    tape.custom(Arc::new(WeightedColorSumOp { k }), &[weights, color])
}

/// Tape pipeline: densities to clamped disparity per ray.
pub fn render_disparity_tape(
    tape: &mut Tape,
    sigma: NodeId,
    delta: &[f64],
    t: &[f64],
    rays: usize,
    k: usize,
    far_global: f64,
) -> Result<NodeId> {
    let sigma_grid = tape.reshape(sigma, rays, k)?;
    let weights = tape.custom(
        Arc::new(VolumeWeightsOp {
            delta: delta.to_vec(),
            rays,
            k,
        }),
        &[sigma_grid],
    )?;
    let expected = tape.custom(Arc::new(RowDotOp { coef: t.to_vec() }), &[weights])?;
    let guarded = tape.clamp(expected, DISPARITY_EPS, f64::INFINITY);
    let disp = tape.pow_scalar(guarded, -1.0);
    Ok(tape.clamp(disp, 1.0 / far_global, 1.0 / DISPARITY_EPS))
}

/// Masked reconstruction loss on the tape; `target` is row-major rays×3,
/// `mask` has one entry per ray. Returns the loss node and the empty-mask
/// warning flag.
pub fn recon_loss_tape(
    tape: &mut Tape,
    pred: NodeId,
    target: &[f64],
    mask: &[f64],
) -> Result<(NodeId, bool)> {
    let (rays, c) = tape.value(pred).shape();
    if c != 3 || target.len() != rays * 3 || mask.len() != rays {
        return Err(Error::Shape("recon_loss_tape: shape mismatch".into()));
    }
    let count = mask.iter().filter(|&&m| m > 0.5).count();
    if count == 0 {
        return Ok((tape.constant(Tensor::scalar(0.0)), true));
    }
    let tnode = tape.constant(Tensor::new(rays, 3, target.to_vec())?);
    let diff = tape.sub(pred, tnode)?;
    let sq = tape.mul(diff, diff)?;
    let mask3: Vec<f64> = mask
        .iter()
        .flat_map(|&m| {
            let m = if m > 0.5 { 1.0 } else { 0.0 };
            [m, m, m]
        })
        .collect();
    let mnode = tape.constant(Tensor::new(rays, 3, mask3)?);
    let masked = tape.mul(sq, mnode)?;
    let total = tape.sum_all(masked);
    Ok((tape.mul_scalar(total, 1.0 / count as f64), false))
}
