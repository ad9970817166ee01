//! Differentiable thin-lens defocus: circle-of-confusion radius, smooth
//! scatter kernel, bokeh rendering and defocus maps driven by the
//! learnable blur intensity A and focal disparity D_f.

mod scatter;

pub use scatter::{scatter_render, scatter_render_beta, ScatterRenderOp};

use crate::autodiff::{kernels, NodeId, ParamStore, Tape};
use crate::imaging::ScalarMap;
use crate::{Error, Result};

/// Smoothness of the kernel edge.
pub const BETA: f64 = 4.0;
/// Radius guard in the 1/r² kernel normalization.
pub const R_MIN: f64 = 0.5;

/// Learnable defocus model values: blur intensity A (pixels per unit
/// disparity) and focal disparity D_f.
///
/// A is kept non-negative through a softplus reparameterization of the
/// stored raw parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefocusParams {
    pub blur_intensity: f64,
    pub focal_disparity: f64,
}

impl DefocusParams {
    pub const BLOCK_A_RAW: &'static str = "defocus.a_raw";
    pub const BLOCK_D_F: &'static str = "defocus.d_f";

    pub fn new(blur_intensity: f64, focal_disparity: f64) -> Result<Self> {
        if blur_intensity < 0.0 || !blur_intensity.is_finite() {
            return Err(Error::Parameter(format!(
                "blur intensity must be finite and >= 0, got {blur_intensity}"
            )));
        }
        if !focal_disparity.is_finite() {
            return Err(Error::Parameter("focal disparity must be finite".into()));
        }
        Ok(DefocusParams {
            blur_intensity,
            focal_disparity,
        })
    }

    /// Register the trainable raw blocks; A enters through softplus.
    pub fn init_store(store: &mut ParamStore, a_init: f64, d_f_init: f64) -> Result<()> {
        store.add_scalar(Self::BLOCK_A_RAW, softplus_inverse(a_init), true)?;
        store.add_scalar(Self::BLOCK_D_F, d_f_init, true)
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        DefocusParams::new(
            kernels::softplus(store.scalar(Self::BLOCK_A_RAW)?),
            store.scalar(Self::BLOCK_D_F)?,
        )
    }

    /// Tape nodes for (A, D_f) with the softplus reparameterization applied.
    pub fn tape_nodes(store: &ParamStore, tape: &mut Tape) -> Result<(NodeId, NodeId)> {
        let a_raw = tape.param(store, Self::BLOCK_A_RAW)?;
        let a = tape.softplus(a_raw);
        let d_f = tape.param(store, Self::BLOCK_D_F)?;
        Ok((a, d_f))
    }
}

/// Inverse of ln(1+eˣ); stable for large y.
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    y + (-(-y).exp_m1()).ln()
}

/// Smooth step 1/2 + 1/2·tanh(βx): monotone, 0.5 at zero, saturating to
/// {0, 1}.
pub fn smooth_heaviside(x: f64) -> f64 {
    smooth_heaviside_beta(x, BETA)
}

pub fn smooth_heaviside_beta(x: f64, beta: f64) -> f64 {
    0.5 + 0.5 * (beta * x).tanh()
}

/// Scatter kernel weight for a source with CoC radius `r_center` seen at
/// offset distance `d`: H(r - d) / max(r, R_MIN)².
pub fn scatter_weight(r_center: f64, d: f64) -> f64 {
    scatter_weight_beta(r_center, d, BETA)
}

pub fn scatter_weight_beta(r_center: f64, d: f64, beta: f64) -> f64 {
    let g = r_center.max(R_MIN);
    smooth_heaviside_beta(r_center - d, beta) / (g * g)
}

/// CoC radius per pixel: r = A·|D_f - D|.
pub fn coc_radius(params: &DefocusParams, disparity: &ScalarMap) -> Result<ScalarMap> {
    if !disparity.data().iter().all(|d| d.is_finite()) {
        return Err(Error::Numeric(
            "disparity map contains non-finite values".into(),
        ));
    }
    let data = disparity
        .data()
        .iter()
        .map(|&d| params.blur_intensity * (params.focal_disparity - d).abs())
        .collect();
    ScalarMap::new(disparity.height(), disparity.width(), data)
}

/// The defocus map is the CoC radius map of the shared thin-lens model.
pub fn defocus_map(params: &DefocusParams, disparity: &ScalarMap) -> Result<ScalarMap> {
    coc_radius(params, disparity)
}

/// Tape version of [`coc_radius`]: differentiable with respect to the
/// (A, D_f) nodes; the disparity map is a constant.
pub fn coc_radius_tape(
    tape: &mut Tape,
    a: NodeId,
    d_f: NodeId,
    disparity: &ScalarMap,
) -> Result<NodeId> {
    let (h, w) = (disparity.height(), disparity.width());
    let d = tape.constant(crate::autodiff::Tensor::new(
        h,
        w,
        disparity.data().to_vec(),
    )?);
    let df_b = tape.broadcast(d_f, h, w)?;
    let diff = tape.sub(df_b, d)?;
    let mag = tape.abs(diff);
    let a_b = tape.broadcast(a, h, w)?;
    tape.mul(a_b, mag)
}

/// Affine rescale of a map to [0, 1]; constant maps collapse to zeros.
pub fn normalize_map(m: &ScalarMap) -> ScalarMap {
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = if range <= 0.0 {
        vec![0.0; m.data().len()]
    } else {
        m.data().iter().map(|&v| (v - lo) / range).collect()
    };
    ScalarMap::new(m.height(), m.width(), data).expect("same dims")
}
