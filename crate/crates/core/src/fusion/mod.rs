//! The fused scene: two radiance fields plus the learnable defocus model
//! and blending-weight head, trained in three stages and rendered into
//! all-in-focus novel views with controllable depth of field.

mod bundle;
mod render;
mod stages;

pub use bundle::{load_bundle, save_stage, write_metrics_csv, BundleManifest, BUNDLE_MANIFEST};
pub use render::{fused_render_tape, fused_volume_render, FusedRenderOp, DENSITY_PRODUCT_CLAMP};
pub use stages::{
    align_dataset, train_stage1, train_stage2, train_stage3, StagePlan, TrainView, TrainingLog,
    TrainingSet, ALIGNED_ULTRA_NAME, CONFIDENCE_NAME, FLOW_DX_NAME, FLOW_DY_NAME, HOMOGRAPHY_NAME,
};

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{CustomOp, NodeId, ParamStore, Tape, Tensor};
use crate::bokeh::{
    coc_radius, coc_radius_tape, defocus_map, normalize_map, DefocusParams, ScatterRenderOp,
};
use crate::imaging::{ssim_tape, Encoding, Image, ScalarMap};
use crate::radiance::{
    encode_batch, render_disparity, stratified_sample, CameraModel, RadianceField, Ray,
};
use crate::rng::Rng;
use crate::{Error, Result};

pub const GAMMA: f64 = 2.0;

/// Main field (with blending head), ultra-wide field, learnable defocus
/// parameters and scene bounds; the trained artifact rendered at
/// inference.
#[derive(Clone, Debug)]
pub struct FusedScene {
    pub main_field: RadianceField,
    pub ultra_field: RadianceField,
    pub store: ParamStore,
    pub near: f64,
    pub far: f64,
    pub k_samples: usize,
}

impl FusedScene {
    /// Fresh scene with randomly initialized fields and the defocus
    /// parameters at their initial values.
    pub fn init(
        near: f64,
        far: f64,
        k_samples: usize,
        a_init: f64,
        d_f_init: f64,
        seed: u64,
    ) -> Result<Self> {
        let main_field = RadianceField::standard("main", true);
        let ultra_field = RadianceField::standard("ultra", false);
        let mut store = ParamStore::new();
        let mut rng = Rng::substream(seed, "fields.init");
        main_field.init_params(&mut store, &mut rng)?;
        ultra_field.init_params(&mut store, &mut rng)?;
        DefocusParams::init_store(&mut store, a_init, d_f_init)?;
        let scene = FusedScene {
            main_field,
            ultra_field,
            store,
            near,
            far,
            k_samples,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.main_field.l_pos != self.ultra_field.l_pos
            || self.main_field.l_dir != self.ultra_field.l_dir
        {
            return Err(Error::Parameter(
                "both fields must share the positional-encoding config".into(),
            ));
        }
        if !self.main_field.blend_head {
            return Err(Error::Parameter(
                "the main field carries the blend head".into(),
            ));
        }
        if self.near <= 0.0 || self.near >= self.far {
            return Err(Error::Parameter(
                "scene bounds must satisfy 0 < near < far".into(),
            ));
        }
        if self.k_samples < 2 {
            return Err(Error::Parameter("need at least 2 samples per ray".into()));
        }
        Ok(())
    }

    pub fn defocus(&self) -> Result<DefocusParams> {
        DefocusParams::from_store(&self.store)
    }

    /// Scene-coordinate conditioning for the positional encoding.
    fn norm_center(&self) -> [f64; 3] {
        [0.0, 0.0, 0.5 * (self.near + self.far)]
    }

    fn norm_scale(&self) -> f64 {
        0.5 * self.far
    }

    /// Stratified sample grid along a batch of rays, with encodings ready
    /// for field evaluation.
    pub fn sample_grid(&self, rays: &[Ray], jitter: bool, rng: &mut Rng) -> Result<SampleGrid> {
        let k = self.k_samples;
        let n = rays.len();
        let mut t = Vec::with_capacity(n * k);
        for _ in 0..n {
            t.extend(stratified_sample(self.near, self.far, k, jitter, rng)?);
        }
        let delta = crate::radiance::deltas_from_depths(&t, n, k, self.far);
        let center = self.norm_center();
        let scale = self.norm_scale();
        let mut points = Vec::with_capacity(n * k);
        let mut dirs = Vec::with_capacity(n * k);
        for (r, ray) in rays.iter().enumerate() {
            for i in 0..k {
                let ti = t[r * k + i];
                points.push([
                    (ray.origin[0] + ti * ray.dir[0] - center[0]) / scale,
                    (ray.origin[1] + ti * ray.dir[1] - center[1]) / scale,
                    (ray.origin[2] + ti * ray.dir[2] - center[2]) / scale,
                ]);
                dirs.push(ray.dir);
            }
        }
        Ok(SampleGrid {
            rays: n,
            k,
            t,
            delta,
            pos_enc: encode_batch(&points, self.main_field.l_pos),
            dir_enc: encode_batch(&dirs, self.main_field.l_dir),
        })
    }

    /// Evaluate both fields (plain path) on a sample grid.
    pub fn eval_fields(&self, grid: &SampleGrid) -> Result<DualFieldEval> {
        let main = self
            .main_field
            .forward_plain(&self.store, &grid.pos_enc, &grid.dir_enc)?;
        let ultra = self
            .ultra_field
            .forward_plain(&self.store, &grid.pos_enc, &grid.dir_enc)?;
        Ok(DualFieldEval {
            sigma_m: main.sigma,
            color_m: main.color,
            eta: main.eta.expect("main field carries the blend head"),
            features_m: main.features,
            sigma_w: ultra.sigma,
            color_w: ultra.color,
        })
    }

    fn rays_for_view(&self, cam: &CameraModel) -> Result<Vec<Ray>> {
        let pixels: Vec<(f64, f64)> = (0..cam.height)
            .flat_map(|y| (0..cam.width).map(move |x| (x as f64, y as f64)))
            .collect();
        cam.generate_rays(&pixels)
    }

    /// All-in-focus inference: fused volume rendering over every pixel,
    /// jitter off. Returns the image and the fused disparity map.
    pub fn render_aif(&self, cam: &CameraModel) -> Result<(Image, ScalarMap)> {
        self.render_full(cam, RenderMode::Fused)
    }

    /// Stage-1 main field rendered alone (the single-camera baseline).
    pub fn render_main_only(&self, cam: &CameraModel) -> Result<(Image, ScalarMap)> {
        self.render_full(cam, RenderMode::MainOnly)
    }

    pub fn render_ultra_only(&self, cam: &CameraModel) -> Result<(Image, ScalarMap)> {
        self.render_full(cam, RenderMode::UltraOnly)
    }

    fn render_full(&self, cam: &CameraModel, mode: RenderMode) -> Result<(Image, ScalarMap)> {
        cam.validate()?;
        let rays = self.rays_for_view(cam)?;
        let chunks: Vec<&[Ray]> = rays.chunks(1024).collect();
        let results: Vec<(Vec<f64>, Vec<f64>)> = chunks
            .par_iter()
            .map(|ray_chunk| -> Result<(Vec<f64>, Vec<f64>)> {
                // Jitter off: the RNG is never drawn from.
                let mut rng = Rng::new(0);
                let grid = self.sample_grid(ray_chunk, false, &mut rng)?;
                let eval = self.eval_fields(&grid)?;
                let n = ray_chunk.len();
                let k = self.k_samples;
                let (colors, weights) = match mode {
                    RenderMode::Fused => fused_volume_render(
                        &eval.sigma_m,
                        &eval.sigma_w,
                        &eval.color_m,
                        &eval.color_w,
                        &eval.eta,
                        &grid.delta,
                        n,
                        k,
                    ),
                    RenderMode::MainOnly => {
                        single_field_render(&eval.sigma_m, &eval.color_m, &grid.delta, n, k)
                    }
                    RenderMode::UltraOnly => {
                        single_field_render(&eval.sigma_w, &eval.color_w, &grid.delta, n, k)
                    }
                };
                let (disp, _) = render_disparity(&weights, &grid.t, n, k, self.far);
                Ok((colors, disp))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut colors = Vec::with_capacity(rays.len() * 3);
        let mut disp = Vec::with_capacity(rays.len());
        for (c, d) in results {
            colors.extend(c);
            disp.extend(d);
        }
        Ok((
            Image::from_clamped(cam.height, cam.width, 3, Encoding::Display, colors)?,
            ScalarMap::new(cam.height, cam.width, disp)?,
        ))
    }
}

fn single_field_render(
    sigma: &[f64],
    color: &[f64],
    delta: &[f64],
    rays: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (weights, _) = crate::radiance::volume_weights(sigma, delta, rays, k);
    let mut colors = vec![0.0; rays * 3];
    for r in 0..rays {
        for i in 0..k {
            let w = weights[r * k + i];
            for c in 0..3 {
                colors[r * 3 + c] += w * color[(r * k + i) * 3 + c];
            }
        }
    }
    (colors, weights)
}

#[derive(Clone, Copy, Debug)]
enum RenderMode {
    Fused,
    MainOnly,
    UltraOnly,
}

/// Sampled ray geometry with encodings.
pub struct SampleGrid {
    pub rays: usize,
    pub k: usize,
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub pos_enc: Tensor,
    pub dir_enc: Tensor,
}

/// Plain per-sample outputs of both fields.
pub struct DualFieldEval {
    pub sigma_m: Vec<f64>,
    pub color_m: Vec<f64>,
    pub eta: Vec<f64>,
    pub features_m: Tensor,
    pub sigma_w: Vec<f64>,
    pub color_w: Vec<f64>,
}

/// Per-pixel fusion target: C_fuse = M_blend·C_w + (1-M_blend)·C_m, with
/// M_blend the defocus map normalized over the full view.
pub fn blend_target(color_m: &[f64], color_w: &[f64], m_blend: &[f64]) -> Result<Vec<f64>> {
    if color_m.len() != color_w.len() || color_m.len() != m_blend.len() * 3 {
        return Err(Error::Shape("blend_target: shapes disagree".into()));
    }
    Ok(color_m
        .iter()
        .zip(color_w)
        .enumerate()
        .map(|(i, (&cm, &cw))| cm + m_blend[i / 3] * (cw - cm))
        .collect())
}

/// Masked MSE of the fused render against the fusion target; identical
/// reduction conventions to the reconstruction loss.
pub fn fusion_loss_tape(
    tape: &mut Tape,
    fused: NodeId,
    target: &[f64],
    mask: &[f64],
) -> Result<(NodeId, bool)> {
    crate::radiance::recon_loss_tape(tape, fused, target, mask)
}

/// Center crop of a grid tensor; backward zero-pads.
struct CenterCropOp {
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl CustomOp for CenterCropOp {
    fn name(&self) -> &'static str {
        "center_crop"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let x = inputs[0];
        let (h, w) = x.shape();
        if h != self.out_h + 2 * self.pad || w != self.out_w + 2 * self.pad {
            return Err(Error::Shape("center_crop: size mismatch".into()));
        }
        let mut out = Vec::with_capacity(self.out_h * self.out_w);
        for y in 0..self.out_h {
            let row = (y + self.pad) * w + self.pad;
            out.extend_from_slice(&x.data()[row..row + self.out_w]);
        }
        Ok((Tensor::new(self.out_h, self.out_w, out)?, vec![]))
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
        let mut gx = vec![0.0; h * w];
        for y in 0..self.out_h {
            for x in 0..self.out_w {
                gx[(y + self.pad) * w + x + self.pad] = grad_out.data()[y * self.out_w + x];
            }
        }
        Ok(vec![Some(Tensor::new(h, w, gx)?)])
    }
}

/// Defocus-matching loss: 1 - SSIM between the rendered main patch and
/// the bokeh of the rendered ultra patch under (A, D_f).
///
/// The ultra patch and disparity carry `pad` extra pixels on every side so
/// scatter sources just outside the scored region contribute; SSIM is
/// evaluated on the central crop matching `main_patch`.
pub fn focus_loss_tape(
    tape: &mut Tape,
    store: &ParamStore,
    main_patch: &Image,
    ultra_padded: &Image,
    disparity_padded: &ScalarMap,
    pad: usize,
) -> Result<NodeId> {
    focus_loss_tape_with(tape, store, main_patch, ultra_padded, disparity_padded, pad, GAMMA, crate::bokeh::BETA)
}

/// [`focus_loss_tape`] with explicit gamma-correction and kernel-smoothness
/// constants.
#[allow(clippy::too_many_arguments)]
pub fn focus_loss_tape_with(
    tape: &mut Tape,
    store: &ParamStore,
    main_patch: &Image,
    ultra_padded: &Image,
    disparity_padded: &ScalarMap,
    pad: usize,
    gamma: f64,
    beta: f64,
) -> Result<NodeId> {
    let (ph, pw) = (main_patch.height(), main_patch.width());
    if ultra_padded.height() != ph + 2 * pad || ultra_padded.width() != pw + 2 * pad {
        return Err(Error::Shape("focus_loss: padded patch size mismatch".into()));
    }
    if disparity_padded.height() != ph + 2 * pad || disparity_padded.width() != pw + 2 * pad {
        return Err(Error::Shape("focus_loss: padded disparity mismatch".into()));
    }
    if ph < 11 || pw < 11 {
        return Err(Error::Shape(format!(
            "focus_loss patch {ph}x{pw} is smaller than the SSIM window"
        )));
    }
    let (a, d_f) = DefocusParams::tape_nodes(store, tape)?;
    let radius = coc_radius_tape(tape, a, d_f, disparity_padded)?;
    let op = Arc::new(ScatterRenderOp::from_image_beta(ultra_padded, gamma, beta)?);
    let blurred = tape.custom(op, &[radius])?; // [(H·W)×3] padded
    let gray = tape.row_mean(blurred)?;
    let grid = tape.reshape(gray, ph + 2 * pad, pw + 2 * pad)?;
    let cropped = if pad == 0 {
        grid
    } else {
        tape.custom(
            Arc::new(CenterCropOp {
                pad,
                out_h: ph,
                out_w: pw,
            }),
            &[grid],
        )?
    };
    let main_gray = tape.constant(Tensor::new(ph, pw, main_patch.to_gray())?);
    let s = ssim_tape(tape, main_gray, cropped)?;
    let neg = tape.mul_scalar(s, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Refocusing: all-in-focus render plus fused disparity, re-blurred with a
/// user-chosen aperture and focal disparity.
pub fn refocus(
    scene: &FusedScene,
    cam: &CameraModel,
    a_user: f64,
    d_f_user: f64,
) -> Result<Image> {
    refocus_with(scene, cam, a_user, d_f_user, GAMMA, crate::bokeh::BETA)
}

pub fn refocus_with(
    scene: &FusedScene,
    cam: &CameraModel,
    a_user: f64,
    d_f_user: f64,
    gamma: f64,
    beta: f64,
) -> Result<Image> {
    let (aif, disp) = scene.render_aif(cam)?;
    let params = DefocusParams::new(a_user, d_f_user)?;
    let radius = coc_radius(&params, &disp)?;
    crate::bokeh::scatter_render_beta(&aif, &radius, gamma, beta)
}

/// Split diopter: two in-focus planes; the blur radius follows the nearer
/// of the two focal disparities. `d_f_near` carries the larger disparity.
pub fn split_diopter(
    scene: &FusedScene,
    cam: &CameraModel,
    a_user: f64,
    d_f_near: f64,
    d_f_far: f64,
) -> Result<Image> {
    split_diopter_with(scene, cam, a_user, d_f_near, d_f_far, GAMMA, crate::bokeh::BETA)
}

#[allow(clippy::too_many_arguments)]
pub fn split_diopter_with(
    scene: &FusedScene,
    cam: &CameraModel,
    a_user: f64,
    d_f_near: f64,
    d_f_far: f64,
    gamma: f64,
    beta: f64,
) -> Result<Image> {
    if d_f_near < d_f_far {
        return Err(Error::Parameter(format!(
            "split diopter wants d_f_near >= d_f_far (disparity order), got {d_f_near} < {d_f_far}"
        )));
    }
    let (aif, disp) = scene.render_aif(cam)?;
    let data: Vec<f64> = disp
        .data()
        .iter()
        .map(|&d| a_user * (d - d_f_near).abs().min((d - d_f_far).abs()))
        .collect();
    let radius = ScalarMap::new(disp.height(), disp.width(), data)?;
    crate::bokeh::scatter_render_beta(&aif, &radius, gamma, beta)
}

/// Diagnostic composite of the blending weight along main-field weights.
pub fn render_blend_mask(scene: &FusedScene, cam: &CameraModel) -> Result<ScalarMap> {
    cam.validate()?;
    let rays = scene.rays_for_view(cam)?;
    let mut rng = Rng::new(0);
    let mut out = Vec::with_capacity(rays.len());
    for ray_chunk in rays.chunks(1024) {
        let grid = scene.sample_grid(ray_chunk, false, &mut rng)?;
        let eval = scene.eval_fields(&grid)?;
        let (weights, _) =
            crate::radiance::volume_weights(&eval.sigma_m, &grid.delta, ray_chunk.len(), grid.k);
        for r in 0..ray_chunk.len() {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for i in 0..grid.k {
                acc += weights[r * grid.k + i] * eval.eta[r * grid.k + i];
                wsum += weights[r * grid.k + i];
            }
            out.push(if wsum > 1e-9 { acc / wsum } else { 0.5 });
        }
    }
    ScalarMap::new(cam.height, cam.width, out)
}

/// Normalized defocus map of a rendered disparity under the stored params.
pub fn m_blend_map(store: &ParamStore, disparity: &ScalarMap) -> Result<ScalarMap> {
    let params = DefocusParams::from_store(store)?;
    Ok(normalize_map(&defocus_map(&params, disparity)?))
}
