//! The three-stage optimization: radiance fields, defocus parameters,
//! blending head. Stages run strictly in order with checkpoint handoff;
//! later stages freeze everything earlier ones trained.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{blend_target, fused_render_tape, fusion_loss_tape, m_blend_map, FusedScene};
use crate::align::{align_pair, AlignConfig};
use crate::autodiff::{AdamParams, AdamState, Tape, Tensor};
use crate::imaging::{io, Image, ScalarMap};
use crate::radiance::{recon_loss_tape, volume_render_color_tape, Ray};
use crate::rng::Rng;
use crate::scenegen::DatasetManifest;
use crate::{Error, Result};

/// Iteration counts, batch sizes, seeds and freeze lists per stage.
/// These are configuration, not contract; the defaults are sized for a
/// desk-scale CPU run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage1_iters: usize,
    pub stage1_batch: usize,
    pub stage2_iters: usize,
    pub stage2_patches: usize,
    pub patch_size: usize,
    /// Extra context pixels around each stage-2 patch for scatter sources.
    pub stage2_pad: usize,
    /// Number of training views pre-rendered for stage 2 (0 = all).
    pub stage2_views: usize,
    pub stage3_iters: usize,
    pub stage3_batch: usize,
    pub k_samples: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub lr_stage3: f64,
    pub a_init: f64,
    pub d_f_init: f64,
    /// Gamma-correction exponent of the bokeh model.
    pub gamma: f64,
    /// Kernel edge smoothness of the scatter weights.
    pub beta: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Block-name prefixes frozen during stage 2.
    pub stage2_freeze: Vec<String>,
    /// Block-name prefixes frozen during stage 3.
    pub stage3_freeze: Vec<String>,
    /// Prefixes re-enabled inside the stage-3 freeze (the blend head).
    pub stage3_train: Vec<String>,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            stage1_iters: 2400,
            stage1_batch: 256,
            stage2_iters: 700,
            stage2_patches: 4,
            patch_size: 16,
            stage2_pad: 4,
            stage2_views: 8,
            stage3_iters: 1000,
            stage3_batch: 256,
            k_samples: 64,
            lr_stage1: 5e-3,
            lr_stage2: 5e-3,
            lr_stage3: 2e-3,
            a_init: 5.0,
            d_f_init: 0.5,
            gamma: 2.0,
            beta: 4.0,
            seed: 42,
            log_every: 100,
            stage2_freeze: vec!["main.".into(), "ultra.".into()],
            stage3_freeze: vec!["main.".into(), "ultra.".into(), "defocus.".into()],
            stage3_train: vec!["main.blend.".into()],
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.stage1_iters,
            self.stage1_batch,
            self.stage2_iters,
            self.stage2_patches,
            self.stage3_iters,
            self.stage3_batch,
            self.patch_size,
            self.log_every,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Parameter("stage plan counts must be positive".into()));
        }
        if self.patch_size < 11 {
            return Err(Error::Parameter(
                "stage-2 patches must cover the SSIM window".into(),
            ));
        }
        for field in ["main.", "ultra."] {
            if !self.stage2_freeze.iter().any(|p| p == field) {
                return Err(Error::Parameter(format!(
                    "stage 2 must freeze `{field}`"
                )));
            }
            if !self.stage3_freeze.iter().any(|p| p == field) {
                return Err(Error::Parameter(format!(
                    "stage 3 must freeze `{field}`"
                )));
            }
        }
        if !self.stage3_freeze.iter().any(|p| p == "defocus.") {
            return Err(Error::Parameter("stage 3 must freeze the defocus params".into()));
        }
        Ok(())
    }
}

/// One aligned training view.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub id: usize,
    pub camera: crate::radiance::CameraModel,
    /// The blurred main-camera input.
    pub main: Image,
    /// Ultra-wide image aligned onto the main view.
    pub aligned_ultra: Image,
    /// Binary confidence on the main grid.
    pub confidence: Vec<f64>,
    /// Pixel indices with confidence 1 (ultra-field supervision set).
    pub confident_pixels: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub views: Vec<TrainView>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

pub const ALIGNED_ULTRA_NAME: &str = "ultra_aligned.png";
pub const CONFIDENCE_NAME: &str = "conf.png";
pub const FLOW_DX_NAME: &str = "flow_dx.pfm";
pub const FLOW_DY_NAME: &str = "flow_dy.pfm";
pub const HOMOGRAPHY_NAME: &str = "homography.json";

fn view_dir(dataset_dir: &Path, id: usize) -> std::path::PathBuf {
    dataset_dir.join(format!("view_{id:03}"))
}

/// Run alignment for every training view and write the per-view artifacts
/// (aligned PNG, confidence PNG, flow PFMs, homography JSON). Returns the
/// confident-pixel fraction per view.
pub fn align_dataset(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    cfg: &AlignConfig,
    use_fg: bool,
) -> Result<Vec<(usize, f64)>> {
    let train: Vec<_> = manifest.train_views().collect();
    train
        .par_iter()
        .map(|view| -> Result<(usize, f64)> {
            let main_path = if use_fg {
                &view.paths.main_fg
            } else {
                &view.paths.main_bg
            };
            let main = io::load_png(&dataset_dir.join(main_path))?;
            let ultra = io::load_png(&dataset_dir.join(&view.paths.ultra))?;
            let pair = align_pair(&main, &ultra, cfg).map_err(|e| {
                Error::Estimation(format!("view {}: {e}", view.id))
            })?;
            let dir = view_dir(dataset_dir, view.id);
            io::save_png(&pair.aligned_ultra, &dir.join(ALIGNED_ULTRA_NAME))?;
            let conf_img = Image::new(
                main.height(),
                main.width(),
                1,
                crate::imaging::Encoding::Display,
                pair.confidence.data().to_vec(),
            )?;
            io::save_png(&conf_img, &dir.join(CONFIDENCE_NAME))?;
            let (h, w) = (main.height(), main.width());
            io::save_pfm(
                &ScalarMap::new(h, w, pair.flow_main_to_ultra.dx().to_vec())?,
                &dir.join(FLOW_DX_NAME),
            )?;
            io::save_pfm(
                &ScalarMap::new(h, w, pair.flow_main_to_ultra.dy().to_vec())?,
                &dir.join(FLOW_DY_NAME),
            )?;
            let hom = serde_json::to_string(&pair.homography.to_array().to_vec())
                .map_err(|e| Error::Format(format!("homography encode: {e}")))?;
            std::fs::write(dir.join(HOMOGRAPHY_NAME), hom)?;
            let frac = pair.confidence.data().iter().filter(|&&m| m > 0.5).count() as f64
                / pair.confidence.data().len() as f64;
            Ok((view.id, frac))
        })
        .collect()
}

impl TrainingSet {
    /// Load training views plus their alignment artifacts.
    pub fn load(dataset_dir: &Path, manifest: &DatasetManifest, use_fg: bool) -> Result<Self> {
        let mut views = Vec::new();
        for record in manifest.train_views() {
            let main_path = if use_fg {
                &record.paths.main_fg
            } else {
                &record.paths.main_bg
            };
            let main = io::load_png(&dataset_dir.join(main_path))?;
            let dir = view_dir(dataset_dir, record.id);
            let aligned = dir.join(ALIGNED_ULTRA_NAME);
            if !aligned.exists() {
                return Err(Error::Parameter(format!(
                    "view {} has no alignment artifacts; run the align step first",
                    record.id
                )));
            }
            let aligned_ultra = io::load_png(&aligned)?;
            let conf_img = io::load_png(&dir.join(CONFIDENCE_NAME))?;
            let confidence: Vec<f64> = conf_img
                .data()
                .iter()
                .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
                .collect();
            let confident_pixels: Vec<u32> = confidence
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.5)
                .map(|(i, _)| i as u32)
                .collect();
            views.push(TrainView {
                id: record.id,
                camera: record.main_camera.clone(),
                main,
                aligned_ultra,
                confidence,
                confident_pixels,
            });
        }
        if views.is_empty() {
            return Err(Error::Parameter("training set has no views".into()));
        }
        let (w, h) = manifest.resolution;
        Ok(TrainingSet {
            views,
            width: w,
            height: h,
            near: manifest.near,
            far: manifest.far,
        })
    }
}

/// Loss curve: (iteration, loss) rows sampled every `log_every` steps.
pub type TrainingLog = Vec<(usize, f64)>;

enum Supervision {
    MainImage,
    AlignedUltra,
}

fn sample_batch(
    set: &TrainingSet,
    supervision: &Supervision,
    batch: usize,
    rng: &mut Rng,
) -> (Vec<Ray>, Vec<f64>) {
    let mut rays = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch * 3);
    let usable: Vec<&TrainView> = match supervision {
        Supervision::MainImage => set.views.iter().collect(),
        Supervision::AlignedUltra => set
            .views
            .iter()
            .filter(|v| !v.confident_pixels.is_empty())
            .collect(),
    };
    while rays.len() < batch {
        let view = usable[rng.usize_below(usable.len())];
        let pixel = match supervision {
            Supervision::MainImage => rng.usize_below(set.width * set.height),
            Supervision::AlignedUltra => {
                view.confident_pixels[rng.usize_below(view.confident_pixels.len())] as usize
            }
        };
        let x = (pixel % set.width) as f64;
        let y = (pixel / set.width) as f64;
        let ray = view
            .camera
            .ray_for_pixel(x, y)
            .expect("pixel indices are in bounds");
        rays.push(ray);
        let img = match supervision {
            Supervision::MainImage => &view.main,
            Supervision::AlignedUltra => &view.aligned_ultra,
        };
        for c in 0..3 {
            targets.push(img.data()[pixel * 3 + c]);
        }
    }
    (rays, targets)
}

fn set_stage_flags(scene: &mut FusedScene, freeze: &[String], train: &[String]) {
    scene.store.set_trainable_prefix("", true);
    for prefix in freeze {
        scene.store.set_trainable_prefix(prefix, false);
    }
    for prefix in train {
        scene.store.set_trainable_prefix(prefix, true);
    }
}

/// Stage 1: train the main field on all main-image rays and the ultra
/// field on confidence-gated aligned-ultra rays, both under the masked
/// reconstruction loss with Adam.
pub fn train_stage1(
    scene: &mut FusedScene,
    set: &TrainingSet,
    plan: &StagePlan,
) -> Result<(TrainingLog, TrainingLog)> {
    plan.validate()?;
    set_stage_flags(scene, &[], &[]);
    let main_log = train_single_field(scene, set, plan, true)?;
    let ultra_log = train_single_field(scene, set, plan, false)?;
    Ok((main_log, ultra_log))
}

fn train_single_field(
    scene: &mut FusedScene,
    set: &TrainingSet,
    plan: &StagePlan,
    is_main: bool,
) -> Result<TrainingLog> {
    let (field, supervision, label) = if is_main {
        (scene.main_field.clone(), Supervision::MainImage, "stage1.main")
    } else {
        (
            scene.ultra_field.clone(),
            Supervision::AlignedUltra,
            "stage1.ultra",
        )
    };
    let mut rng = Rng::substream(plan.seed, label);
    let mut adam = AdamState::new(AdamParams::with_lr(plan.lr_stage1));
    let mut log = TrainingLog::new();
    for iter in 0..plan.stage1_iters {
        let (rays, targets) = sample_batch(set, &supervision, plan.stage1_batch, &mut rng);
        let grid = scene.sample_grid(&rays, true, &mut rng)?;
        let mut tape = Tape::new();
        let pos = tape.constant(grid.pos_enc.clone());
        let dir = tape.constant(grid.dir_enc.clone());
        let nodes = field.forward_tape(&mut tape, &scene.store, pos, dir)?;
        let color = volume_render_color_tape(
            &mut tape,
            nodes.sigma,
            nodes.color,
            &grid.delta,
            grid.rays,
            grid.k,
        )?;
        let mask = vec![1.0; grid.rays];
        let (loss, _) = recon_loss_tape(&mut tape, color, &targets, &mask)?;
        let loss_value = tape.value(loss).item()?;
        tape.backward(loss, &mut scene.store)?;
        adam.apply(&mut scene.store)?;
        if iter % plan.log_every == 0 {
            log.push((iter, loss_value));
        }
    }
    Ok(log)
}

/// Per-view renders cached for the frozen-field stages.
pub struct Prerendered {
    pub view_ids: Vec<usize>,
    pub main_color: Vec<Image>,
    pub ultra_color: Vec<Image>,
    pub main_disparity: Vec<ScalarMap>,
}

fn prerender_views(
    scene: &FusedScene,
    set: &TrainingSet,
    limit: usize,
) -> Result<Prerendered> {
    let count = if limit == 0 {
        set.views.len()
    } else {
        limit.min(set.views.len())
    };
    // Evenly spaced subset over the arc.
    let picks: Vec<usize> = (0..count)
        .map(|i| i * set.views.len() / count)
        .collect();
    let rendered: Vec<(usize, Image, Image, ScalarMap)> = picks
        .par_iter()
        .map(|&vi| -> Result<(usize, Image, Image, ScalarMap)> {
            let view = &set.views[vi];
            let (main_img, main_disp) = scene.render_main_only(&view.camera)?;
            let (ultra_img, _) = scene.render_ultra_only(&view.camera)?;
            Ok((view.id, main_img, ultra_img, main_disp))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Prerendered {
        view_ids: Vec::new(),
        main_color: Vec::new(),
        ultra_color: Vec::new(),
        main_disparity: Vec::new(),
    };
    for (id, m, u, d) in rendered {
        out.view_ids.push(id);
        out.main_color.push(m);
        out.ultra_color.push(u);
        out.main_disparity.push(d);
    }
    Ok(out)
}

fn crop_image(img: &Image, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
    let mut data = Vec::with_capacity(h * w * img.channels());
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for c in 0..img.channels() {
                data.push(img.get(y, x, c));
            }
        }
    }
    Image::new(h, w, img.channels(), img.encoding(), data)
}

fn crop_map(map: &ScalarMap, y0: usize, x0: usize, h: usize, w: usize) -> Result<ScalarMap> {
    let mut data = Vec::with_capacity(h * w);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            data.push(map.get(y, x));
        }
    }
    ScalarMap::new(h, w, data)
}

/// Stage 2: learn (A, D_f) by matching bokeh-rendered ultra patches to the
/// rendered main patches under the SSIM loss; both fields stay frozen.
pub fn train_stage2(
    scene: &mut FusedScene,
    set: &TrainingSet,
    plan: &StagePlan,
) -> Result<TrainingLog> {
    plan.validate()?;
    set_stage_flags(scene, &plan.stage2_freeze, &[]);
    let cache = prerender_views(scene, set, plan.stage2_views)?;
    let mut rng = Rng::substream(plan.seed, "stage2");
    let mut adam = AdamState::new(AdamParams::with_lr(plan.lr_stage2));
    let mut log = TrainingLog::new();
    let ps = plan.patch_size;
    let pad = plan.stage2_pad;
    let (h, w) = (set.height, set.width);
    if h < ps + 2 * pad || w < ps + 2 * pad {
        return Err(Error::Parameter("views too small for stage-2 patches".into()));
    }
    for iter in 0..plan.stage2_iters {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(plan.stage2_patches);
        for _ in 0..plan.stage2_patches {
            let vi = rng.usize_below(cache.view_ids.len());
            let y0 = rng.usize_below(h - ps - 2 * pad + 1);
            let x0 = rng.usize_below(w - ps - 2 * pad + 1);
            let main_patch = crop_image(&cache.main_color[vi], y0 + pad, x0 + pad, ps, ps)?;
            let ultra_padded =
                crop_image(&cache.ultra_color[vi], y0, x0, ps + 2 * pad, ps + 2 * pad)?;
            let disp_padded =
                crop_map(&cache.main_disparity[vi], y0, x0, ps + 2 * pad, ps + 2 * pad)?;
            losses.push(super::focus_loss_tape_with(
                &mut tape,
                &scene.store,
                &main_patch,
                &ultra_padded,
                &disp_padded,
                pad,
                plan.gamma,
                plan.beta,
            )?);
        }
        let mut total = losses[0];
        for l in &losses[1..] {
            total = tape.add(total, *l)?;
        }
        let loss = tape.mul_scalar(total, 1.0 / losses.len() as f64);
        let loss_value = tape.value(loss).item()?;
        tape.backward(loss, &mut scene.store)?;
        adam.apply(&mut scene.store)?;
        if iter % plan.log_every == 0 {
            log.push((iter, loss_value));
        }
    }
    Ok(log)
}

/// Stage 3: train the blending head against the defocus-weighted fusion
/// target; fields and defocus parameters stay frozen.
pub fn train_stage3(
    scene: &mut FusedScene,
    set: &TrainingSet,
    plan: &StagePlan,
) -> Result<TrainingLog> {
    plan.validate()?;
    set_stage_flags(scene, &plan.stage3_freeze, &plan.stage3_train);

    // Full-view M_blend maps from the frozen defocus model.
    let disp_views: Vec<ScalarMap> = set
        .views
        .par_iter()
        .map(|view| Ok(scene.render_main_only(&view.camera)?.1))
        .collect::<Result<Vec<_>>>()?;
    let m_blend: Vec<ScalarMap> = disp_views
        .iter()
        .map(|d| m_blend_map(&scene.store, d))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = Rng::substream(plan.seed, "stage3");
    let mut adam = AdamState::new(AdamParams::with_lr(plan.lr_stage3));
    let mut log = TrainingLog::new();
    let usable: Vec<usize> = set
        .views
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.confident_pixels.is_empty())
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::Parameter("no confident pixels for stage 3".into()));
    }

    for iter in 0..plan.stage3_iters {
        // Sample confident pixels and assemble targets.
        let mut rays = Vec::with_capacity(plan.stage3_batch);
        let mut cm = Vec::with_capacity(plan.stage3_batch * 3);
        let mut cw = Vec::with_capacity(plan.stage3_batch * 3);
        let mut mb = Vec::with_capacity(plan.stage3_batch);
        for _ in 0..plan.stage3_batch {
            let vi = usable[rng.usize_below(usable.len())];
            let view = &set.views[vi];
            let pixel =
                view.confident_pixels[rng.usize_below(view.confident_pixels.len())] as usize;
            let x = (pixel % set.width) as f64;
            let y = (pixel / set.width) as f64;
            rays.push(view.camera.ray_for_pixel(x, y)?);
            for c in 0..3 {
                cm.push(view.main.data()[pixel * 3 + c]);
                cw.push(view.aligned_ultra.data()[pixel * 3 + c]);
            }
            mb.push(m_blend[vi].data()[pixel]);
        }
        let targets = blend_target(&cm, &cw, &mb)?;

        let grid = scene.sample_grid(&rays, true, &mut rng)?;
        let eval = scene.eval_fields(&grid)?;
        let n = grid.rays;
        let k = grid.k;

        let mut tape = Tape::new();
        let feats = tape.constant(eval.features_m.clone());
        let wh = tape.param(&scene.store, "main.blend.w")?;
        let bh = tape.param(&scene.store, "main.blend.b")?;
        let eta_raw = tape.affine(feats, wh, bh)?;
        let eta_col = tape.sigmoid(eta_raw);
        let eta = tape.reshape(eta_col, n, k)?;
        let sm = tape.constant(Tensor::new(n, k, eval.sigma_m.clone())?);
        let sw = tape.constant(Tensor::new(n, k, eval.sigma_w.clone())?);
        let cmn = tape.constant(Tensor::new(n * k, 3, eval.color_m.clone())?);
        let cwn = tape.constant(Tensor::new(n * k, 3, eval.color_w.clone())?);
        let fused = fused_render_tape(&mut tape, sm, sw, cmn, cwn, eta, &grid.delta, n, k)?;
        let mask = vec![1.0; n];
        let (loss, _) = fusion_loss_tape(&mut tape, fused, &targets, &mask)?;
        let loss_value = tape.value(loss).item()?;
        tape.backward(loss, &mut scene.store)?;
        adam.apply(&mut scene.store)?;
        if iter % plan.log_every == 0 {
            log.push((iter, loss_value));
        }
    }
    Ok(log)
}
