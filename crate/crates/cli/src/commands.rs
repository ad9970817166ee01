//! Command implementations. Each returns `Ok(())` or an error the caller
//! maps onto the exit-code contract.

use std::path::{Path, PathBuf};

use aifield::align::align_pair;
use aifield::bokeh::{coc_radius, defocus_map, scatter_render_beta, DefocusParams};
use aifield::fusion::{
    align_dataset, load_bundle, refocus_with, save_stage, split_diopter_with, train_stage1,
    train_stage2, train_stage3, write_metrics_csv, BundleManifest, FusedScene, TrainingSet,
    BUNDLE_MANIFEST,
};
use aifield::imaging::{io, psnr, ssim, Image, ScalarMap};
use aifield::radiance::CameraModel;
use aifield::scenegen::{build_scene, emit_dataset, load_manifest, DatasetManifest};
use aifield::{Error, Result};

use crate::config::RunConfig;

pub fn cmd_gen(out: &Path, cfg: &RunConfig) -> Result<()> {
    let spec = build_scene(cfg.master_seed);
    let manifest = emit_dataset(&spec, out, &cfg.gen_options())?;
    let train = manifest.train_views().count();
    let test = manifest.test_views().count();
    println!(
        "generated {} views ({train} train / {test} test) at {}x{} in {}",
        manifest.views.len(),
        cfg.width,
        cfg.height,
        out.display()
    );
    Ok(())
}

pub fn cmd_align_dataset(dataset: &Path, cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(dataset)?;
    let fractions = align_dataset(dataset, &manifest, &cfg.align_config(), cfg.use_fg)?;
    for (id, frac) in &fractions {
        println!("view {id}: confident fraction {frac:.4}");
    }
    Ok(())
}

pub fn cmd_align_pair(main: &Path, ultra: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let main_img = io::load_png(main)?;
    let ultra_img = io::load_png(ultra)?;
    let pair = align_pair(&main_img, &ultra_img, &cfg.align_config())?;
    std::fs::create_dir_all(out)?;
    io::save_png(&pair.aligned_ultra, &out.join("ultra_aligned.png"))?;
    let conf = Image::new(
        main_img.height(),
        main_img.width(),
        1,
        aifield::imaging::Encoding::Display,
        pair.confidence.data().to_vec(),
    )?;
    io::save_png(&conf, &out.join("conf.png"))?;
    let (h, w) = (main_img.height(), main_img.width());
    io::save_pfm(
        &ScalarMap::new(h, w, pair.flow_main_to_ultra.dx().to_vec())?,
        &out.join("flow_dx.pfm"),
    )?;
    io::save_pfm(
        &ScalarMap::new(h, w, pair.flow_main_to_ultra.dy().to_vec())?,
        &out.join("flow_dy.pfm"),
    )?;
    let hom = serde_json::to_string(&pair.homography.to_array().to_vec())
        .map_err(|e| Error::Format(format!("homography encode: {e}")))?;
    std::fs::write(out.join("homography.json"), hom)?;
    let frac = pair.confidence.data().iter().filter(|&&m| m > 0.5).count() as f64
        / pair.confidence.data().len() as f64;
    println!("confident fraction {frac:.4}");
    Ok(())
}

fn bundle_manifest(dataset: &Path, cfg: &RunConfig) -> Result<BundleManifest> {
    let manifest = load_manifest(dataset)?;
    Ok(BundleManifest {
        schema_version: 1,
        dataset_dir: dataset.to_string_lossy().to_string(),
        master_seed: cfg.master_seed,
        near: manifest.near,
        far: manifest.far,
        k_samples: cfg.k_samples,
        use_fg: cfg.use_fg,
        plan: cfg.stage_plan(),
        stages_done: [false; 3],
    })
}

pub fn cmd_train(dataset: &Path, bundle: &Path, stage: &str, cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(dataset)?;
    let plan = cfg.stage_plan();
    let stages: Vec<usize> = match stage {
        "all" => vec![1, 2, 3],
        "1" => vec![1],
        "2" => vec![2],
        "3" => vec![3],
        other => {
            return Err(Error::Parameter(format!(
                "--stage must be 1, 2, 3 or all, got `{other}`"
            )))
        }
    };

    // Stage 1 starts fresh; later stages resume from the bundle.
    let (mut scene, mut bm) = if stages[0] == 1 {
        let scene = FusedScene::init(
            manifest.near,
            manifest.far,
            cfg.k_samples,
            cfg.a_init,
            cfg.d_f_init,
            cfg.master_seed,
        )?;
        (scene, bundle_manifest(dataset, cfg)?)
    } else {
        let (scene, bm) = load_bundle(bundle)?;
        for s in &stages {
            if *s >= 2 && !bm.stages_done[s - 2] {
                return Err(Error::Parameter(format!(
                    "stage {} requires stage {} checkpoints in {}",
                    s,
                    s - 1,
                    bundle.display()
                )));
            }
        }
        (scene, bm)
    };

    let set = TrainingSet::load(dataset, &manifest, cfg.use_fg)?;
    std::fs::create_dir_all(bundle)?;
    std::fs::write(bundle.join("config.txt"), cfg.dump())?;

    for s in stages {
        match s {
            1 => {
                let (main_log, ultra_log) = train_stage1(&mut scene, &set, &plan)?;
                bm.stages_done[0] = true;
                save_stage(bundle, &scene, 1, &bm)?;
                write_metrics_csv(&bundle.join("metrics_stage1_main.csv"), &main_log)?;
                write_metrics_csv(&bundle.join("metrics_stage1_ultra.csv"), &ultra_log)?;
                println!(
                    "stage 1 done: main loss {:.6}, ultra loss {:.6}",
                    main_log.last().map(|r| r.1).unwrap_or(f64::NAN),
                    ultra_log.last().map(|r| r.1).unwrap_or(f64::NAN)
                );
            }
            2 => {
                if !bm.stages_done[0] {
                    return Err(Error::Parameter(
                        "stage 2 requires stage 1 checkpoints".into(),
                    ));
                }
                let log = train_stage2(&mut scene, &set, &plan)?;
                bm.stages_done[1] = true;
                save_stage(bundle, &scene, 2, &bm)?;
                write_metrics_csv(&bundle.join("metrics_stage2.csv"), &log)?;
                let params = scene.defocus()?;
                println!(
                    "stage 2 done: loss {:.6}, A = {:.4}, D_f = {:.4}",
                    log.last().map(|r| r.1).unwrap_or(f64::NAN),
                    params.blur_intensity,
                    params.focal_disparity
                );
            }
            3 => {
                if !bm.stages_done[1] {
                    return Err(Error::Parameter(
                        "stage 3 requires stage 2 checkpoints".into(),
                    ));
                }
                let log = train_stage3(&mut scene, &set, &plan)?;
                bm.stages_done[2] = true;
                save_stage(bundle, &scene, 3, &bm)?;
                write_metrics_csv(&bundle.join("metrics_stage3.csv"), &log)?;
                println!(
                    "stage 3 done: loss {:.6}",
                    log.last().map(|r| r.1).unwrap_or(f64::NAN)
                );
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn camera_for(
    bundle_manifest: &BundleManifest,
    view: Option<usize>,
    pose: Option<&Path>,
) -> Result<CameraModel> {
    match (view, pose) {
        (Some(id), None) => {
            let ds = PathBuf::from(&bundle_manifest.dataset_dir);
            let manifest = load_manifest(&ds)?;
            Ok(manifest.view(id)?.main_camera.clone())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let cam: CameraModel = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("camera decode: {e}")))?;
            cam.validate()?;
            Ok(cam)
        }
        _ => Err(Error::Parameter(
            "provide exactly one of --view or --pose".into(),
        )),
    }
}

fn require_trained(bm: &BundleManifest) -> Result<()> {
    if !bm.stages_done.iter().all(|&d| d) {
        return Err(Error::Parameter(
            "bundle is not fully trained; run all three stages first".into(),
        ));
    }
    Ok(())
}

pub fn cmd_render(
    bundle: &Path,
    view: Option<usize>,
    pose: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (scene, bm) = load_bundle(bundle)?;
    require_trained(&bm)?;
    let cam = camera_for(&bm, view, pose)?;
    let (img, disp) = scene.render_aif(&cam)?;
    let png = out.with_extension("png");
    let pfm = out.with_extension("pfm");
    io::save_png(&img, &png)?;
    io::save_pfm(&disp, &pfm)?;
    println!("wrote {} and {}", png.display(), pfm.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_refocus(
    bundle: &Path,
    view: Option<usize>,
    pose: Option<&Path>,
    aperture: f64,
    focus: f64,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let (scene, bm) = load_bundle(bundle)?;
    require_trained(&bm)?;
    let cam = camera_for(&bm, view, pose)?;
    let img = refocus_with(&scene, &cam, aperture, focus, cfg.gamma, cfg.beta)?;
    io::save_png(&img, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_split(
    bundle: &Path,
    view: Option<usize>,
    pose: Option<&Path>,
    aperture: f64,
    focus_near: f64,
    focus_far: f64,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let (scene, bm) = load_bundle(bundle)?;
    require_trained(&bm)?;
    let cam = camera_for(&bm, view, pose)?;
    let img = split_diopter_with(
        &scene,
        &cam,
        aperture,
        focus_near,
        focus_far,
        cfg.gamma,
        cfg.beta,
    )?;
    io::save_png(&img, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_bokeh(
    image: &Path,
    disparity: &Path,
    aperture: f64,
    focus: f64,
    out_image: &Path,
    out_defocus: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let img = io::load_png(image)?;
    let disp = io::load_pfm(disparity)?;
    let params = DefocusParams::new(aperture, focus)?;
    let radius = coc_radius(&params, &disp)?;
    let blurred = scatter_render_beta(&img, &radius, cfg.gamma, cfg.beta)?;
    io::save_png(&blurred, out_image)?;
    io::save_pfm(&defocus_map(&params, &disp)?, out_defocus)?;
    println!("wrote {} and {}", out_image.display(), out_defocus.display());
    Ok(())
}

pub fn cmd_eval(pred: &Path, gt: &Path, out: Option<&Path>) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(pred)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Parameter(format!(
            "no PNG files in {}",
            pred.display()
        )));
    }
    let mut missing = Vec::new();
    for n in &names {
        if !gt.join(n).exists() {
            missing.push(n.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::Parameter(format!(
            "ground-truth files missing for: {}",
            missing.join(", ")
        )));
    }
    let mut rows = String::from("view,psnr,ssim\n");
    let (mut psum, mut ssum) = (0.0, 0.0);
    for n in &names {
        let a = io::load_png(&pred.join(n))?;
        let b = io::load_png(&gt.join(n))?;
        let p = psnr(&a, &b)?;
        let s = ssim(&a, &b)?;
        rows.push_str(&format!("{n},{p:.4},{s:.6}\n"));
        psum += p;
        ssum += s;
    }
    rows.push_str(&format!(
        "mean,{:.4},{:.6}\n",
        psum / names.len() as f64,
        ssum / names.len() as f64
    ));
    print!("{rows}");
    if let Some(path) = out {
        std::fs::write(path, rows)?;
    }
    Ok(())
}

/// Sanity check used by tests: a bundle manifest file exists.
pub fn bundle_exists(bundle: &Path) -> bool {
    bundle.join(BUNDLE_MANIFEST).exists()
}

/// Per-view record access for tests and tooling.
pub fn dataset_manifest(dataset: &Path) -> Result<DatasetManifest> {
    load_manifest(dataset)
}
