//! Checkpoint bundle directory: per-stage parameter checkpoints plus a
//! JSON manifest of hyperparameters and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stages::StagePlan;
use super::FusedScene;
use crate::autodiff::{filter_blocks, load_checkpoint, overlay_blocks, save_checkpoint, ParamStore};
use crate::bokeh::DefocusParams;
use crate::radiance::RadianceField;
use crate::{Error, Result};

pub const BUNDLE_MANIFEST: &str = "bundle.json";
pub const MAIN_FIELD_CKPT: &str = "main_field.ckpt";
pub const ULTRA_FIELD_CKPT: &str = "ultra_field.ckpt";
pub const DEFOCUS_CKPT: &str = "defocus.ckpt";
pub const BLEND_HEAD_CKPT: &str = "blend_head.ckpt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub dataset_dir: String,
    pub master_seed: u64,
    pub near: f64,
    pub far: f64,
    pub k_samples: usize,
    pub use_fg: bool,
    pub plan: StagePlan,
    pub stages_done: [bool; 3],
}

/// Persist the blocks a stage produced plus the updated manifest.
pub fn save_stage(
    bundle_dir: &Path,
    scene: &FusedScene,
    stage: usize,
    manifest: &BundleManifest,
) -> Result<()> {
    std::fs::create_dir_all(bundle_dir)?;
    match stage {
        1 => {
            let main = filter_blocks(&scene.store, "main.")?;
            save_checkpoint(&main, manifest.plan.stage1_iters as u64, &bundle_dir.join(MAIN_FIELD_CKPT))?;
            let ultra = filter_blocks(&scene.store, "ultra.")?;
            save_checkpoint(
                &ultra,
                manifest.plan.stage1_iters as u64,
                &bundle_dir.join(ULTRA_FIELD_CKPT),
            )?;
        }
        2 => {
            let defocus = filter_blocks(&scene.store, "defocus.")?;
            save_checkpoint(
                &defocus,
                manifest.plan.stage2_iters as u64,
                &bundle_dir.join(DEFOCUS_CKPT),
            )?;
        }
        3 => {
            let blend = filter_blocks(&scene.store, "main.blend.")?;
            save_checkpoint(
                &blend,
                manifest.plan.stage3_iters as u64,
                &bundle_dir.join(BLEND_HEAD_CKPT),
            )?;
        }
        other => return Err(Error::Parameter(format!("unknown stage {other}"))),
    }
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("bundle manifest encode: {e}")))?;
    std::fs::write(bundle_dir.join(BUNDLE_MANIFEST), json)?;
    Ok(())
}

/// Rebuild a scene from whatever stages the bundle holds: stage-1 field
/// checkpoints are required, the defocus and blend-head checkpoints are
/// overlaid when present.
pub fn load_bundle(bundle_dir: &Path) -> Result<(FusedScene, BundleManifest)> {
    let text = std::fs::read_to_string(bundle_dir.join(BUNDLE_MANIFEST))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bundle decode: {e}")))?;
    if !manifest.stages_done[0] {
        return Err(Error::Parameter(
            "bundle has no stage-1 checkpoints; train stage 1 first".into(),
        ));
    }
    let (main_store, _) = load_checkpoint(&bundle_dir.join(MAIN_FIELD_CKPT))?;
    let (ultra_store, _) = load_checkpoint(&bundle_dir.join(ULTRA_FIELD_CKPT))?;
    let mut store = ParamStore::new();
    overlay_blocks(&mut store, &main_store, "main.")?;
    overlay_blocks(&mut store, &ultra_store, "ultra.")?;
    if manifest.stages_done[1] {
        let (defocus, _) = load_checkpoint(&bundle_dir.join(DEFOCUS_CKPT))?;
        overlay_blocks(&mut store, &defocus, "defocus.")?;
    } else {
        DefocusParams::init_store(&mut store, manifest.plan.a_init, manifest.plan.d_f_init)?;
    }
    if manifest.stages_done[2] {
        let (blend, _) = load_checkpoint(&bundle_dir.join(BLEND_HEAD_CKPT))?;
        overlay_blocks(&mut store, &blend, "main.blend.")?;
    }
    let scene = FusedScene {
        main_field: RadianceField::standard("main", true),
        ultra_field: RadianceField::standard("ultra", false),
        store,
        near: manifest.near,
        far: manifest.far,
        k_samples: manifest.k_samples,
    };
    scene.validate()?;
    Ok((scene, manifest))
}

/// CSV text with one `iter,loss` row per logged step.
pub fn write_metrics_csv(path: &Path, log: &[(usize, f64)]) -> Result<()> {
    let mut text = String::from("iter,loss\n");
    for (iter, loss) in log {
        text.push_str(&format!("{iter},{loss}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}
