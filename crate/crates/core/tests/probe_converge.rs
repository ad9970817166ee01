use aifield::align::AlignConfig;
use aifield::fusion::*;
use aifield::imaging::psnr;
use aifield::scenegen::*;
use std::time::Instant;

#[test]
#[ignore]
fn lr_sweep() {
    let spec = build_scene(42);
    let dir = std::env::temp_dir().join("aif_conv_ds2");
    let _ = std::fs::remove_dir_all(&dir);
    let opts = GenOptions { views: 12, width: 96, height: 72, master_seed: 42 };
    let manifest = emit_dataset(&spec, &dir, &opts).unwrap();
    align_dataset(&dir, &manifest, &AlignConfig::with_seed(42), true).unwrap();
    let set = TrainingSet::load(&dir, &manifest, true).unwrap();
    let base = FusedScene::init(manifest.near, manifest.far, 64, 5.0, 0.5, 42).unwrap();
    let eval_view = set.views[set.views.len() / 2].clone();

    for lr in [2e-3, 5e-3, 5e-4] {
        let mut scene = base.clone();
        let t = Instant::now();
        for round in 1..=3 {
            let plan = StagePlan {
                stage1_iters: 400,
                stage1_batch: 256,
                lr_stage1: lr,
                log_every: 200,
                ..Default::default()
            };
            let (mlog, ulog) = train_stage1(&mut scene, &set, &plan).unwrap();
            let (render, _) = scene.render_main_only(&eval_view.camera).unwrap();
            let (urender, _) = scene.render_ultra_only(&eval_view.camera).unwrap();
            let p = psnr(&render, &eval_view.main).unwrap();
            let up = psnr(&urender, &eval_view.aligned_ultra).unwrap();
            eprintln!(
                "lr {lr}: {} iters [{:?}]: mloss {:.5} uloss {:.5} mainPSNR {:.2} ultraPSNR {:.2}",
                round * 400, t.elapsed(), mlog.last().unwrap().1, ulog.last().unwrap().1, p, up
            );
        }
    }
}
