use aifield::align::AlignConfig;
use aifield::fusion::*;
use aifield::imaging::{io, psnr, ssim};
use aifield::scenegen::*;
use std::time::Instant;

#[test]
#[ignore]
fn end_to_end_trial() {
    let t0 = Instant::now();
    let mut spec = build_scene(42);
    spec.a_main = 5.0;
    let dir = std::env::temp_dir().join("aif_e2e_ds");
    let _ = std::fs::remove_dir_all(&dir);
    let opts = GenOptions { views: 24, width: 96, height: 72, master_seed: 42 };
    let manifest = emit_dataset(&spec, &dir, &opts).unwrap();
    let fr = align_dataset(&dir, &manifest, &AlignConfig::with_seed(42), true).unwrap();
    let min_frac = fr.iter().map(|(_, f)| *f).fold(1.0f64, f64::min);
    eprintln!("[{:?}] gen+align done; min conf frac {min_frac:.3}", t0.elapsed());
    let set = TrainingSet::load(&dir, &manifest, true).unwrap();
    let plan = StagePlan::default();
    let mut scene = FusedScene::init(manifest.near, manifest.far, plan.k_samples, plan.a_init, plan.d_f_init, 42).unwrap();
    let (ml, ul) = train_stage1(&mut scene, &set, &plan).unwrap();
    eprintln!("[{:?}] stage1 done: mloss {:.5} uloss {:.5}", t0.elapsed(), ml.last().unwrap().1, ul.last().unwrap().1);
    train_stage2(&mut scene, &set, &plan).unwrap();
    let p = scene.defocus().unwrap();
    eprintln!("[{:?}] stage2 done: A {:.3} (truth {}), D_f {:.4} (truth {})", t0.elapsed(), p.blur_intensity, manifest.truth.a_main, p.focal_disparity, manifest.truth.d_f_front);
    train_stage3(&mut scene, &set, &plan).unwrap();
    eprintln!("[{:?}] stage3 done", t0.elapsed());

    let (mut pf, mut pi, mut pm, mut pu) = (0.0, 0.0, 0.0, 0.0);
    let (mut sf, mut si, mut sm) = (0.0, 0.0, 0.0);
    let tv: Vec<_> = manifest.test_views().collect();
    for v in &tv {
        let aif = io::load_png(&dir.join(&v.paths.aif)).unwrap();
        let input = io::load_png(&dir.join(&v.paths.main_fg)).unwrap();
        let (fused, _) = scene.render_aif(&v.main_camera).unwrap();
        let (mo, _) = scene.render_main_only(&v.main_camera).unwrap();
        let (uo, _) = scene.render_ultra_only(&v.main_camera).unwrap();
        pf += psnr(&fused, &aif).unwrap(); sf += ssim(&fused, &aif).unwrap();
        pi += psnr(&input, &aif).unwrap(); si += ssim(&input, &aif).unwrap();
        pm += psnr(&mo, &aif).unwrap(); sm += ssim(&mo, &aif).unwrap();
        pu += psnr(&uo, &aif).unwrap();
    }
    let n = tv.len() as f64;
    eprintln!("[{:?}] HELD-OUT: fused {:.2}dB/{:.4} | input {:.2}dB/{:.4} | main-only {:.2}dB/{:.4} | ultra-only {:.2}dB",
        t0.elapsed(), pf/n, sf/n, pi/n, si/n, pm/n, sm/n, pu/n);
}
