use aifield::scenegen::*;
use aifield::imaging::{psnr, ssim, io};

#[test]
#[ignore]
fn input_baseline() {
    for seed in [42u64, 101, 102] {
        let spec = build_scene(seed);
        let dir = std::env::temp_dir().join(format!("aif_in_{seed}"));
        let _ = std::fs::remove_dir_all(&dir);
        let opts = GenOptions { views: 4, width: 96, height: 72, master_seed: seed };
        let manifest = emit_dataset(&spec, &dir, &opts).unwrap();
        let mut acc = (0.0, 0.0, 0.0);
        for v in &manifest.views {
            let aif = io::load_png(&dir.join(&v.paths.aif)).unwrap();
            let fg = io::load_png(&dir.join(&v.paths.main_fg)).unwrap();
            let ultra = io::load_png(&dir.join(&v.paths.ultra)).unwrap();
            acc.0 += psnr(&fg, &aif).unwrap();
            acc.1 += ssim(&fg, &aif).unwrap();
            acc.2 += psnr(&ultra, &aif).unwrap();
        }
        let n = manifest.views.len() as f64;
        eprintln!("scene {seed}: input(main_fg) vs AiF: {:.2} dB SSIM {:.4}; raw-ultra vs AiF {:.2} dB", acc.0/n, acc.1/n, acc.2/n);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
