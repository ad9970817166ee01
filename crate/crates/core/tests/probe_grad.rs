use aifield::autodiff::*;
use aifield::radiance::*;
use aifield::rng::Rng;

fn field() -> RadianceField {
    RadianceField { prefix: "f".into(), l_pos: 2, l_dir: 1, hidden: 8, depth: 2, color_hidden: 6, blend_head: false }
}

#[test]
#[ignore]
fn isolate() {
    let f = field();
    let mut store = ParamStore::new();
    let mut frng = Rng::new(3000);
    f.init_params(&mut store, &mut frng).unwrap();
    let mut rng = Rng::new(1001);
    // burn rng like acceptance does? just fresh values
    let (rays, k) = (4, 8);
    let points: Vec<[f64;3]> = (0..rays*k).map(|_| [rng.f64()-0.5, rng.f64()-0.5, rng.f64()]).collect();
    let dirs: Vec<[f64;3]> = (0..rays*k).map(|_| [0.0,0.0,1.0]).collect();
    let pos = encode_batch(&points, f.l_pos);
    let dir = encode_batch(&dirs, f.l_dir);
    let t: Vec<f64> = (0..rays).flat_map(|_| (0..k).map(|i| 0.4+0.2*i as f64).collect::<Vec<_>>()).collect();
    let delta = deltas_from_depths(&t, rays, k, 2.2);
    let target: Vec<f64> = (0..rays*3).map(|_| rng.f64()).collect();
    let mask = vec![1.0; rays];

    for mode in ["full", "sigma_only", "color_only"] {
        let loss_fn = |s: &ParamStore| -> aifield::Result<f64> {
            let mut tape = Tape::new();
            let pn = tape.constant(pos.clone());
            let dn = tape.constant(dir.clone());
            let nodes = f.forward_tape(&mut tape, s, pn, dn)?;
            let l = match mode {
                "full" => {
                    let color = volume_render_color_tape(&mut tape, nodes.sigma, nodes.color, &delta, rays, k)?;
                    recon_loss_tape(&mut tape, color, &target, &mask)?.0
                }
                "sigma_only" => tape.sum_all(nodes.sigma),
                _ => tape.sum_all(nodes.color),
            };
            tape.value(l).item()
        };
        let mut tape = Tape::new();
        let pn = tape.constant(pos.clone());
        let dn = tape.constant(dir.clone());
        let nodes = f.forward_tape(&mut tape, &store, pn, dn).unwrap();
        let l = match mode {
            "full" => {
                let color = volume_render_color_tape(&mut tape, nodes.sigma, nodes.color, &delta, rays, k).unwrap();
                recon_loss_tape(&mut tape, color, &target, &mask).unwrap().0
            }
            "sigma_only" => tape.sum_all(nodes.sigma),
            _ => tape.sum_all(nodes.color),
        };
        tape.backward(l, &mut store).unwrap();
        let fd = finite_diff_grad(loss_fn, &store, 1e-6).unwrap();
        let mut worst: (f64, String) = (0.0, String::new());
        for (name, want) in &fd {
            for (i, (a, b)) in store.grad(name).unwrap().iter().zip(want).enumerate() {
                let d = (a - b).abs() / (a.abs().max(b.abs()) + 1e-8);
                if d > worst.0 { worst = (d, format!("{name}[{i}] {a} vs {b}")); }
            }
        }
        eprintln!("{mode}: worst rel {:.3e} at {}", worst.0, worst.1);
    }
}
