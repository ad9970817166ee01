use std::time::Instant;

fn dot32(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 32];
    let ac = a.chunks_exact(32);
    let bc = b.chunks_exact(32);
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for j in 0..32 { acc[j] += x[j] * y[j]; }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) { tail += x * y; }
    acc.iter().sum::<f64>() + tail
}

/// 4 outputs at once: independent accumulators, shared x loads.
fn affine_block4(x: &[f64], n: usize, icols: usize, w: &[f64], o: usize, y: &mut [f64]) {
    for r in 0..n {
        let xr = &x[r*icols..(r+1)*icols];
        let mut j = 0;
        while j + 4 <= o {
            let w0 = &w[j*icols..(j+1)*icols];
            let w1 = &w[(j+1)*icols..(j+2)*icols];
            let w2 = &w[(j+2)*icols..(j+3)*icols];
            let w3 = &w[(j+3)*icols..(j+4)*icols];
            let mut a0 = [0.0f64; 8]; let mut a1 = [0.0f64; 8];
            let mut a2 = [0.0f64; 8]; let mut a3 = [0.0f64; 8];
            let kb = icols / 8;
            for kb_i in 0..kb {
                let base = kb_i * 8;
                for l in 0..8 {
                    let xv = xr[base + l];
                    a0[l] += xv * w0[base + l];
                    a1[l] += xv * w1[base + l];
                    a2[l] += xv * w2[base + l];
                    a3[l] += xv * w3[base + l];
                }
            }
            let mut s = [a0.iter().sum::<f64>(), a1.iter().sum::<f64>(), a2.iter().sum::<f64>(), a3.iter().sum::<f64>()];
            for (l, sv) in s.iter_mut().enumerate() {
                for k in kb*8..icols { *sv += xr[k] * w[(j+l)*icols + k]; }
            }
            y[r*o+j] = s[0]; y[r*o+j+1] = s[1]; y[r*o+j+2] = s[2]; y[r*o+j+3] = s[3];
            j += 4;
        }
        while j < o {
            let mut acc = 0.0;
            for k in 0..icols { acc += xr[k] * w[j*icols+k]; }
            y[r*o+j] = acc; j += 1;
        }
    }
}

#[test]
#[ignore]
fn bench_dot2() {
    let n = 16384usize;
    let icols = 64usize;
    let o = 64usize;
    let x: Vec<f64> = (0..n*icols).map(|i| (i as f64 * 0.001).sin()).collect();
    let w: Vec<f64> = (0..o*icols).map(|i| (i as f64 * 0.002).cos()).collect();
    let mut y = vec![0.0; n*o];
    let flops = (2 * n * o * icols) as f64;

    let t = Instant::now();
    for _ in 0..3 {
        for r in 0..n {
            let xr = &x[r*icols..(r+1)*icols];
            for j in 0..o { y[r*o+j] = dot32(xr, &w[j*icols..(j+1)*icols]); }
        }
    }
    let el = t.elapsed().as_secs_f64() / 3.0;
    eprintln!("dot32: {:.1} ms, {:.2} GFLOP/s (sum {})", el*1e3, flops/el/1e9, y[999]);

    let t = Instant::now();
    for _ in 0..3 { affine_block4(&x, n, icols, &w, o, &mut y); }
    let el = t.elapsed().as_secs_f64() / 3.0;
    eprintln!("block4: {:.1} ms, {:.2} GFLOP/s (sum {})", el*1e3, flops/el/1e9, y[999]);
}
