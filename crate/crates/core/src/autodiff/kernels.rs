//! Hot numeric kernels shared by the tape and the plain inference paths.
//!
//! Parallel loops only ever split over disjoint output rows, so results are
//! bit-identical regardless of thread count. Inner loops are written as
//! fixed-width lane blocks: independent accumulator lanes sidestep the
//! FMA-latency chain a single running sum would serialize on.

use rayon::prelude::*;

/// Below this many batch rows the rayon dispatch overhead dominates.
const PAR_MIN_ROWS: usize = 64;

/// Dot product with eight independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ac = a.chunks_exact(8);
    let bc = b.chunks_exact(8);
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// dst += s * src
#[inline]
pub(crate) fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

/// dst += s0·a + s1·b + s2·c + s3·d, one pass over dst.
#[inline]
#[allow(clippy::too_many_arguments)]
fn axpy4(dst: &mut [f64], a: &[f64], s0: f64, b: &[f64], s1: f64, c: &[f64], s2: f64, d: &[f64], s3: f64) {
    for i in 0..dst.len() {
        dst[i] += s0 * a[i] + s1 * b[i] + s2 * c[i] + s3 * d[i];
    }
}

/// One batch row times four weight rows: independent lane banks share the
/// x loads.
#[inline]
fn row_times_4(xr: &[f64], w: &[f64], icols: usize, j: usize, out: &mut [f64]) {
    let w0 = &w[j * icols..(j + 1) * icols];
    let w1 = &w[(j + 1) * icols..(j + 2) * icols];
    let w2 = &w[(j + 2) * icols..(j + 3) * icols];
    let w3 = &w[(j + 3) * icols..(j + 4) * icols];
    let mut a0 = [0.0f64; 8];
    let mut a1 = [0.0f64; 8];
    let mut a2 = [0.0f64; 8];
    let mut a3 = [0.0f64; 8];
    let blocks = icols / 8;
    for bi in 0..blocks {
        let base = bi * 8;
        for l in 0..8 {
            let xv = xr[base + l];
            a0[l] += xv * w0[base + l];
            a1[l] += xv * w1[base + l];
            a2[l] += xv * w2[base + l];
            a3[l] += xv * w3[base + l];
        }
    }
    let mut sums = [
        a0.iter().sum::<f64>(),
        a1.iter().sum::<f64>(),
        a2.iter().sum::<f64>(),
        a3.iter().sum::<f64>(),
    ];
    for k in blocks * 8..icols {
        sums[0] += xr[k] * w0[k];
        sums[1] += xr[k] * w1[k];
        sums[2] += xr[k] * w2[k];
        sums[3] += xr[k] * w3[k];
    }
    out[..4].copy_from_slice(&sums);
}

/// y = x wᵀ + b with x:[n×i] row-major, w:[o×i] row-major, b:[o], y:[n×o].
pub(crate) fn affine_forward(
    x: &[f64],
    n: usize,
    icols: usize,
    w: &[f64],
    o: usize,
    b: &[f64],
    y: &mut [f64],
) {
    debug_assert_eq!(x.len(), n * icols);
    debug_assert_eq!(w.len(), o * icols);
    debug_assert_eq!(b.len(), o);
    debug_assert_eq!(y.len(), n * o);
    let row = |yrow: &mut [f64], xrow: &[f64]| {
        let mut j = 0;
        while j + 4 <= o {
            row_times_4(xrow, w, icols, j, &mut yrow[j..j + 4]);
            j += 4;
        }
        while j < o {
            yrow[j] = dot(xrow, &w[j * icols..(j + 1) * icols]);
            j += 1;
        }
        for (v, bias) in yrow.iter_mut().zip(b) {
            *v += bias;
        }
    };
    if n >= PAR_MIN_ROWS {
        y.par_chunks_mut(o)
            .zip(x.par_chunks(icols))
            .for_each(|(yr, xr)| row(yr, xr));
    } else {
        y.chunks_mut(o)
            .zip(x.chunks(icols))
            .for_each(|(yr, xr)| row(yr, xr));
    }
}

/// gx = g w with g:[n×o], w:[o×i], gx:[n×i].
pub(crate) fn affine_grad_input(
    g: &[f64],
    n: usize,
    o: usize,
    w: &[f64],
    icols: usize,
    gx: &mut [f64],
) {
    let row = |gxr: &mut [f64], gr: &[f64]| {
        let mut j = 0;
        while j + 4 <= o {
            axpy4(
                gxr,
                &w[j * icols..(j + 1) * icols],
                gr[j],
                &w[(j + 1) * icols..(j + 2) * icols],
                gr[j + 1],
                &w[(j + 2) * icols..(j + 3) * icols],
                gr[j + 2],
                &w[(j + 3) * icols..(j + 4) * icols],
                gr[j + 3],
            );
            j += 4;
        }
        while j < o {
            if gr[j] != 0.0 {
                axpy(gxr, &w[j * icols..(j + 1) * icols], gr[j]);
            }
            j += 1;
        }
    };
    if n >= PAR_MIN_ROWS {
        gx.par_chunks_mut(icols)
            .zip(g.par_chunks(o))
            .for_each(|(gxr, gr)| row(gxr, gr));
    } else {
        gx.chunks_mut(icols)
            .zip(g.chunks(o))
            .for_each(|(gxr, gr)| row(gxr, gr));
    }
}

/// gw = gᵀ x with g:[n×o], x:[n×i], gw:[o×i].
///
/// Parallel over output neurons; the batch reduction stays sequential per
/// row so the result does not depend on the thread count.
pub(crate) fn affine_grad_weight(
    g: &[f64],
    n: usize,
    o: usize,
    x: &[f64],
    icols: usize,
    gw: &mut [f64],
) {
    let row = |(oo, gwr): (usize, &mut [f64])| {
        let mut nn = 0;
        while nn + 4 <= n {
            axpy4(
                gwr,
                &x[nn * icols..(nn + 1) * icols],
                g[nn * o + oo],
                &x[(nn + 1) * icols..(nn + 2) * icols],
                g[(nn + 1) * o + oo],
                &x[(nn + 2) * icols..(nn + 3) * icols],
                g[(nn + 2) * o + oo],
                &x[(nn + 3) * icols..(nn + 4) * icols],
                g[(nn + 3) * o + oo],
            );
            nn += 4;
        }
        while nn < n {
            let gv = g[nn * o + oo];
            if gv != 0.0 {
                axpy(gwr, &x[nn * icols..(nn + 1) * icols], gv);
            }
            nn += 1;
        }
    };
    if o >= 8 && n >= PAR_MIN_ROWS {
        gw.par_chunks_mut(icols).enumerate().for_each(row);
    } else {
        gw.chunks_mut(icols).enumerate().for_each(row);
    }
}

/// gb[o] = sum over batch rows of g[n×o].
pub(crate) fn affine_grad_bias(g: &[f64], n: usize, o: usize, gb: &mut [f64]) {
    for nn in 0..n {
        for (oo, acc) in gb.iter_mut().enumerate() {
            *acc += g[nn * o + oo];
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + eˣ).
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn blocked_affine_matches_naive() {
        let mut rng = Rng::new(8);
        for (n, icols, o) in [(3usize, 7usize, 5usize), (70, 64, 33), (130, 17, 4)] {
            let x: Vec<f64> = (0..n * icols).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..o * icols).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
            let mut y = vec![0.0; n * o];
            affine_forward(&x, n, icols, &w, o, &b, &mut y);
            for r in 0..n {
                for j in 0..o {
                    let naive: f64 = (0..icols).map(|k| x[r * icols + k] * w[j * icols + k]).sum();
                    assert!(
                        (y[r * o + j] - (naive + b[j])).abs() < 1e-10,
                        "({n},{icols},{o}) at ({r},{j})"
                    );
          }
            }
        }
    }

    #[test]
    fn grad_kernels_match_naive() {
        let mut rng = Rng::new(9);
        let (n, icols, o) = (67usize, 30usize, 9usize);
        let g: Vec<f64> = (0..n * o).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..n * icols).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..o * icols).map(|_| rng.normal()).collect();

        let mut gx = vec![0.0; n * icols];
        affine_grad_input(&g, n, o, &w, icols, &mut gx);
        let mut gw = vec![0.0; o * icols];
        affine_grad_weight(&g, n, o, &x, icols, &mut gw);
        let mut gb = vec![0.0; o];
        affine_grad_bias(&g, n, o, &mut gb);

        for r in 0..n {
            for k in 0..icols {
                let naive: f64 = (0..o).map(|j| g[r * o + j] * w[j * icols + k]).sum();
                assert!((gx[r * icols + k] - naive).abs() < 1e-10);
            }
        }
        for j in 0..o {
            for k in 0..icols {
                let naive: f64 = (0..n).map(|r| g[r * o + j] * x[r * icols + k]).sum();
                assert!((gw[j * icols + k] - naive).abs() < 1e-9);
            }
            let naive: f64 = (0..n).map(|r| g[r * o + j]).sum();
            assert!((gb[j] - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn softplus_extremes() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(40.0) > 1.0 - 1e-15);
        assert!(sigmoid(-40.0) < 1e-15);
    }
}

#[cfg(test)]
mod perf_probe {
    use super::*;
    use std::time::Instant;

    #[test]
    #[ignore]
    fn affine_forward_throughput() {
        let (n, icols, o) = (16384usize, 64usize, 64usize);
        let x: Vec<f64> = (0..n * icols).map(|i| (i as f64 * 0.001).sin()).collect();
        let w: Vec<f64> = (0..o * icols).map(|i| (i as f64 * 0.002).cos()).collect();
        let b = vec![0.0; o];
        let mut y = vec![0.0; n * o];
        let flops = (2 * n * o * icols) as f64;
        // warm
        affine_forward(&x, n, icols, &w, o, &b, &mut y);
        let t = Instant::now();
        for _ in 0..5 {
            affine_forward(&x, n, icols, &w, o, &b, &mut y);
        }
        let el = t.elapsed().as_secs_f64() / 5.0;
        eprintln!("affine_forward (rayon): {:.1} ms = {:.2} GFLOP/s", el * 1e3, flops / el / 1e9);

        // sequential reference
        let t = Instant::now();
        for _ in 0..5 {
            y.chunks_mut(o).zip(x.chunks(icols)).for_each(|(yr, xr)| {
                let mut j = 0;
                while j + 4 <= o {
                    row_times_4(xr, &w, icols, j, &mut yr[j..j + 4]);
                    j += 4;
                }
            });
        }
        let el = t.elapsed().as_secs_f64() / 5.0;
        eprintln!("sequential block4: {:.1} ms = {:.2} GFLOP/s", el * 1e3, flops / el / 1e9);
    }
}
