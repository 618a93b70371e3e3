use std::hint::black_box;
use std::time::Instant;

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let n = a.len();
    let mut acc = [0.0f64; LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let i = c * LANES;
        for (l, acc_l) in acc.iter_mut().enumerate() {
            *acc_l += a[i + l] * b[i + l];
        }
    }
    let mut s = 0.0;
    for v in acc { s += v; }
    for i in chunks * LANES..n { s += a[i] * b[i]; }
    s
}

fn main() {
    let n = 1024;
    let mut y = vec![0.5f64; n];
    let x = vec![1.25f64; n];
    let iters = 2_000_000u64;

    let t0 = Instant::now();
    for i in 0..iters {
        axpy(black_box(&mut y), black_box(&x), 1e-9 * i as f64);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("axpy: {:.2} GFLOP/s", 2.0 * n as f64 * iters as f64 / dt / 1e9);

    let t1 = Instant::now();
    let mut s = 0.0;
    for _ in 0..iters {
        s += dot(black_box(&x), black_box(&y));
    }
    let dt1 = t1.elapsed().as_secs_f64();
    println!("dot: {:.2} GFLOP/s (s={s:.1})", 2.0 * n as f64 * iters as f64 / dt1 / 1e9);
}
