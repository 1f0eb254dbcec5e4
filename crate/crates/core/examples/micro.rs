use std::time::Instant;
use std::hint::black_box;

fn main() {
    // exp cost
    let xs: Vec<f64> = (0..10000).map(|i| (i as f64 % 8.0) - 4.0).collect();
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..1000 { for &x in &xs { acc += black_box((-x).exp()); } }
    println!("exp: {:.2} ns each (acc {acc:.1})", t.elapsed().as_secs_f64() / 1e7 * 1e9);

    // naive dot-64 (latency chain)
    let a = vec![0.5f64; 64]; let b = vec![0.25f64; 64];
    let t = Instant::now();
    let mut s = 0.0;
    for _ in 0..1_000_000 {
        let mut z = 0.0;
        for (x, y) in a.iter().zip(b.iter()) { z += *x * *y; }
        s += black_box(z);
    }
    println!("naive dot64: {:.2} ns (s {s:.0})", t.elapsed().as_secs_f64() / 1e6 * 1e9);

    // 4-acc unrolled dot-64
    let t = Instant::now();
    let mut s = 0.0;
    for _ in 0..1_000_000 {
        let mut z = [0.0f64; 4];
        let mut i = 0;
        while i + 4 <= 64 {
            z[0] += a[i] * b[i]; z[1] += a[i+1] * b[i+1];
            z[2] += a[i+2] * b[i+2]; z[3] += a[i+3] * b[i+3];
            i += 4;
        }
        s += black_box((z[0]+z[1])+(z[2]+z[3]));
    }
    println!("unrolled dot64: {:.2} ns (s {s:.0})", t.elapsed().as_secs_f64() / 1e6 * 1e9);

    // axpy-style matvec (row-major W, accumulate over inputs): for matvec W[64x64]*x
    let w = vec![0.1f64; 64*64]; let x = vec![0.2f64; 64];
    let t = Instant::now();
    let mut out = vec![0.0f64; 64];
    for _ in 0..100_000 {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (o, wrow) in out.iter_mut().zip(w.chunks_exact(64)) {
            let mut z = [0.0f64; 4];
            for (wc, xc) in wrow.chunks_exact(4).zip(x.chunks_exact(4)) {
                z[0] += wc[0]*xc[0]; z[1] += wc[1]*xc[1]; z[2] += wc[2]*xc[2]; z[3] += wc[3]*xc[3];
            }
            *o = (z[0]+z[1])+(z[2]+z[3]);
        }
        black_box(&out);
    }
    println!("matvec 64x64 unrolled: {:.2} ns", t.elapsed().as_secs_f64() / 1e5 * 1e9);
}
