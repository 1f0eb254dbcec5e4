use coopflow_core::*;
use std::time::Instant;
use std::hint::black_box;

// Hand-rolled blocked forward for [2,16,16,1] swish over r rows.
fn hand_forward(w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], w3: &[f64], b3: f64,
                x: &[f64], r: usize, out: &mut [f64]) {
    let mut a0 = vec![0.0; 2*r];
    for (row, xr) in x.chunks_exact(2).enumerate() { a0[row] = xr[0]; a0[r+row] = xr[1]; }
    let mut a1 = vec![0.0; 16*r];
    for o in 0..16 {
        let z = &mut a1[o*r..(o+1)*r];
        z.fill(b1[o]);
        for i in 0..2 {
            let c = w1[o*2+i];
            for (zv, xv) in z.iter_mut().zip(&a0[i*r..(i+1)*r]) { *zv += c * *xv; }
        }
        for zv in z.iter_mut() { let s = 1.0/(1.0+(-*zv).exp()); *zv *= s; }
    }
    let mut a2 = vec![0.0; 16*r];
    for o in 0..16 {
        let z = &mut a2[o*r..(o+1)*r];
        z.fill(b2[o]);
        for i in 0..16 {
            let c = w2[o*16+i];
            for (zv, xv) in z.iter_mut().zip(&a1[i*r..(i+1)*r]) { *zv += c * *xv; }
        }
        for zv in z.iter_mut() { let s = 1.0/(1.0+(-*zv).exp()); *zv *= s; }
    }
    for row in 0..r { out[row] = b3; }
    for i in 0..16 {
        let c = w3[i];
        for (ov, xv) in out.iter_mut().zip(&a2[i*r..(i+1)*r]) { *ov += c * *xv; }
    }
}

fn main() {
    let mut rng = Rng::from_seed(1);
    let net = MlpNet::<f64>::new(&[2, 16, 16, 1], Activation::Swish, &mut rng).unwrap();
    let x = gaussian_sample::<f64>(&mut rng, 200, 2);
    let p = net.params();
    let (w1, rest) = p.split_at(32); let (b1, rest) = rest.split_at(16);
    let (w2, rest) = rest.split_at(256); let (b2, rest) = rest.split_at(16);
    let (w3, rest) = rest.split_at(16); let b3 = rest[0];

    let mut out = vec![0.0; 200];
    let t = Instant::now();
    for _ in 0..1000 {
        hand_forward(w1, b1, w2, b2, w3, b3, x.data(), 200, &mut out);
        black_box(&out);
    }
    println!("hand blocked fwd (r=200): {:.1} us", t.elapsed().as_secs_f64()*1e3);

    // sanity agreement
    let yref = net.forward(&x).unwrap();
    let maxd = out.iter().zip(yref.data()).map(|(a,b)| (a-b).abs()).fold(0.0f64, f64::max);
    println!("max diff vs net.forward: {maxd:e}");
    // time exp alone on same count: 200*32 = 6400
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..1000 { for i in 0..6400 { acc += black_box((-(i as f64 % 8.0 - 4.0)).exp()); } }
    println!("6400 exps: {:.1} us (acc {acc:.0})", t.elapsed().as_secs_f64()*1e3);
}
