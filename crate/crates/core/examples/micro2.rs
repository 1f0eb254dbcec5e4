use coopflow_core::*;
use std::time::Instant;
use std::hint::black_box;

fn main() {
    let mut rng = Rng::from_seed(1);
    let net = MlpNet::<f64>::new(&[2, 16, 16, 1], Activation::Swish, &mut rng).unwrap();
    let ebm = EbmModel::new(net.clone(), Reference::StandardGaussian).unwrap();
    let x = gaussian_sample::<f64>(&mut rng, 200, 2);

    let t = Instant::now();
    for _ in 0..1000 { black_box(ebm.value_and_grad(&x).unwrap()); }
    println!("ebm.value_and_grad: {:.1} us", t.elapsed().as_secs_f64()*1e3);

    let t = Instant::now();
    for _ in 0..1000 { black_box(net.scalar_value_and_grad(&x).unwrap()); }
    println!("net.scalar_value_and_grad: {:.1} us", t.elapsed().as_secs_f64()*1e3);

    let t = Instant::now();
    for _ in 0..1000 { black_box(net.forward(&x).unwrap()); }
    println!("net.forward: {:.1} us", t.elapsed().as_secs_f64()*1e3);

    let t = Instant::now();
    for _ in 0..1000 { black_box(gaussian_sample::<f64>(&mut rng, 200, 2)); }
    println!("gaussian_sample 200x2: {:.1} us", t.elapsed().as_secs_f64()*1e3);
}
