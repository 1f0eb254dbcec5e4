use coopflow_core::*;
use std::time::Instant;
use std::hint::black_box;

fn best<F: FnMut()>(mut f: F, iters: usize, reps: usize) -> f64 {
    let mut bestv = f64::MAX;
    for _ in 0..reps {
        let t = Instant::now();
        for _ in 0..iters { f(); }
        bestv = bestv.min(t.elapsed().as_secs_f64() / iters as f64);
    }
    bestv
}

fn main() {
    let mut rng = Rng::from_seed(1);
    let net = MlpNet::<f64>::new(&[2, 16, 16, 1], Activation::Swish, &mut rng).unwrap();
    let ebm = EbmModel::new(net.clone(), Reference::StandardGaussian).unwrap();
    let x = gaussian_sample::<f64>(&mut rng, 200, 2);

    let t = best(|| { black_box(net.forward(&x).unwrap()); }, 200, 10);
    println!("forward: {:.1} us", t*1e6);
    let t = best(|| { black_box(net.scalar_value_and_grad(&x).unwrap()); }, 200, 10);
    println!("scalar_value_and_grad: {:.1} us", t*1e6);
    let t = best(|| { black_box(ebm.value_and_grad(&x).unwrap()); }, 200, 10);
    println!("ebm value_and_grad: {:.1} us", t*1e6);

    let cfg = LangevinConfig { steps: 100, step_size: 0.01, noise_mode: NoiseMode::Full, decay_epochs: 30, test_step_ratio: 4.0/3.0 };
    let t = best(|| { black_box(langevin_flow(&ebm, &x, &cfg, 1.0, &mut rng).unwrap()); }, 5, 10);
    println!("langevin step: {:.1} us", t/100.0*1e6);
}
