use coopflow_core::*;
use std::time::Instant;

fn main() {
    let mut rng = Rng::from_seed(1);
    for hidden in [16usize, 32, 64] {
        let net = MlpNet::<f64>::new(&[2, hidden, hidden, 1], Activation::Swish, &mut rng).unwrap();
        let ebm = EbmModel::new(net, Reference::StandardGaussian).unwrap();
        let x0 = gaussian_sample::<f64>(&mut rng, 200, 2);
        let cfg = LangevinConfig { steps: 1000, step_size: 0.01, noise_mode: NoiseMode::Full, decay_epochs: 30, test_step_ratio: 4.0/3.0 };
        let t = Instant::now();
        let _ = langevin_flow(&ebm, &x0, &cfg, 1.0, &mut rng).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("ebm[{hidden}]: {:.1} us/step (batch 200) -> t2000 train est {:.1} min", dt*1e3, dt/1000.0*2000.0*5000.0/60.0);
    }
    for (depth, hidden) in [(8usize, 64usize), (8, 32), (6, 32)] {
        let mut flow = FlowModel::<f64>::new(2, depth, &[hidden, hidden], 2.0, &mut rng).unwrap();
        let mut opt = AdamState::new(flow.param_len(), 1e-3, 0.9, 0.999).unwrap();
        let batch = gaussian_sample::<f64>(&mut rng, 200, 2);
        let t = Instant::now();
        for _ in 0..20 { flow.mle_step(&batch, &mut opt).unwrap(); }
        let dt = t.elapsed().as_secs_f64()/20.0;
        println!("flow d{depth} h{hidden}: {:.2} ms/mle_step -> 5000 iters = {:.1} s", dt*1e3, dt*5000.0);
    }
    // flow forward for sampling
    let flow = FlowModel::<f64>::new(2, 8, &[64, 64], 2.0, &mut rng).unwrap();
    let z = gaussian_sample::<f64>(&mut rng, 200, 2);
    let t = Instant::now();
    for _ in 0..50 { let _ = flow.forward(&z).unwrap(); }
    println!("flow fwd batch200: {:.2} ms", t.elapsed().as_secs_f64()/50.0*1e3);
}
