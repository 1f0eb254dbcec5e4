use coopflow_core::*;
use coopflow_core::metrics::GridSource;
use std::time::Instant;

fn eval_state(state: &CoopState, tag: &str, train_secs: f64) {
    let mut rng = Rng::from_seed(child_seed(999, 1));
    let held = make_spiral::<f64>(2000, 0.05, &mut rng).unwrap();
    let mut srng = Rng::from_seed(child_seed(999, 2));
    let (xhat, xtilde) = coop_sample(state, 2000, &mut srng, true).unwrap();
    let mmd_flow = mmd_rbf(&xhat, &held.points, Bandwidth::Fixed(0.5)).unwrap();
    let mmd_coop = mmd_rbf(&xtilde, &held.points, Bandwidth::Fixed(0.5)).unwrap();
    // moment gap trend
    let nh = state.history.len();
    let per_epoch = nh / state.cfg.epochs.max(1);
    let first: f64 = state.history[..per_epoch].iter().map(|r| r.rel_moment_gap).sum::<f64>() / per_epoch as f64;
    let last10: Vec<&DiagRow> = state.history.iter().filter(|r| r.epoch >= state.cfg.epochs.saturating_sub(10)).collect();
    let lastavg: f64 = last10.iter().map(|r| r.rel_moment_gap).sum::<f64>() / last10.len() as f64;
    let logq_first = state.history[..per_epoch].iter().map(|r| r.mean_logq).sum::<f64>() / per_epoch as f64;
    let logq_last = last10.iter().map(|r| r.mean_logq).sum::<f64>() / last10.len() as f64;
    // flow density vs data KL
    let grid = flow_density_grid(&state.flow, (-1.4, 1.4), 100).unwrap();
    let klf = grid_kl(GridSource::Samples(&held.points), GridSource::Density(&grid), 100, 1e-6).unwrap();
    println!("{tag}: train {:.0}s mmd_flow {mmd_flow:.4} mmd_coop {mmd_coop:.4} relgap {first:.3}->{lastavg:.3} logq {logq_first:.2}->{logq_last:.2} kl(data||flow) {klf:.3}", train_secs);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let delta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.03);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
    let flow_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let ebm_lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let eh: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(32);
    let fh: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(32);
    let n: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(10000);
    let noise: &str = args.get(9).map(|s| s.as_str()).unwrap_or("full");
    let noise_mode = match noise { "off" => NoiseMode::Off, "decay" => NoiseMode::Decay, _ => NoiseMode::Full };

    let cfg = CoopConfig {
        epochs,
        batch_size: 200,
        flow_lr,
        ebm_lr,
        langevin: LangevinConfig { steps: t, step_size: delta, noise_mode, decay_epochs: args.get(10).map(|s| s.parse().unwrap()).unwrap_or(30), test_step_ratio: 4.0/3.0 },
        seed: 0,
        arch: ArchConfig { dim: 2, flow_depth: args.get(11).map(|s| s.parse().unwrap()).unwrap_or(8), flow_hidden: vec![fh, fh], scale_clamp: 2.0, ebm_hidden: vec![eh, eh], ebm_reference: Reference::StandardGaussian },
        ..CoopConfig::default()
    };
    let mut drng = Rng::from_seed(child_seed(0, 0));
    let data = make_spiral::<f64>(n, 0.05, &mut drng).unwrap();
    let cfg_depth = cfg.arch.flow_depth;
    let t0 = Instant::now();
    let state = coop_train(cfg, &data.points).unwrap();
    if let Ok(path) = std::env::var("PILOT_DUMP") {
        let mut srng = Rng::from_seed(child_seed(999, 2));
        let (xhat, xtilde) = coop_sample(&state, 2000, &mut srng, true).unwrap();
        let mut out = String::from("x0,x1,kind\n");
        for r in xhat.rows() { out.push_str(&format!("{},{},flow\n", r[0], r[1])); }
        for r in xtilde.rows() { out.push_str(&format!("{},{},coop\n", r[0], r[1])); }
        for r in data.points.rows().take(2000) { out.push_str(&format!("{},{},data\n", r[0], r[1])); }
        std::fs::write(path, out).unwrap();
    }
    eval_state(&state, &format!("T={t} d={delta} e={epochs} flr={flow_lr} elr={ebm_lr} eh={eh} fh={fh} {noise} depth={}", cfg_depth), t0.elapsed().as_secs_f64());
}
