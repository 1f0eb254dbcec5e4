use coopflow_core::*;
use coopflow_core::metrics::GridSource;
use coopflow_core::density::density_grid_from_fn;
use coopflow_core::data::spiral_density_fn;

fn main() {
    let mut rng = Rng::from_seed(11);
    let ds = make_spiral::<f64>(100_000, 0.05, &mut rng).unwrap();
    println!("bounds: {:?}", ds.bounds);
    let f = spiral_density_fn(0.05, 4000);
    let grid = density_grid_from_fn::<f64>(ds.bounds, 100, f).unwrap();
    let kl = grid_kl(GridSource::Samples(&ds.points), GridSource::Density(&grid), 100, 1e-6).unwrap();
    println!("kl = {kl}");

    // Where do contributions come from?
    let g = 100usize;
    let h = (ds.bounds.1 - ds.bounds.0) / g as f64;
    let mut counts = vec![0.0f64; g*g];
    for row in ds.points.rows() {
        let ci = (((row[0] - ds.bounds.0)/h).floor() as i64).clamp(0, g as i64-1) as usize;
        let cj = (((row[1] - ds.bounds.0)/h).floor() as i64).clamp(0, g as i64-1) as usize;
        counts[ci*g+cj] += 1.0;
    }
    let n = 100_000.0;
    let denom = 1.0 + 1e-6*(g*g) as f64;
    let pm: Vec<f64> = counts.iter().map(|c| (c/n + 1e-6)/denom).collect();
    let qm = grid.masses();
    let mut contribs: Vec<(f64, usize)> = pm.iter().zip(&qm).enumerate()
        .map(|(i,(p,q))| (if *p>0.0 { p*(p/q).ln() } else {0.0}, i)).collect();
    contribs.sort_by(|a,b| b.0.partial_cmp(&a.0).unwrap());
    for (c, i) in contribs.iter().take(10) {
        let (x,y) = grid.cell_center(i/g, i%g);
        println!("cell ({x:.3},{y:.3}): contrib {c:.4}, p={:.6}, q={:.6}", pm[*i], qm[*i]);
    }
    let total_pos: f64 = contribs.iter().map(|c| c.0.max(0.0)).sum();
    println!("sum of positive contribs: {total_pos}");
}
