//! Two-sample metrics: RBF-kernel maximum mean discrepancy and grid KL.

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kernel bandwidth selection.
///
/// The kernel is `k(u, v) = exp(−‖u−v‖² / (2h))` where `h` is the squared
/// length scale: `Fixed(σ)` supplies `h = σ` directly, while the median
/// heuristic measures the median pairwise distance over X ∪ Y and uses its
/// square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

/// Unbiased RBF-MMD estimate, clipped at zero before the square root.
pub fn mmd_rbf<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, bandwidth: Bandwidth) -> Result<f64> {
    let (a, dx) = x.dims2()?;
    let (b, dy) = y.dims2()?;
    if dx != dy {
        return Err(Error::ShapeMismatch {
            op: "mmd_rbf",
            lhs: vec![a, dx],
            rhs: vec![b, dy],
        });
    }
    if a < 2 || b < 2 {
        return Err(Error::invalid("mmd_rbf needs at least 2 samples per set"));
    }

    let dist2 = |u: &[S], v: &[S]| -> f64 {
        u.iter()
            .zip(v)
            .map(|(&p, &q)| {
                let d = (p - q).to_f64_lossy();
                d * d
            })
            .sum()
    };

    let h = match bandwidth {
        Bandwidth::Fixed(sigma) => {
            if !(sigma > 0.0) {
                return Err(Error::invalid("mmd bandwidth must be positive"));
            }
            sigma
        }
        Bandwidth::MedianHeuristic => {
            let mut dists = Vec::new();
            let all: Vec<&[S]> = x.rows().chain(y.rows()).collect();
            for i in 0..all.len() {
                for j in (i + 1)..all.len() {
                    dists.push(dist2(all[i], all[j]).sqrt());
                }
            }
            dists.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let med = if dists.len() % 2 == 1 {
                dists[dists.len() / 2]
            } else {
                0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
            };
            if !(med > 0.0) {
                return Err(Error::invalid("median pairwise distance is zero"));
            }
            med * med
        }
    };
    let gamma = 1.0 / (2.0 * h);
    let kern = |u: &[S], v: &[S]| (-gamma * dist2(u, v)).exp();

    let mut kxx = 0.0;
    for i in 0..a {
        for j in (i + 1)..a {
            kxx += kern(x.row(i), x.row(j));
        }
    }
    kxx = 2.0 * kxx / (a as f64 * (a as f64 - 1.0));

    let mut kyy = 0.0;
    for i in 0..b {
        for j in (i + 1)..b {
            kyy += kern(y.row(i), y.row(j));
        }
    }
    kyy = 2.0 * kyy / (b as f64 * (b as f64 - 1.0));

    let mut kxy = 0.0;
    for i in 0..a {
        for j in 0..b {
            kxy += kern(x.row(i), y.row(j));
        }
    }
    kxy /= a as f64 * b as f64;

    Ok((kxx + kyy - 2.0 * kxy).max(0.0).sqrt())
}

/// One side of a grid KL comparison: raw samples or a density grid.
#[derive(Clone, Copy)]
pub enum GridSource<'a, S: Scalar = f64> {
    Samples(&'a Tensor<S>),
    Density(&'a DensityGrid<S>),
}

fn sample_hull<S: Scalar>(t: &Tensor<S>) -> (f64, f64) {
    let hi = t
        .data()
        .iter()
        .map(|v| v.to_f64_lossy().abs())
        .fold(1e-12_f64, f64::max);
    (-hi * 1.0001, hi * 1.0001)
}

fn histogram_masses<S: Scalar>(
    samples: &Tensor<S>,
    bounds: (f64, f64),
    g: usize,
) -> Result<Vec<f64>> {
    let (n, d) = samples.dims2()?;
    if d != 2 {
        return Err(Error::invalid("grid_kl expects 2D samples"));
    }
    if n == 0 {
        return Err(Error::EmptyBatch("grid_kl"));
    }
    let h = (bounds.1 - bounds.0) / g as f64;
    let mut counts = vec![0.0_f64; g * g];
    for row in samples.rows() {
        // Out-of-box samples are clamped into the edge cells so mass is
        // conserved.
        let ci = (((row[0].to_f64_lossy() - bounds.0) / h).floor() as i64).clamp(0, g as i64 - 1);
        let cj = (((row[1].to_f64_lossy() - bounds.0) / h).floor() as i64).clamp(0, g as i64 - 1);
        counts[ci as usize * g + cj as usize] += 1.0;
    }
    let total = n as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// KL(P‖Q) over a G×G grid. Samples are histogrammed; density grids
/// contribute their normalized cell masses directly. The additive
/// smoothing (mass `smoothing` per cell, renormalized) is applied to both
/// mass vectors — it is the estimator's floor, keeping the value finite
/// when one side has empty cells and zero for identical inputs. Grid
/// inputs must already match the common bounds and resolution; when only
/// one side is a grid its box is used, and when both sides are samples
/// the square hull of their union is used.
pub fn grid_kl<S: Scalar>(
    p: GridSource<'_, S>,
    q: GridSource<'_, S>,
    g: usize,
    smoothing: f64,
) -> Result<f64> {
    if g < 16 {
        return Err(Error::invalid("grid_kl resolution must be at least 16"));
    }
    if smoothing < 0.0 {
        return Err(Error::invalid("smoothing must be non-negative"));
    }
    let bounds = match (&p, &q) {
        (GridSource::Density(a), GridSource::Density(b)) => {
            if a.bounds != b.bounds || a.resolution != b.resolution {
                return Err(Error::invalid(format!(
                    "grid bound/resolution mismatch: {:?}@{} vs {:?}@{}",
                    a.bounds, a.resolution, b.bounds, b.resolution
                )));
            }
            a.bounds
        }
        (GridSource::Density(a), _) | (_, GridSource::Density(a)) => a.bounds,
        (GridSource::Samples(a), GridSource::Samples(b)) => {
            let ha = sample_hull(*a);
            let hb = sample_hull(*b);
            (ha.0.min(hb.0), ha.1.max(hb.1))
        }
    };
    let floor = |masses: Vec<f64>| -> Vec<f64> {
        let denom = 1.0 + smoothing * (g * g) as f64;
        masses.into_iter().map(|m| (m + smoothing) / denom).collect()
    };
    let to_masses = |side: &GridSource<'_, S>| -> Result<Vec<f64>> {
        match side {
            GridSource::Samples(t) => Ok(floor(histogram_masses(t, bounds, g)?)),
            GridSource::Density(d) => {
                if d.resolution != g {
                    return Err(Error::invalid(format!(
                        "density grid resolution {} does not match requested {}",
                        d.resolution, g
                    )));
                }
                Ok(floor(d.masses()))
            }
        }
    };
    let pm = to_masses(&p)?;
    let qm = to_masses(&q)?;
    let mut kl = 0.0;
    for (&pc, &qc) in pm.iter().zip(&qm) {
        if pc > 0.0 {
            if qc <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pc * (pc / qc).ln();
        }
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_spiral, spiral_density_fn};
    use crate::density::density_grid_from_fn;
    use crate::rng::{gaussian_sample, Rng};

    #[test]
    fn mmd_zero_on_identical_sets() {
        let mut rng = Rng::from_seed(2);
        let x = gaussian_sample::<f64>(&mut rng, 50, 2);
        let v = mmd_rbf(&x, &x, Bandwidth::Fixed(0.5)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn mmd_symmetric() {
        let mut rng = Rng::from_seed(3);
        let x = gaussian_sample::<f64>(&mut rng, 40, 2);
        let y = gaussian_sample::<f64>(&mut rng, 60, 2);
        let a = mmd_rbf(&x, &y, Bandwidth::Fixed(0.5)).unwrap();
        let b = mmd_rbf(&y, &x, Bandwidth::Fixed(0.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mmd_small_for_same_distribution() {
        let mut rng = Rng::from_seed(5);
        let x = gaussian_sample::<f64>(&mut rng, 2000, 2);
        let y = gaussian_sample::<f64>(&mut rng, 2000, 2);
        let v = mmd_rbf(&x, &y, Bandwidth::Fixed(0.5)).unwrap();
        assert!(v < 0.02, "same-distribution mmd {v}");
    }

    #[test]
    fn mmd_large_for_separated_gaussians() {
        let mut rng = Rng::from_seed(6);
        let x = gaussian_sample::<f64>(&mut rng, 1000, 2);
        let y = gaussian_sample::<f64>(&mut rng, 1000, 2)
            .map(|v| v + 3.0);
        let v = mmd_rbf(&x, &y, Bandwidth::Fixed(0.5)).unwrap();
        assert!(v > 0.5, "separated mmd {v}");
    }

    #[test]
    fn mmd_median_heuristic_runs() {
        let mut rng = Rng::from_seed(7);
        let x = gaussian_sample::<f64>(&mut rng, 100, 2);
        let y = gaussian_sample::<f64>(&mut rng, 100, 2).map(|v| v + 1.0);
        let v = mmd_rbf(&x, &y, Bandwidth::MedianHeuristic).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn mmd_rejects_tiny_sets() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let y = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(mmd_rbf(&x, &y, Bandwidth::Fixed(0.5)).is_err());
    }

    #[test]
    fn kl_zero_on_identical_grids() {
        let grid = density_grid_from_fn::<f64>((-2.0, 2.0), 32, |x, y| {
            (-0.5 * (x * x + y * y)).exp()
        })
        .unwrap();
        let kl = grid_kl(
            GridSource::Density(&grid),
            GridSource::Density(&grid),
            32,
            1e-6,
        )
        .unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn kl_nonnegative_and_finite_on_disjoint_histograms() {
        let a = Tensor::from_rows(&[vec![-1.0, -1.0], vec![-0.9, -0.9]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.9, 0.9]]).unwrap();
        let kl = grid_kl(
            GridSource::Samples(&a),
            GridSource::Samples(&b),
            32,
            1e-6,
        )
        .unwrap();
        assert!(kl.is_finite());
        assert!(kl > 1.0, "disjoint histograms should have large KL, got {kl}");
    }

    #[test]
    fn kl_bound_mismatch_rejected() {
        let g1 = density_grid_from_fn::<f64>((-2.0, 2.0), 32, |_, _| 1.0).unwrap();
        let g2 = density_grid_from_fn::<f64>((-3.0, 3.0), 32, |_, _| 1.0).unwrap();
        assert!(grid_kl(
            GridSource::Density(&g1),
            GridSource::Density(&g2),
            32,
            1e-6
        )
        .is_err());
    }

    #[test]
    fn spiral_histogram_matches_analytic_density() {
        let mut rng = Rng::from_seed(11);
        let ds = make_spiral::<f64>(100_000, 0.05, &mut rng).unwrap();
        let f = spiral_density_fn(0.05, 4000);
        let grid = density_grid_from_fn::<f64>(ds.bounds, 100, f).unwrap();
        let kl = grid_kl(
            GridSource::Samples(&ds.points),
            GridSource::Density(&grid),
            100,
            1e-6,
        )
        .unwrap();
        assert!(kl < 0.05, "self-consistency KL {kl}");
    }
}
