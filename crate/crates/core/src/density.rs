//! Density rasterization on square grids, including the grid estimate of
//! the EBM partition function.

use crate::ebm::EbmModel;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What the grid values hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Exact log-density at cell centers (flow grids).
    LogDensity,
    /// Grid-normalized density at cell centers (EBM grids).
    Normalized,
}

/// `values[i, j]` is evaluated at the center of cell `(i, j)` with
/// `x0 = lo + (i+0.5)·h`, `x1 = lo + (j+0.5)·h`, `h = (hi−lo)/G`.
#[derive(Debug, Clone)]
pub struct DensityGrid<S: Scalar = f64> {
    pub bounds: (f64, f64),
    pub resolution: usize,
    pub values: Tensor<S>,
    pub kind: GridKind,
    /// Grid estimate of the partition function (EBM grids only).
    pub normalizer: Option<f64>,
}

impl<S: Scalar> DensityGrid<S> {
    pub fn cell_width(&self) -> f64 {
        (self.bounds.1 - self.bounds.0) / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.cell_width();
        h * h
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.cell_width();
        (
            self.bounds.0 + (i as f64 + 0.5) * h,
            self.bounds.0 + (j as f64 + 0.5) * h,
        )
    }

    /// Per-cell probability masses, normalized to sum to one on the box.
    pub fn masses(&self) -> Vec<f64> {
        let area = self.cell_area();
        let raw: Vec<f64> = match self.kind {
            GridKind::LogDensity => self
                .values
                .data()
                .iter()
                .map(|v| v.to_f64_lossy().exp() * area)
                .collect(),
            GridKind::Normalized => self
                .values
                .data()
                .iter()
                .map(|v| v.to_f64_lossy() * area)
                .collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|m| m / total).collect()
    }

    /// Area-weighted sum of the stored values (1 for EBM grids).
    pub fn area_weighted_sum(&self) -> f64 {
        let area = self.cell_area();
        self.values
            .data()
            .iter()
            .map(|v| match self.kind {
                GridKind::LogDensity => v.to_f64_lossy().exp() * area,
                GridKind::Normalized => v.to_f64_lossy() * area,
            })
            .sum()
    }
}

fn check_grid_args(bounds: (f64, f64), g: usize) -> Result<()> {
    if g < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    if !(bounds.0 < bounds.1) {
        return Err(Error::invalid("grid bounds must satisfy lo < hi"));
    }
    Ok(())
}

fn cell_centers<S: Scalar>(bounds: (f64, f64), g: usize) -> Tensor<S> {
    let h = (bounds.1 - bounds.0) / g as f64;
    let mut pts = Vec::with_capacity(g * g * 2);
    for i in 0..g {
        for j in 0..g {
            pts.push(S::of(bounds.0 + (i as f64 + 0.5) * h));
            pts.push(S::of(bounds.0 + (j as f64 + 0.5) * h));
        }
    }
    Tensor::from_parts(vec![g * g, 2], pts)
}

/// Exact flow log-density at cell centers.
pub fn flow_density_grid<S: Scalar>(
    flow: &FlowModel<S>,
    bounds: (f64, f64),
    g: usize,
) -> Result<DensityGrid<S>> {
    check_grid_args(bounds, g)?;
    let centers = cell_centers::<S>(bounds, g);
    let logp = flow.logprob(&centers)?;
    Ok(DensityGrid {
        bounds,
        resolution: g,
        values: Tensor::from_parts(vec![g, g], logp.data().to_vec()),
        kind: GridKind::LogDensity,
        normalizer: None,
    })
}

/// exp(energy) normalized by the cell-center Riemann sum; the normalizer
/// recorded is the grid estimate of Z(θ) over the box.
pub fn ebm_density_grid<S: Scalar>(
    ebm: &EbmModel<S>,
    bounds: (f64, f64),
    g: usize,
) -> Result<DensityGrid<S>> {
    check_grid_args(bounds, g)?;
    let centers = cell_centers::<S>(bounds, g);
    let energy = ebm.energy(&centers)?;
    // Subtract the max before exponentiating; fold the offset back into Z.
    let max_e = energy
        .data()
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max);
    let area = {
        let h = (bounds.1 - bounds.0) / g as f64;
        h * h
    };
    let unnorm: Vec<f64> = energy
        .data()
        .iter()
        .map(|v| (v.to_f64_lossy() - max_e).exp())
        .collect();
    let z_shifted: f64 = unnorm.iter().map(|u| u * area).sum();
    let values: Vec<S> = unnorm.iter().map(|u| S::of(u / z_shifted)).collect();
    let normalizer = z_shifted * max_e.exp();
    Ok(DensityGrid {
        bounds,
        resolution: g,
        values: Tensor::from_parts(vec![g, g], values),
        kind: GridKind::Normalized,
        normalizer: Some(normalizer),
    })
}

/// Grid built from an analytic density, normalized on the box; used by
/// test oracles.
pub fn density_grid_from_fn<S: Scalar>(
    bounds: (f64, f64),
    g: usize,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DensityGrid<S>> {
    check_grid_args(bounds, g)?;
    let h = (bounds.1 - bounds.0) / g as f64;
    let area = h * h;
    let mut raw = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let x = bounds.0 + (i as f64 + 0.5) * h;
            let y = bounds.0 + (j as f64 + 0.5) * h;
            raw.push(f(x, y));
        }
    }
    let total: f64 = raw.iter().map(|v| v * area).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFinite("density_grid_from_fn"));
    }
    Ok(DensityGrid {
        bounds,
        resolution: g,
        values: Tensor::from_parts(vec![g, g], raw.iter().map(|v| S::of(v / total)).collect()),
        kind: GridKind::Normalized,
        normalizer: Some(total),
    })
}
