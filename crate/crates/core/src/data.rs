//! Synthetic 2D datasets: the spiral benchmark plus auxiliary fixtures.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scale applied to the unit spiral so the clean curve lies in [−1, 1]².
pub const SPIRAL_SCALE: f64 = 0.9;

/// A generated point set with its provenance and a square bounding box.
#[derive(Debug, Clone)]
pub struct Dataset2D<S: Scalar = f64> {
    pub points: Tensor<S>,
    pub generator_id: String,
    /// Ordered key/value parameter record for the JSON sidecar.
    pub generator_params: Vec<(String, f64)>,
    /// Square box [lo, hi]² containing every point.
    pub bounds: (f64, f64),
}

impl<S: Scalar> Dataset2D<S> {
    fn from_points(
        points: Tensor<S>,
        generator_id: &str,
        generator_params: Vec<(String, f64)>,
    ) -> Self {
        let hi = points
            .data()
            .iter()
            .map(|v| v.to_f64_lossy().abs())
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        Self {
            points,
            generator_id: generator_id.to_string(),
            generator_params,
            bounds: (-hi, hi),
        }
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Clean spiral curve point at parameter t ∈ [0, 3π].
pub fn spiral_curve(t: f64) -> (f64, f64) {
    let r = SPIRAL_SCALE * t / (3.0 * std::f64::consts::PI);
    (r * t.cos(), r * t.sin())
}

/// Spiral dataset: per point, `u ~ U[0,1)`, `t = 3π√u`, point on the
/// curve plus `σ·ε` Gaussian noise (one pair drawn per point when σ > 0).
pub fn make_spiral<S: Scalar>(n: usize, noise_sigma: f64, rng: &mut Rng) -> Result<Dataset2D<S>> {
    if n == 0 {
        return Err(Error::EmptyBatch("make_spiral"));
    }
    if noise_sigma < 0.0 {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let mut data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let u = rng.uniform();
        let t = 3.0 * std::f64::consts::PI * u.sqrt();
        let (mut x, mut y) = spiral_curve(t);
        if noise_sigma > 0.0 {
            let (e0, e1) = rng.gaussian_pair();
            x += noise_sigma * e0;
            y += noise_sigma * e1;
        }
        data.push(S::of(x));
        data.push(S::of(y));
    }
    Ok(Dataset2D::from_points(
        Tensor::from_parts(vec![n, 2], data),
        "spiral",
        vec![
            ("n".into(), n as f64),
            ("noise_sigma".into(), noise_sigma),
        ],
    ))
}

/// Auxiliary toy constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxKind {
    /// Centers on the radius-0.8 circle at multiples of 45°, σ = 0.05.
    EightGaussians,
    /// Rings of radius 0.4 and 0.8, σ = 0.02.
    TwoRings,
    /// Uniform on the black cells of a 4×4 board over [−1, 1]².
    Checkerboard,
}

impl std::str::FromStr for AuxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eight-gaussians" => Ok(AuxKind::EightGaussians),
            "two-rings" => Ok(AuxKind::TwoRings),
            "checkerboard" => Ok(AuxKind::Checkerboard),
            other => Err(Error::invalid(format!("unknown dataset kind '{other}'"))),
        }
    }
}

pub fn make_auxiliary<S: Scalar>(kind: AuxKind, n: usize, rng: &mut Rng) -> Result<Dataset2D<S>> {
    if n == 0 {
        return Err(Error::EmptyBatch("make_auxiliary"));
    }
    let mut data = Vec::with_capacity(n * 2);
    match kind {
        AuxKind::EightGaussians => {
            let sigma = 0.05;
            for _ in 0..n {
                let k = rng.below(8) as f64;
                let angle = k * std::f64::consts::FRAC_PI_4;
                let (e0, e1) = rng.gaussian_pair();
                data.push(S::of(0.8 * angle.cos() + sigma * e0));
                data.push(S::of(0.8 * angle.sin() + sigma * e1));
            }
        }
        AuxKind::TwoRings => {
            let sigma = 0.02;
            for _ in 0..n {
                let radius = if rng.below(2) == 0 { 0.4 } else { 0.8 };
                let theta = 2.0 * std::f64::consts::PI * rng.uniform();
                let (e0, e1) = rng.gaussian_pair();
                data.push(S::of(radius * theta.cos() + sigma * e0));
                data.push(S::of(radius * theta.sin() + sigma * e1));
            }
        }
        AuxKind::Checkerboard => {
            // Black cells of a 4×4 board, row-major.
            let cells: Vec<(usize, usize)> = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|(i, j)| (i + j) % 2 == 0)
                .collect();
            let w = 0.5; // cell width on [−1, 1]
            for _ in 0..n {
                let (ci, cj) = cells[rng.below(cells.len())];
                let x = -1.0 + w * (ci as f64 + rng.uniform());
                let y = -1.0 + w * (cj as f64 + rng.uniform());
                data.push(S::of(x));
                data.push(S::of(y));
            }
        }
    }
    let id = match kind {
        AuxKind::EightGaussians => "eight-gaussians",
        AuxKind::TwoRings => "two-rings",
        AuxKind::Checkerboard => "checkerboard",
    };
    Ok(Dataset2D::from_points(
        Tensor::from_parts(vec![n, 2], data),
        id,
        vec![("n".into(), n as f64)],
    ))
}

/// Mixture-of-curve-points approximation of the spiral density with noise
/// σ: the oracle used for self-consistency checks of the histogram KL.
pub fn spiral_density_fn(noise_sigma: f64, curve_points: usize) -> impl Fn(f64, f64) -> f64 {
    let centers: Vec<(f64, f64)> = (0..curve_points)
        .map(|k| {
            // u uniform implies t = 3π√u; use midpoint u values.
            let u = (k as f64 + 0.5) / curve_points as f64;
            spiral_curve(3.0 * std::f64::consts::PI * u.sqrt())
        })
        .collect();
    let inv_two_sig2 = 1.0 / (2.0 * noise_sigma * noise_sigma);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * noise_sigma * noise_sigma);
    move |x, y| {
        let mut acc = 0.0;
        for &(cx, cy) in &centers {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            acc += (-d2 * inv_two_sig2).exp();
        }
        acc * norm / centers.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_spiral_satisfies_parametric_identity() {
        let mut rng = Rng::from_seed(4);
        let ds: Dataset2D = make_spiral(500, 0.0, &mut rng).unwrap();
        for row in ds.points.rows() {
            let (x, y) = (row[0], row[1]);
            let r = (x * x + y * y).sqrt();
            let t = 3.0 * std::f64::consts::PI * r / SPIRAL_SCALE;
            let (cx, cy) = spiral_curve(t);
            assert!((cx - x).abs() < 1e-9 && (cy - y).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_spiral_stays_in_slack_box() {
        // 0.9 + 6σ = 1.2 < 1.3; a fixed seed makes this a hard check.
        let mut rng = Rng::from_seed(7);
        let ds: Dataset2D = make_spiral(10_000, 0.05, &mut rng).unwrap();
        assert!(ds
            .points
            .data()
            .iter()
            .all(|v| v.abs() <= 1.3));
        assert!(ds.bounds.1 <= 1.3);
    }

    #[test]
    fn spiral_reproducible() {
        let gen = |seed| {
            let mut rng = Rng::from_seed(seed);
            make_spiral::<f64>(100, 0.05, &mut rng).unwrap()
        };
        assert_eq!(gen(3).points.data(), gen(3).points.data());
    }

    #[test]
    fn spiral_rejects_empty() {
        let mut rng = Rng::from_seed(1);
        assert!(make_spiral::<f64>(0, 0.05, &mut rng).is_err());
    }

    #[test]
    fn eight_gaussian_centers_on_circle() {
        let mut rng = Rng::from_seed(9);
        let ds: Dataset2D = make_auxiliary(AuxKind::EightGaussians, 4000, &mut rng).unwrap();
        for row in ds.points.rows() {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((r - 0.8).abs() < 0.05 * 6.0, "radius {r}");
            // Angle near a multiple of 45 degrees.
            let angle = row[1].atan2(row[0]);
            let k = angle / std::f64::consts::FRAC_PI_4;
            assert!((k - k.round()).abs() < 0.5, "angle {angle}");
        }
    }

    #[test]
    fn two_rings_radii() {
        let mut rng = Rng::from_seed(10);
        let ds: Dataset2D = make_auxiliary(AuxKind::TwoRings, 2000, &mut rng).unwrap();
        for row in ds.points.rows() {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            let near = (r - 0.4).abs().min((r - 0.8).abs());
            assert!(near < 0.02 * 6.0, "radius {r}");
        }
    }

    #[test]
    fn auxiliary_rejects_empty_and_unknown() {
        let mut rng = Rng::from_seed(1);
        assert!(make_auxiliary::<f64>(AuxKind::Checkerboard, 0, &mut rng).is_err());
        assert!("nonsense".parse::<AuxKind>().is_err());
        assert_eq!(
            "two-rings".parse::<AuxKind>().unwrap(),
            AuxKind::TwoRings
        );
    }
}
