//! Cooperative training of two generative flows on 2D densities: a
//! normalizing flow that proposes samples in one shot, and a short-run
//! Langevin flow that revises them toward an energy-based model. The two
//! are trained jointly — the flow learns from the revised samples, the
//! EBM learns from the contrast between data and revised samples — and
//! the composite sampler is the product of that cooperation.
//!
//! Everything numeric is generic over the scalar type via [`Scalar`]
//! (a `num_traits::Float` extension); `f64` is the default type parameter
//! on every model type, and all shipped tolerances assume it. Seeded runs
//! are bit-reproducible: the RNG, its draw order, and parameter
//! flattening orders are all fixed contracts.

pub mod adam;
pub mod coop;
pub mod coupling;
pub mod data;
pub mod density;
pub mod ebm;
pub mod error;
pub mod flow;
pub mod langevin;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tasks;
pub mod tensor;

pub use adam::AdamState;
pub use coop::{
    coop_sample, coop_train, moment_gap, train_flow_only, train_shortrun_ebm, ArchConfig,
    CoopConfig, CoopState, DiagRow, TrainMode,
};
pub use coupling::CouplingLayer;
pub use data::{make_auxiliary, make_spiral, AuxKind, Dataset2D};
pub use density::{ebm_density_grid, flow_density_grid, DensityGrid, GridKind};
pub use ebm::{ebm_grad, EbmModel, Reference};
pub use error::{Error, Result};
pub use flow::FlowModel;
pub use langevin::{langevin_flow, noise_decay_ratio, shortrun_sample, ChainInit, LangevinConfig, NoiseMode};
pub use metrics::{grid_kl, mmd_rbf, Bandwidth, GridSource};
pub use nn::{finite_diff_grad, Activation, MlpNet};
pub use rng::{child_seed, gaussian_sample, uniform_sample, Rng, RNG_ALGORITHM_ID};
pub use scalar::Scalar;
pub use tasks::{deterministic_generator, inpaint, interpolate, reconstruct, reconstruct_in_latent, ReconResult};
pub use tensor::Tensor;
