//! Downstream uses of a trained checkpoint: reconstruction, inpainting,
//! and latent interpolation. The CoopFlow is treated as the latent-variable
//! generator `x = F(g(z), e)` with the injected noise e set to zero, so the
//! T-step Langevin map is deterministic and can be backpropagated through
//! exactly by unrolling (each step needs one Hessian-vector product of the
//! energy).

use crate::coop::CoopState;
use crate::error::{Error, Result};
use crate::langevin::langevin_flow;
use crate::rng::{gaussian_sample, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outcome of reconstructing a single target point.
#[derive(Debug, Clone)]
pub struct ReconResult<S: Scalar = f64> {
    /// Optimized initializer x̂*.
    pub xhat_star: Tensor<S>,
    /// F(x̂*, e = 0), the reconstruction itself.
    pub x_recon: Tensor<S>,
    /// g⁻¹(x̂*), the recovered latent.
    pub z_star: Tensor<S>,
    /// Objective value at every iterate, from the initializer onward.
    pub loss_trajectory: Vec<f64>,
    pub iterations_run: usize,
}

/// The noise-free Langevin map at the test-time step size; pure in x̂ and
/// identical to sampling with the noise term removed.
pub fn deterministic_generator<S: Scalar>(
    state: &CoopState<S>,
    xhat: &Tensor<S>,
) -> Result<Tensor<S>> {
    // noise_scale = 0 consumes no randomness.
    let mut rng = Rng::from_seed(0);
    langevin_flow(&state.ebm, xhat, &state.cfg.langevin.at_test(), 0.0, &mut rng)
}

/// Unrolled forward pass, keeping every iterate for backpropagation.
fn generator_trajectory<S: Scalar>(
    state: &CoopState<S>,
    xhat: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    let cfg = state.cfg.langevin.at_test();
    let half_sq = S::of(0.5 * cfg.step_size * cfg.step_size);
    let trust = S::of(1e6);
    let mut x = xhat.clone();
    let mut traj = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        traj.push(x.clone());
        let (_, grad) = state.ebm.value_and_grad(&x)?;
        let xd = x.data_mut();
        for (i, (v, g)) in xd.iter_mut().zip(grad.data()).enumerate() {
            if !g.is_finite() {
                return Err(Error::ChainDiverged {
                    step,
                    chain: i / state.cfg.arch.dim,
                });
            }
            *v = *v + half_sq * *g;
            if v.abs() > trust {
                return Err(Error::ChainDiverged {
                    step,
                    chain: i / state.cfg.arch.dim,
                });
            }
        }
    }
    Ok((x, traj))
}

/// Vector-Jacobian product of the unrolled map: given `dL/dF`, walk the
/// stored iterates backwards applying `u ← u + (δ²/2)·H(x_t)·u`.
fn generator_vjp<S: Scalar>(
    state: &CoopState<S>,
    traj: &[Tensor<S>],
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    let cfg = state.cfg.langevin.at_test();
    let half_sq = S::of(0.5 * cfg.step_size * cfg.step_size);
    let mut u = upstream.clone();
    for x_t in traj.iter().rev() {
        let hv = state.ebm.hvp(x_t, &u)?;
        u = u.zip_with(&hv, "generator_vjp", |a, b| a + half_sq * b)?;
    }
    Ok(u)
}

fn check_point<S: Scalar>(x: &Tensor<S>, dim: usize, op: &'static str) -> Result<()> {
    let (n, d) = x.dims2()?;
    if n != 1 || d != dim {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![n, d],
            rhs: vec![1, dim],
        });
    }
    Ok(())
}

fn masked_sq_loss<S: Scalar>(target: &Tensor<S>, fx: &Tensor<S>, mask: Option<&[S]>) -> f64 {
    target
        .data()
        .iter()
        .zip(fx.data())
        .enumerate()
        .map(|(i, (&t, &f))| {
            let w = mask.map_or(S::one(), |m| m[i]);
            let d = (t - f) * w.sqrt();
            (d * d).to_f64_lossy()
        })
        .sum()
}

/// Gradient descent on `‖M⊙(target − F(x̂))‖²` over x̂ from a flow-drawn
/// initializer. With `mask = None` this is plain reconstruction. Returns
/// the final x̂ and the loss at every iterate. `backtrack` halves the step
/// on any loss increase.
#[allow(clippy::too_many_arguments)]
fn descend_on_xhat<S: Scalar>(
    state: &CoopState<S>,
    target: &Tensor<S>,
    mask: Option<&[S]>,
    mut xhat: Tensor<S>,
    steps: usize,
    lr: f64,
    backtrack: bool,
    mut on_iterate: impl FnMut(usize, &Tensor<S>) -> Result<()>,
) -> Result<(Tensor<S>, Vec<f64>)> {
    let mut losses = Vec::with_capacity(steps + 1);
    let (mut fx, mut traj) = generator_trajectory(state, &xhat)?;
    on_iterate(0, &fx)?;
    let mut loss = masked_sq_loss(target, &fx, mask);
    losses.push(loss);
    for step in 0..steps {
        // dL/dF = 2·M⊙(F − target)
        let upstream = Tensor::from_parts(
            fx.shape().to_vec(),
            fx.data()
                .iter()
                .zip(target.data())
                .enumerate()
                .map(|(i, (&f, &t))| {
                    let w = mask.map_or(S::one(), |m| m[i]);
                    S::of(2.0) * w * (f - t)
                })
                .collect(),
        );
        let grad = generator_vjp(state, &traj, &upstream)?;
        let mut step_lr = lr;
        loop {
            let candidate = xhat.zip_with(&grad, "reconstruct", |x, g| x - S::of(step_lr) * g)?;
            let (cfx, ctraj) = generator_trajectory(state, &candidate)?;
            let closs = masked_sq_loss(target, &cfx, mask);
            if !backtrack || closs <= loss || step_lr < lr * 2f64.powi(-30) {
                xhat = candidate;
                fx = cfx;
                traj = ctraj;
                loss = closs;
                break;
            }
            step_lr *= 0.5;
        }
        on_iterate(step + 1, &fx)?;
        losses.push(loss);
    }
    Ok((xhat, losses))
}

/// Reconstructs `x` by descending on x̂ through the unrolled generator,
/// with x̂ initialized from the flow (`x̂₀ = g(z)`, `z ~ q₀`).
pub fn reconstruct<S: Scalar>(
    state: &CoopState<S>,
    x: &Tensor<S>,
    steps: usize,
    lr: f64,
    rng: &mut Rng,
    backtrack: bool,
) -> Result<ReconResult<S>> {
    check_point(x, state.cfg.arch.dim, "reconstruct")?;
    if !(lr > 0.0) {
        return Err(Error::invalid("reconstruct lr must be positive"));
    }
    let z0 = gaussian_sample::<S>(rng, 1, state.cfg.arch.dim);
    let xhat0 = state.flow.forward(&z0)?;
    let (xhat_star, losses) =
        descend_on_xhat(state, x, None, xhat0, steps, lr, backtrack, |_, _| Ok(()))?;
    let x_recon = deterministic_generator(state, &xhat_star)?;
    let (z_star, _) = state.flow.inverse(&xhat_star)?;
    Ok(ReconResult {
        xhat_star,
        x_recon,
        z_star,
        loss_trajectory: losses,
        iterations_run: steps,
    })
}

/// Reconstruction by optimizing the latent z directly through F(g(z)).
/// Stationary points agree with `reconstruct` up to optimization error;
/// it exists as the slower of the two equivalent routes.
pub fn reconstruct_in_latent<S: Scalar>(
    state: &CoopState<S>,
    x: &Tensor<S>,
    steps: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<ReconResult<S>> {
    check_point(x, state.cfg.arch.dim, "reconstruct_in_latent")?;
    let mut z = gaussian_sample::<S>(rng, 1, state.cfg.arch.dim);
    let mut losses = Vec::with_capacity(steps + 1);
    let lr_s = S::of(lr);
    {
        let xhat = state.flow.forward(&z)?;
        let fx = deterministic_generator(state, &xhat)?;
        losses.push(masked_sq_loss(x, &fx, None));
    }
    for _ in 0..steps {
        let xhat = state.flow.forward(&z)?;
        let (fx, traj) = generator_trajectory(state, &xhat)?;
        let upstream = Tensor::from_parts(
            fx.shape().to_vec(),
            fx.data()
                .iter()
                .zip(x.data())
                .map(|(&f, &t)| S::of(2.0) * (f - t))
                .collect(),
        );
        let dxhat = generator_vjp(state, &traj, &upstream)?;
        let (_, dz) = state.flow.forward_input_vjp(&z, &dxhat)?;
        z = z.zip_with(&dz, "reconstruct_in_latent", |a, g| a - lr_s * g)?;
        let fx_new = {
            let xh = state.flow.forward(&z)?;
            deterministic_generator(state, &xh)?
        };
        losses.push(masked_sq_loss(x, &fx_new, None));
    }
    let xhat_star = state.flow.forward(&z)?;
    let x_recon = deterministic_generator(state, &xhat_star)?;
    Ok(ReconResult {
        xhat_star,
        x_recon,
        z_star: z,
        loss_trajectory: losses,
        iterations_run: steps,
    })
}

/// Inpainting: descend on `‖M⊙(x_mask − F(x̂))‖²` and return evenly
/// spaced snapshots of F(x̂) over the iterations, final state included.
pub fn inpaint<S: Scalar>(
    state: &CoopState<S>,
    x_mask: &Tensor<S>,
    mask: &Tensor<S>,
    steps: usize,
    lr: f64,
    rng: &mut Rng,
    snapshots: usize,
) -> Result<Vec<Tensor<S>>> {
    let dim = state.cfg.arch.dim;
    check_point(x_mask, dim, "inpaint")?;
    check_point(mask, dim, "inpaint")?;
    if mask
        .data()
        .iter()
        .any(|&m| m != S::zero() && m != S::one())
    {
        return Err(Error::invalid("inpaint mask must be binary"));
    }
    if snapshots == 0 {
        return Err(Error::invalid("inpaint needs at least one snapshot"));
    }
    // Snapshot at evenly spaced iterate indices over [0, steps].
    let want: Vec<usize> = if snapshots == 1 {
        vec![steps]
    } else {
        (0..snapshots)
            .map(|k| (k * steps) / (snapshots - 1))
            .collect()
    };
    let z0 = gaussian_sample::<S>(rng, 1, dim);
    let xhat0 = state.flow.forward(&z0)?;
    let mut shots = Vec::with_capacity(snapshots);
    let mvals = mask.data().to_vec();
    descend_on_xhat(
        state,
        x_mask,
        Some(&mvals),
        xhat0,
        steps,
        lr,
        false,
        |iter, fx| {
            for &w in &want {
                if w == iter {
                    shots.push(fx.clone());
                }
            }
            Ok(())
        },
    )?;
    Ok(shots)
}

/// Latent interpolation: reconstruct both endpoints, linearly interpolate
/// their latents, and generate through F(g(z_k)).
pub fn interpolate<S: Scalar>(
    state: &CoopState<S>,
    x_a: &Tensor<S>,
    x_b: &Tensor<S>,
    num: usize,
    recon_steps: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Vec<Tensor<S>>> {
    if num < 2 {
        return Err(Error::invalid("interpolation needs at least 2 points"));
    }
    let ra = reconstruct(state, x_a, recon_steps, lr, rng, false)?;
    let rb = reconstruct(state, x_b, recon_steps, lr, rng, false)?;
    let mut out = Vec::with_capacity(num);
    for k in 0..num {
        let lambda = S::of(k as f64 / (num - 1) as f64);
        let z = ra
            .z_star
            .zip_with(&rb.z_star, "interpolate", |a, b| {
                (S::one() - lambda) * a + lambda * b
            })?;
        let xhat = state.flow.forward(&z)?;
        out.push(deterministic_generator(state, &xhat)?);
    }
    Ok(out)
}
