//! Normalizing flow: a stack of affine coupling layers over a standard
//! normal prior, with exact inverse, exact log-likelihood, and one-step
//! maximum-likelihood updates.

use crate::adam::AdamState;
use crate::coupling::{CouplingCache, CouplingLayer};
use crate::error::{Error, Result};
use crate::nn::{Activation, MlpNet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// log N(z; 0, I) = −(D/2)·log 2π − ‖z‖²/2, per row.
pub fn standard_normal_logprob<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    let half_log_tau = S::of(0.5 * (2.0 * std::f64::consts::PI).ln());
    let data = z
        .rows()
        .map(|row| {
            let sq: S = row.iter().map(|&v| v * v).sum();
            -S::from_usize(d).unwrap() * half_log_tau - sq * S::of(0.5)
        })
        .collect();
    let _ = n;
    Tensor::from_parts(vec![z.shape()[0]], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<S: Scalar = f64> {
    dim: usize,
    layers: Vec<CouplingLayer<S>>,
}

impl<S: Scalar> FlowModel<S> {
    /// Standard construction: `depth` coupling layers with alternating
    /// masks (even layers pass even coordinates) and freshly initialized
    /// tanh subnets of the given hidden widths.
    pub fn new(
        dim: usize,
        depth: usize,
        hidden: &[usize],
        scale_clamp: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("flow dimension must be at least 2"));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let mask: Vec<bool> = (0..dim).map(|i| i % 2 == l % 2).collect();
            let n_masked = mask.iter().filter(|&&m| m).count();
            let n_unmasked = dim - n_masked;
            let mut sizes = vec![n_masked];
            sizes.extend_from_slice(hidden);
            sizes.push(n_unmasked);
            let scale_net = MlpNet::new(&sizes, Activation::Tanh, rng)?;
            let shift_net = MlpNet::new(&sizes, Activation::Tanh, rng)?;
            layers.push(CouplingLayer::new(mask, scale_net, shift_net, scale_clamp)?);
        }
        Self::from_layers(dim, layers)
    }

    /// Same architecture with all-zero subnets: the identity flow.
    pub fn identity(dim: usize, depth: usize, hidden: &[usize], scale_clamp: f64) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let mask: Vec<bool> = (0..dim).map(|i| i % 2 == l % 2).collect();
            let n_masked = mask.iter().filter(|&&m| m).count();
            let n_unmasked = dim - n_masked;
            let mut sizes = vec![n_masked];
            sizes.extend_from_slice(hidden);
            sizes.push(n_unmasked);
            layers.push(CouplingLayer::new(
                mask,
                MlpNet::zeros(&sizes, Activation::Tanh)?,
                MlpNet::zeros(&sizes, Activation::Tanh)?,
                scale_clamp,
            )?);
        }
        Self::from_layers(dim, layers)
    }

    /// Builds from explicit layers, checking that consecutive masks are
    /// complementary (every coordinate is transformed at least once across
    /// any two consecutive layers).
    pub fn from_layers(dim: usize, layers: Vec<CouplingLayer<S>>) -> Result<Self> {
        for layer in &layers {
            if layer.dim() != dim {
                return Err(Error::invalid("coupling layer dimension mismatch"));
            }
        }
        for pair in layers.windows(2) {
            let both_masked = pair[0]
                .mask()
                .iter()
                .zip(pair[1].mask())
                .any(|(&a, &b)| a && b);
            if both_masked {
                return Err(Error::invalid(
                    "consecutive coupling layers must use complementary masks",
                ));
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer<S>] {
        &self.layers
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(CouplingLayer::param_len).sum()
    }

    /// Flat parameters: layers in order, scale net then shift net.
    pub fn params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_len());
        for layer in &self.layers {
            out.extend(layer.scale_net().params());
            out.extend(layer.shift_net().params());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(Error::invalid(format!(
                "expected {} flow parameters, got {}",
                self.param_len(),
                flat.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let (scale, shift) = layer.nets_mut();
            let ns = scale.param_len();
            scale.set_params(&flat[off..off + ns])?;
            off += ns;
            let nt = shift.param_len();
            shift.set_params(&flat[off..off + nt])?;
            off += nt;
        }
        Ok(())
    }

    /// x = g(z): composes the coupling layers in order.
    pub fn forward(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_with_logdet(z)?.0)
    }

    /// Forward map plus the accumulated per-row forward log-det.
    pub fn forward_with_logdet(&self, z: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_width(z, "flow_forward")?;
        let n = z.shape()[0];
        let mut h = z.clone();
        let mut logdet = Tensor::from_parts(vec![n], vec![S::zero(); n]);
        for layer in &self.layers {
            let (next, ld) = layer.forward(&h)?;
            h = next;
            logdet = logdet.add(&ld)?;
        }
        Ok((h, logdet))
    }

    /// z = g⁻¹(x) plus `logdet_inv = Σ_l log|det ∂h_{l−1}/∂h_l|`
    /// (the negated forward log-det evaluated at the same intermediates).
    pub fn inverse(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (z, logdet_inv, _) = self.inverse_pass(x, false)?;
        Ok((z, logdet_inv))
    }

    fn check_width(&self, x: &Tensor<S>, op: &'static str) -> Result<()> {
        let (n, d) = x.dims2()?;
        if d != self.dim {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![n, d],
                rhs: vec![n, self.dim],
            });
        }
        Ok(())
    }

    /// Applies layer inverses in reverse order. Caches (in application
    /// order: last layer first) are kept when `want_caches` is set.
    #[allow(clippy::type_complexity)]
    fn inverse_pass(
        &self,
        x: &Tensor<S>,
        want_caches: bool,
    ) -> Result<(Tensor<S>, Tensor<S>, Vec<CouplingCache<S>>)> {
        self.check_width(x, "flow_inverse")?;
        let n = x.shape()[0];
        let mut logdet_inv = vec![S::zero(); n];
        let mut h = x.clone();
        let mut caches = Vec::new();
        for layer in self.layers.iter().rev() {
            let cache = layer.inverse_with_cache(&h)?;
            for (acc, srow) in logdet_inv.iter_mut().zip(cache.s.rows()) {
                for sv in srow {
                    *acc -= *sv;
                }
            }
            h = cache.out.clone();
            if want_caches {
                caches.push(cache);
            }
        }
        Ok((h, Tensor::from_parts(vec![n], logdet_inv), caches))
    }

    /// log q(x) = log q₀(g⁻¹(x)) + logdet_inv, per row.
    pub fn logprob(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (z, logdet_inv) = self.inverse(x)?;
        standard_normal_logprob(&z).add(&logdet_inv)
    }

    /// Gradient of the batch-mean log-likelihood with respect to the flat
    /// parameter vector (ascent direction), together with the mean value.
    pub fn mean_logprob_grad(&self, batch: &Tensor<S>) -> Result<(S, Vec<S>)> {
        let (m, _) = batch.dims2()?;
        if m == 0 {
            return Err(Error::EmptyBatch("flow_mle_step"));
        }
        let (z, logdet_inv, caches) = self.inverse_pass(batch, true)?;
        let logq = standard_normal_logprob(&z).add(&logdet_inv)?;
        let mean_logq = logq.data().iter().copied().sum::<S>() / S::from_usize(m).unwrap();

        let w = S::one() / S::from_usize(m).unwrap();
        let mut grad = vec![S::zero(); self.param_len()];

        // Per-layer flat offsets (scale block, then shift block).
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_len();
        }

        // Backprop through the inverse computation: seed at z, walk the
        // applied inverse steps in reverse (layer 0 back to layer L−1).
        let mut dh = z.scale(-w);
        for (k, cache) in caches.iter().enumerate().rev() {
            let layer_idx = self.layers.len() - 1 - k;
            let layer = &self.layers[layer_idx];
            let mask = layer.mask();
            let c = S::of(layer.scale_clamp());
            let n_unmasked = mask.iter().filter(|&&m| !m).count();
            let n = dh.shape()[0];

            let mut du = vec![S::zero(); n * n_unmasked];
            let mut dt = vec![S::zero(); n * n_unmasked];
            let mut dnext = vec![S::zero(); n * self.dim];
            for i in 0..n {
                let mut j = 0;
                for (kc, &mk) in mask.iter().enumerate() {
                    let dprev = dh.get2(i, kc);
                    if mk {
                        dnext[i * self.dim + kc] = dprev;
                    } else {
                        let s = cache.s.get2(i, j);
                        let e = (-s).exp();
                        let hout = cache.out.get2(i, kc);
                        let ds = -hout * dprev - w;
                        du[i * n_unmasked + j] = ds * (S::one() - (s / c) * (s / c));
                        dt[i * n_unmasked + j] = -e * dprev;
                        dnext[i * self.dim + kc] = e * dprev;
                        j += 1;
                    }
                }
            }
            let du = Tensor::from_parts(vec![n, n_unmasked], du);
            let dt = Tensor::from_parts(vec![n, n_unmasked], dt);
            let (gm_s, gp_s) = layer.scale_net().backward(&cache.masked, &du)?;
            let (gm_t, gp_t) = layer.shift_net().backward(&cache.masked, &dt)?;
            for i in 0..n {
                let mut j = 0;
                for (kc, &mk) in mask.iter().enumerate() {
                    if mk {
                        dnext[i * self.dim + kc] += gm_s.get2(i, j) + gm_t.get2(i, j);
                        j += 1;
                    }
                }
            }
            let base = offsets[layer_idx];
            for (g, v) in grad[base..base + gp_s.len()].iter_mut().zip(&gp_s) {
                *g += *v;
            }
            let tbase = base + gp_s.len();
            for (g, v) in grad[tbase..tbase + gp_t.len()].iter_mut().zip(&gp_t) {
                *g += *v;
            }
            dh = Tensor::from_parts(vec![n, self.dim], dnext);
        }
        // dh now holds d mean_logq / dx; the batch is treated as constants.
        Ok((mean_logq, grad))
    }

    /// One Adam ascent step on the batch-mean log-likelihood. Returns the
    /// mean log-likelihood evaluated before the update.
    pub fn mle_step(&mut self, batch: &Tensor<S>, opt: &mut AdamState<S>) -> Result<S> {
        let (mean_logq, grad) = self.mean_logprob_grad(batch)?;
        let mut params = self.params();
        let neg: Vec<S> = grad.iter().map(|&g| -g).collect();
        opt.step(&mut params, &neg)?;
        self.set_params(&params)?;
        Ok(mean_logq)
    }

    /// Forward map together with the input-side vector-Jacobian product:
    /// given `upstream = dL/dx`, returns `(x, dL/dz)`. Parameters are
    /// treated as constants.
    pub fn forward_input_vjp(
        &self,
        z: &Tensor<S>,
        upstream: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_width(z, "flow_forward_vjp")?;
        let n = z.shape()[0];
        // Forward, caching per layer: (input h, masked, s).
        let mut h = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let masked = layer.gather_masked(&h);
            let (s, t) = layer.scale_shift(&masked)?;
            let mask = layer.mask();
            let mut out = Vec::with_capacity(n * self.dim);
            for (i, row) in h.rows().enumerate() {
                let mut j = 0;
                for (v, &mk) in row.iter().zip(mask) {
                    if mk {
                        out.push(*v);
                    } else {
                        out.push(*v * s.get2(i, j).exp() + t.get2(i, j));
                        j += 1;
                    }
                }
            }
            let next = Tensor::from_parts(vec![n, self.dim], out);
            caches.push((h, masked, s));
            h = next;
        }
        let x = h;

        let mut dh = upstream.clone();
        for (layer, (input, masked, s)) in self.layers.iter().zip(&caches).rev() {
            let mask = layer.mask();
            let c = S::of(layer.scale_clamp());
            let n_unmasked = mask.iter().filter(|&&m| !m).count();
            let mut du = vec![S::zero(); n * n_unmasked];
            let mut dt = vec![S::zero(); n * n_unmasked];
            let mut dprev = vec![S::zero(); n * self.dim];
            for i in 0..n {
                let mut j = 0;
                for (kc, &mk) in mask.iter().enumerate() {
                    let up = dh.get2(i, kc);
                    if mk {
                        dprev[i * self.dim + kc] = up;
                    } else {
                        let sv = s.get2(i, j);
                        let e = sv.exp();
                        let hin = input.get2(i, kc);
                        du[i * n_unmasked + j] = up * hin * e * (S::one() - (sv / c) * (sv / c));
                        dt[i * n_unmasked + j] = up;
                        dprev[i * self.dim + kc] = up * e;
                        j += 1;
                    }
                }
            }
            let du = Tensor::from_parts(vec![n, n_unmasked], du);
            let dt = Tensor::from_parts(vec![n, n_unmasked], dt);
            let gm_s = layer.scale_net().backward(masked, &du)?.0;
            let gm_t = layer.shift_net().backward(masked, &dt)?.0;
            for i in 0..n {
                let mut j = 0;
                for (kc, &mk) in mask.iter().enumerate() {
                    if mk {
                        dprev[i * self.dim + kc] += gm_s.get2(i, j) + gm_t.get2(i, j);
                        j += 1;
                    }
                }
            }
            dh = Tensor::from_parts(vec![n, self.dim], dprev);
        }
        Ok((x, dh))
    }
}
