//! Affine coupling layers.
//!
//! A coupling layer passes the masked coordinates through unchanged and
//! applies an invertible affine map to the rest, with scale and shift
//! produced by small subnets of the masked coordinates:
//!
//! forward:  `h'_j = h_j · exp(s_j) + t_j`,  log-det `= Σ_j s_j`
//! inverse:  `h_j  = (h'_j − t_j) · exp(−s_j)`
//!
//! The raw scale output is squashed through `c·tanh(u/c)` so `|s| ≤ c`,
//! which keeps `exp(s)` bounded during early cooperative training.

use crate::error::{Error, Result};
use crate::nn::MlpNet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer<S: Scalar = f64> {
    /// true = pass-through coordinate (input to the subnets).
    mask: Vec<bool>,
    scale_net: MlpNet<S>,
    shift_net: MlpNet<S>,
    scale_clamp: f64,
}

/// Intermediates of one inverse application, kept for backpropagation.
pub(crate) struct CouplingCache<S: Scalar> {
    /// Masked (pass-through) coordinates, `[n, n_masked]`.
    pub masked: Tensor<S>,
    /// Clamped scales, `[n, n_unmasked]`.
    pub s: Tensor<S>,
    /// Output of the inverse step, `[n, D]`.
    pub out: Tensor<S>,
}

impl<S: Scalar> CouplingLayer<S> {
    pub fn new(
        mask: Vec<bool>,
        scale_net: MlpNet<S>,
        shift_net: MlpNet<S>,
        scale_clamp: f64,
    ) -> Result<Self> {
        let n_masked = mask.iter().filter(|&&m| m).count();
        let n_unmasked = mask.len() - n_masked;
        if n_masked == 0 || n_unmasked == 0 {
            return Err(Error::invalid(
                "coupling mask needs at least one pass-through and one transformed coordinate",
            ));
        }
        for (name, net) in [("scale", &scale_net), ("shift", &shift_net)] {
            if net.d_in() != n_masked || net.d_out() != n_unmasked {
                return Err(Error::invalid(format!(
                    "{name} net must map {n_masked} -> {n_unmasked}, got {} -> {}",
                    net.d_in(),
                    net.d_out()
                )));
            }
        }
        if !(scale_clamp > 0.0) {
            return Err(Error::invalid("scale_clamp must be positive"));
        }
        Ok(Self {
            mask,
            scale_net,
            shift_net,
            scale_clamp,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn scale_clamp(&self) -> f64 {
        self.scale_clamp
    }

    pub(crate) fn scale_net(&self) -> &MlpNet<S> {
        &self.scale_net
    }

    pub(crate) fn shift_net(&self) -> &MlpNet<S> {
        &self.shift_net
    }

    pub(crate) fn nets_mut(&mut self) -> (&mut MlpNet<S>, &mut MlpNet<S>) {
        (&mut self.scale_net, &mut self.shift_net)
    }

    pub fn param_len(&self) -> usize {
        self.scale_net.param_len() + self.shift_net.param_len()
    }

    fn check(&self, h: &Tensor<S>, op: &'static str) -> Result<usize> {
        let (n, d) = h.dims2()?;
        if d != self.dim() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![n, d],
                rhs: vec![n, self.dim()],
            });
        }
        h.ensure_finite(op)?;
        Ok(n)
    }

    /// Gathers the pass-through coordinates into `[n, n_masked]`.
    pub(crate) fn gather_masked(&self, h: &Tensor<S>) -> Tensor<S> {
        let (n, d) = (h.shape()[0], h.shape()[1]);
        let mut out = Vec::with_capacity(n * (d - self.n_unmasked()));
        for row in h.rows() {
            for (v, &m) in row.iter().zip(&self.mask) {
                if m {
                    out.push(*v);
                }
            }
        }
        Tensor::from_parts(vec![n, d - self.n_unmasked()], out)
    }

    fn n_unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Clamped scale and shift for a batch of masked coordinates.
    pub(crate) fn scale_shift(&self, masked: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let raw = self.scale_net.forward(masked)?;
        let c = S::of(self.scale_clamp);
        let s = raw.map(|u| c * (u / c).tanh());
        let t = self.shift_net.forward(masked)?;
        Ok((s, t))
    }

    /// Forward map; returns the transformed batch and per-row log-det.
    pub fn forward(&self, h: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let n = self.check(h, "coupling_forward")?;
        let masked = self.gather_masked(h);
        let (s, t) = self.scale_shift(&masked)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut logdet = Vec::with_capacity(n);
        for (i, row) in h.rows().enumerate() {
            let mut ld = S::zero();
            let mut j = 0;
            for (v, &m) in row.iter().zip(&self.mask) {
                if m {
                    out.push(*v);
                } else {
                    let sj = s.get2(i, j);
                    out.push(*v * sj.exp() + t.get2(i, j));
                    ld += sj;
                    j += 1;
                }
            }
            logdet.push(ld);
        }
        Ok((
            Tensor::from_parts(vec![n, d], out),
            Tensor::from_parts(vec![n], logdet),
        ))
    }

    /// Exact algebraic inverse of `forward`.
    pub fn inverse(&self, h_prime: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.inverse_with_cache(h_prime)?.out)
    }

    /// Inverse keeping the intermediates needed for backpropagation.
    /// The per-row forward log-det at the corresponding point is `Σ_j s_j`
    /// over the cached `s`.
    pub(crate) fn inverse_with_cache(&self, h_prime: &Tensor<S>) -> Result<CouplingCache<S>> {
        let n = self.check(h_prime, "coupling_inverse")?;
        let masked = self.gather_masked(h_prime);
        let (s, t) = self.scale_shift(&masked)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for (i, row) in h_prime.rows().enumerate() {
            let mut j = 0;
            for (v, &m) in row.iter().zip(&self.mask) {
                if m {
                    out.push(*v);
                } else {
                    out.push((*v - t.get2(i, j)) * (-s.get2(i, j)).exp());
                    j += 1;
                }
            }
        }
        Ok(CouplingCache {
            masked,
            s,
            out: Tensor::from_parts(vec![n, d], out),
        })
    }
}
