//! Small multilayer perceptrons with exact reverse-mode gradients.
//!
//! These nets house both the EBM's scalar-valued energy head and the
//! per-coupling-layer subnets of the normalizing flow. Hidden layers use
//! swish or tanh; the output layer is linear. Gradients with respect to
//! inputs and parameters are computed by hand-rolled backpropagation, with
//! a Pearlmutter forward-over-reverse pass supplying exact Hessian-vector
//! products for scalar-output nets (needed to backpropagate through
//! unrolled Langevin steps).
//!
//! Parameter flattening order is fixed: layers in order, each layer's
//! weight matrix row-major (`[out × in]`) followed by its bias vector.
//! Initialization draws weights layer by layer in that same order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per work unit; fixed so results do not depend on thread count.
const ROW_CHUNK: usize = 100;

/// Four-accumulator dot product; breaks the FMA latency chain.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n4 = a.len() & !3;
    let mut acc = [S::zero(); 4];
    for (x, y) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = S::zero();
    for (x, y) in a[n4..].iter().zip(&b[n4..]) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += c·x, elementwise.
#[inline]
fn axpy<S: Scalar>(y: &mut [S], c: S, x: &[S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * *xi;
    }
}

/// Four-accumulator sum.
#[inline]
fn sum<S: Scalar>(a: &[S]) -> S {
    let n4 = a.len() & !3;
    let mut acc = [S::zero(); 4];
    for x in a[..n4].chunks_exact(4) {
        acc[0] += x[0];
        acc[1] += x[1];
        acc[2] += x[2];
        acc[3] += x[3];
    }
    let mut tail = S::zero();
    for x in &a[n4..] {
        tail += *x;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// x·sigmoid(x); smooth everywhere, used for energy nets.
    Swish,
    /// Bounded, used for coupling subnets.
    Tanh,
}

impl Activation {
    /// Returns (activation value, cached sigmoid-or-value for derivatives).
    ///
    /// For swish the cache is σ(z); the first derivative is then
    /// σ + a(1−σ) without re-evaluating exp. For tanh the cache is the
    /// value itself.
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> (S, S) {
        match self {
            Activation::Swish => {
                let sig = S::one() / (S::one() + (-z).exp());
                (z * sig, sig)
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, t)
            }
        }
    }

    /// First derivative from (value, cache).
    #[inline]
    fn deriv<S: Scalar>(self, a: S, cache: S) -> S {
        match self {
            Activation::Swish => cache + a * (S::one() - cache),
            Activation::Tanh => S::one() - cache * cache,
        }
    }

    /// Second derivative from (value, cache).
    #[inline]
    fn second_deriv<S: Scalar>(self, a: S, cache: S) -> S {
        match self {
            Activation::Swish => {
                // z = a/σ; σ'' chain gives σ'(2 + z(1−2σ)).
                let sig = cache;
                if sig == S::zero() {
                    return S::zero(); // saturated far-negative tail
                }
                let z = a / sig;
                let sigp = sig * (S::one() - sig);
                sigp * (S::of(2.0) + z * (S::one() - S::of(2.0) * sig))
            }
            Activation::Tanh => -S::of(2.0) * cache * (S::one() - cache * cache),
        }
    }
}

/// Fully-connected network: linear layers with a hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<S: Scalar = f64> {
    layer_sizes: Vec<usize>,
    /// weights[l] is `[layer_sizes[l+1] × layer_sizes[l]]`, row-major.
    weights: Vec<Vec<S>>,
    /// biases[l] has length `layer_sizes[l+1]`.
    biases: Vec<Vec<S>>,
    activation: Activation,
}

impl<S: Scalar> MlpNet<S> {
    /// Random init: weights ~ N(0, 1/fan_in), biases zero.
    pub fn new(layer_sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let std = S::of((1.0 / fan_in as f64).sqrt());
            let draws = gaussian_sample::<S>(rng, fan_out, fan_in);
            weights.push(draws.data().iter().map(|&g| g * std).collect());
            biases.push(vec![S::zero(); fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// All-zero parameters (the identity-free "zero network").
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| vec![S::zero(); layer_sizes[l + 1] * layer_sizes[l]])
            .collect();
        let biases = (0..layer_sizes.len() - 1)
            .map(|l| vec![S::zero(); layer_sizes[l + 1]])
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!(
                "layer sizes must list at least [d_in, d_out] with no zeros, got {layer_sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn d_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn d_out(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_len(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Flat parameter vector in the documented order.
    pub fn params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.len();
            w.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = b.len();
            b.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<S>, op: &'static str) -> Result<(usize, usize)> {
        let (n, d) = x.dims2()?;
        if d != self.d_in() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![n, d],
                rhs: vec![n, self.d_in()],
            });
        }
        x.ensure_finite(op)?;
        Ok((n, d))
    }

    /// Chunk-blocked forward pass over `r` rows. Activations are stored
    /// unit-major (`a[l][o*r + row]`) so the inner loops vectorize over
    /// the batch dimension; `c[l]` caches the hidden derivative helper.
    fn chunk_forward(&self, x_rows: &[S], r: usize, a: &mut [Vec<S>], c: &mut [Vec<S>]) {
        let d_in = self.d_in();
        a[0].clear();
        a[0].resize(d_in * r, S::zero());
        for (row, x_row) in x_rows.chunks_exact(d_in).enumerate() {
            for (i, &v) in x_row.iter().enumerate() {
                a[0][i * r + row] = v;
            }
        }
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let w_in = self.layer_sizes[l];
            let w_out = self.layer_sizes[l + 1];
            let (prev, rest) = a.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            out.resize(w_out * r, S::zero());
            for o in 0..w_out {
                let z = &mut out[o * r..(o + 1) * r];
                z.fill(b[o]);
                for i in 0..w_in {
                    axpy(z, w[o * w_in + i], &input[i * r..(i + 1) * r]);
                }
            }
            if l < last {
                let cache = &mut c[l];
                cache.clear();
                cache.resize(w_out * r, S::zero());
                for (zv, cv) in out.iter_mut().zip(cache.iter_mut()) {
                    let (av, cc) = self.activation.apply(*zv);
                    *zv = av;
                    *cv = cc;
                }
            }
        }
    }

    /// Chunk-blocked reverse pass. `delta` enters unit-major on the output
    /// layer (`delta[o*r + row]`) and is consumed. Writes per-row input
    /// gradients (row-major) into `grad_x_rows`; accumulates flat parameter
    /// gradients when requested.
    #[allow(clippy::too_many_arguments)]
    fn chunk_backward(
        &self,
        r: usize,
        a: &[Vec<S>],
        c: &[Vec<S>],
        delta: &mut Vec<S>,
        scratch: &mut Vec<S>,
        grad_x_rows: &mut [S],
        mut grad_params: Option<&mut [S]>,
    ) {
        let num_layers = self.weights.len();
        let mut offsets = Vec::with_capacity(num_layers);
        let mut off = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(off);
            off += w.len() + b.len();
        }
        for l in (0..num_layers).rev() {
            let w_in = self.layer_sizes[l];
            let w_out = self.layer_sizes[l + 1];
            let w = &self.weights[l];
            if let Some(gp) = grad_params.as_deref_mut() {
                let base = offsets[l];
                let input = &a[l];
                for o in 0..w_out {
                    let drow = &delta[o * r..(o + 1) * r];
                    for i in 0..w_in {
                        gp[base + o * w_in + i] += dot(drow, &input[i * r..(i + 1) * r]);
                    }
                    gp[base + w_out * w_in + o] += sum(drow);
                }
            }
            // g = W^T delta, unit-major over the chunk.
            scratch.clear();
            scratch.resize(w_in * r, S::zero());
            for o in 0..w_out {
                let drow = &delta[o * r..(o + 1) * r];
                for i in 0..w_in {
                    axpy(&mut scratch[i * r..(i + 1) * r], w[o * w_in + i], drow);
                }
            }
            if l > 0 {
                std::mem::swap(delta, scratch);
                for ((dv, &av), &cv) in delta.iter_mut().zip(&a[l]).zip(&c[l - 1]) {
                    *dv = *dv * self.activation.deriv(av, cv);
                }
            } else {
                for row in 0..r {
                    for i in 0..w_in {
                        grad_x_rows[row * w_in + i] = scratch[i * r + row];
                    }
                }
            }
        }
    }

    fn scratch(&self) -> (Vec<Vec<S>>, Vec<Vec<S>>) {
        let a: Vec<Vec<S>> = self.layer_sizes.iter().map(|_| Vec::new()).collect();
        let c: Vec<Vec<S>> = self.layer_sizes[1..self.layer_sizes.len() - 1]
            .iter()
            .map(|_| Vec::new())
            .collect();
        (a, c)
    }

    /// Batched forward pass; pure function of (net, x).
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, _) = self.check_input(x, "mlp_forward")?;
        let d_out = self.d_out();
        let mut out = vec![S::zero(); n * d_out];
        let d_in = self.d_in();
        x.data()
            .par_chunks(ROW_CHUNK * d_in.max(1))
            .zip(out.par_chunks_mut(ROW_CHUNK * d_out))
            .for_each(|(xin, xout)| {
                let r = xin.len() / d_in;
                let (mut a, mut c) = self.scratch();
                self.chunk_forward(xin, r, &mut a, &mut c);
                let top = a.last().unwrap();
                for (row, orow) in xout.chunks_exact_mut(d_out).enumerate() {
                    for (o, ov) in orow.iter_mut().enumerate() {
                        *ov = top[o * r + row];
                    }
                }
            });
        Ok(Tensor::from_parts(vec![n, d_out], out))
    }

    /// Exact reverse-mode gradients of `Σ_n ⟨upstream_n, output_n⟩` with
    /// respect to the inputs (per row) and the parameters (summed over the
    /// batch, flat layout).
    pub fn backward(&self, x: &Tensor<S>, upstream: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
        let (n, d_in) = self.check_input(x, "mlp_backward")?;
        let (nu, du) = upstream.dims2()?;
        if nu != n || du != self.d_out() {
            return Err(Error::ShapeMismatch {
                op: "mlp_backward",
                lhs: vec![nu, du],
                rhs: vec![n, self.d_out()],
            });
        }
        upstream.ensure_finite("mlp_backward")?;

        let d_out = self.d_out();
        let plen = self.param_len();
        let mut grad_x = vec![S::zero(); n * d_in];

        // Per-chunk parameter partials are combined in chunk order so the
        // result is independent of how rayon schedules the chunks.
        let partials: Vec<Vec<S>> = x
            .data()
            .par_chunks(ROW_CHUNK * d_in)
            .zip(upstream.data().par_chunks(ROW_CHUNK * d_out))
            .zip(grad_x.par_chunks_mut(ROW_CHUNK * d_in))
            .map(|((xin, ups), gx)| {
                let r = xin.len() / d_in;
                let (mut a, mut c) = self.scratch();
                self.chunk_forward(xin, r, &mut a, &mut c);
                let mut gp = vec![S::zero(); plen];
                let mut delta = vec![S::zero(); d_out * r];
                for (row, urow) in ups.chunks_exact(d_out).enumerate() {
                    for (o, &uv) in urow.iter().enumerate() {
                        delta[o * r + row] = uv;
                    }
                }
                let mut scratch = Vec::new();
                self.chunk_backward(r, &a, &c, &mut delta, &mut scratch, gx, Some(&mut gp));
                gp
            })
            .collect();

        let mut grad_params = vec![S::zero(); plen];
        for part in &partials {
            for (g, p) in grad_params.iter_mut().zip(part.iter()) {
                *g += *p;
            }
        }
        Ok((Tensor::from_parts(vec![n, d_in], grad_x), grad_params))
    }

    /// Fused value + input gradient for scalar-output nets with upstream 1;
    /// the Langevin hot path. Returns (values `[n]`, gradients `[n, d]`).
    pub fn scalar_value_and_grad(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        if self.d_out() != 1 {
            return Err(Error::invalid("scalar_value_and_grad requires d_out == 1"));
        }
        let (n, d_in) = self.check_input(x, "scalar_value_and_grad")?;
        let mut values = vec![S::zero(); n];
        let mut grads = vec![S::zero(); n * d_in];
        x.data()
            .par_chunks(ROW_CHUNK * d_in)
            .zip(values.par_chunks_mut(ROW_CHUNK))
            .zip(grads.par_chunks_mut(ROW_CHUNK * d_in))
            .for_each(|((xin, vals), gx)| {
                let r = xin.len() / d_in;
                let (mut a, mut c) = self.scratch();
                self.chunk_forward(xin, r, &mut a, &mut c);
                vals.copy_from_slice(&a.last().unwrap()[..r]);
                let mut delta = vec![S::one(); r];
                let mut scratch = Vec::new();
                self.chunk_backward(r, &a, &c, &mut delta, &mut scratch, gx, None);
            });
        Ok((
            Tensor::from_parts(vec![n], values),
            Tensor::from_parts(vec![n, d_in], grads),
        ))
    }

    /// Hessian-vector product `H(x_i)·v_i` of a scalar-output net, row by
    /// row, via Pearlmutter's forward-over-reverse recursion. Exact; used
    /// to backpropagate through unrolled noise-free Langevin steps.
    pub fn hvp_scalar(&self, x: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
        if self.d_out() != 1 {
            return Err(Error::invalid("hvp_scalar requires d_out == 1"));
        }
        let (n, d_in) = self.check_input(x, "hvp_scalar")?;
        let (nv, dv) = v.dims2()?;
        if nv != n || dv != d_in {
            return Err(Error::ShapeMismatch {
                op: "hvp_scalar",
                lhs: vec![nv, dv],
                rhs: vec![n, d_in],
            });
        }
        let num_layers = self.weights.len();
        let mut out = vec![S::zero(); n * d_in];
        x.data()
            .par_chunks(ROW_CHUNK * d_in)
            .zip(v.data().par_chunks(ROW_CHUNK * d_in))
            .zip(out.par_chunks_mut(ROW_CHUNK * d_in))
            .for_each(|((xin, vin), hout)| {
                // Per-layer activations a, their tangents ȧ, derivative
                // caches, and pre-activation tangents ż.
                let mut a: Vec<Vec<f64>> = vec![Vec::new(); num_layers + 1];
                let mut at: Vec<Vec<f64>> = vec![Vec::new(); num_layers + 1];
                let mut cach: Vec<Vec<f64>> = vec![Vec::new(); num_layers];
                let mut pre_t: Vec<Vec<f64>> = vec![Vec::new(); num_layers];
                for ((row, vrow), hrow) in xin
                    .chunks_exact(d_in)
                    .zip(vin.chunks_exact(d_in))
                    .zip(hout.chunks_exact_mut(d_in))
                {
                    a[0] = row.iter().map(|s| s.to_f64_lossy()).collect();
                    at[0] = vrow.iter().map(|s| s.to_f64_lossy()).collect();
                    for l in 0..num_layers {
                        let d_l = self.layer_sizes[l];
                        let d_o = self.layer_sizes[l + 1];
                        let mut z = vec![0.0; d_o];
                        let mut zt = vec![0.0; d_o];
                        for o in 0..d_o {
                            let wrow = &self.weights[l][o * d_l..(o + 1) * d_l];
                            let mut s = self.biases[l][o].to_f64_lossy();
                            let mut st = 0.0;
                            for i in 0..d_l {
                                let w = wrow[i].to_f64_lossy();
                                s += w * a[l][i];
                                st += w * at[l][i];
                            }
                            z[o] = s;
                            zt[o] = st;
                        }
                        if l < num_layers - 1 {
                            let mut av = vec![0.0; d_o];
                            let mut avt = vec![0.0; d_o];
                            let mut cv = vec![0.0; d_o];
                            for o in 0..d_o {
                                let (val, c) = self.activation.apply(z[o]);
                                av[o] = val;
                                avt[o] = self.activation.deriv(val, c) * zt[o];
                                cv[o] = c;
                            }
                            a[l + 1] = av;
                            at[l + 1] = avt;
                            cach[l] = cv;
                        } else {
                            a[l + 1] = z;
                            at[l + 1] = zt.clone();
                        }
                        pre_t[l] = zt;
                    }
                    // Reverse pass carrying (δ, δ̇) on pre-activations.
                    let mut delta = vec![1.0];
                    let mut delta_t = vec![0.0];
                    for l in (0..num_layers).rev() {
                        let d_l = self.layer_sizes[l];
                        let d_o = self.layer_sizes[l + 1];
                        let mut g = vec![0.0; d_l];
                        let mut gt = vec![0.0; d_l];
                        for o in 0..d_o {
                            let wrow = &self.weights[l][o * d_l..(o + 1) * d_l];
                            for i in 0..d_l {
                                let w = wrow[i].to_f64_lossy();
                                g[i] += w * delta[o];
                                gt[i] += w * delta_t[o];
                            }
                        }
                        if l > 0 {
                            let d_prev = self.layer_sizes[l];
                            let mut nd = vec![0.0; d_prev];
                            let mut ndt = vec![0.0; d_prev];
                            for i in 0..d_prev {
                                let val = a[l][i];
                                let c = cach[l - 1][i];
                                let d1 = self.activation.deriv(val, c);
                                let d2 = self.activation.second_deriv(val, c);
                                let zdot = pre_t[l - 1][i];
                                nd[i] = d1 * g[i];
                                ndt[i] = d2 * zdot * g[i] + d1 * gt[i];
                            }
                            delta = nd;
                            delta_t = ndt;
                        } else {
                            for (h, &gti) in hrow.iter_mut().zip(gt.iter()) {
                                *h = S::of(gti);
                            }
                        }
                    }
                }
            });
        Ok(Tensor::from_parts(vec![n, d_in], out))
    }
}

/// Central-difference gradient `(f(x+h·e_i) − f(x−h·e_i)) / 2h` per
/// coordinate: the independent oracle for gradient checks.
pub fn finite_diff_grad<S: Scalar>(
    f: impl Fn(&Tensor<S>) -> S,
    x: &Tensor<S>,
    h: f64,
) -> Tensor<S> {
    assert!(h > 0.0, "finite_diff_grad requires h > 0");
    let hs = S::of(h);
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + hs;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - hs;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((fp - fm) / (S::of(2.0) * hs));
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_head(net: &MlpNet, x: &Tensor) -> f64 {
        net.forward(x).unwrap().data()[0]
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let net = MlpNet::<f64>::zeros(&[2, 4, 3], Activation::Swish).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_matches_hand_value() {
        let mut net = MlpNet::<f64>::zeros(&[2, 2], Activation::Swish).unwrap();
        net.set_params(&[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let y = net.forward(&Tensor::from_point(&[1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = MlpNet::<f64>::zeros(&[2, 4, 1], Activation::Swish).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::from_seed(3);
        let net = MlpNet::<f64>::new(&[2, 8, 1], Activation::Swish, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 4, 2);
        let up = Tensor::zeros(vec![4, 1]);
        let (gx, gp) = net.backward(&x, &up).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            for act in [Activation::Swish, Activation::Tanh] {
                let mut rng = Rng::from_seed(seed);
                let net = MlpNet::<f64>::new(&[2, 16, 16, 1], act, &mut rng).unwrap();
                let x = gaussian_sample(&mut rng, 1, 2);
                let up = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
                let (gx, _) = net.backward(&x, &up).unwrap();
                let fd = finite_diff_grad(|p| scalar_head(&net, p), &x, 1e-5);
                for (a, b) in gx.data().iter().zip(fd.data()) {
                    let rel = (a - b).abs() / b.abs().max(1e-8);
                    assert!(rel < 1e-6, "rel error {rel}");
                }
            }
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let mut rng = Rng::from_seed(11);
        let net = MlpNet::<f64>::new(&[2, 8, 8, 1], Activation::Swish, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 3, 2);
        let up = Tensor::new(vec![3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let (_, gp) = net.backward(&x, &up).unwrap();
        let params = net.params();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut probe = net.clone();
            let mut p = params.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let fp: f64 = probe.forward(&x).unwrap().data().iter().sum();
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let fm: f64 = probe.forward(&x).unwrap().data().iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (gp[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "param {i}: got {} want {} rel {rel}", gp[i], fd);
        }
    }

    #[test]
    fn batch_additivity() {
        let mut rng = Rng::from_seed(21);
        let net = MlpNet::<f64>::new(&[2, 8, 2], Activation::Tanh, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 6, 2);
        let up = gaussian_sample(&mut rng, 6, 2);
        let (_, gp_batch) = net.backward(&x, &up).unwrap();
        let mut gp_sum = vec![0.0; net.param_len()];
        for i in 0..6 {
            let xi = Tensor::from_point(x.row(i)).unwrap();
            let ui = Tensor::from_point(up.row(i)).unwrap();
            let (_, gpi) = net.backward(&xi, &ui).unwrap();
            for (s, g) in gp_sum.iter_mut().zip(gpi) {
                *s += g;
            }
        }
        for (a, b) in gp_batch.iter().zip(gp_sum) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_value_and_grad_agrees_with_backward() {
        let mut rng = Rng::from_seed(8);
        let net = MlpNet::<f64>::new(&[2, 16, 1], Activation::Swish, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 130, 2);
        let (vals, grads) = net.scalar_value_and_grad(&x).unwrap();
        let fwd = net.forward(&x).unwrap();
        let up = Tensor::new(vec![130, 1], vec![1.0; 130]).unwrap();
        let (gx, _) = net.backward(&x, &up).unwrap();
        assert_eq!(vals.data(), fwd.data());
        assert_eq!(grads.data(), gx.data());
    }

    #[test]
    fn hvp_matches_finite_difference_of_gradient() {
        let mut rng = Rng::from_seed(17);
        let net = MlpNet::<f64>::new(&[2, 8, 8, 1], Activation::Swish, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 3, 2);
        let v = gaussian_sample(&mut rng, 3, 2);
        let hv = net.hvp_scalar(&x, &v).unwrap();
        let h = 1e-5;
        let xp = x.add(&v.scale(h)).unwrap();
        let xm = x.sub(&v.scale(h)).unwrap();
        let (_, gp) = net.scalar_value_and_grad(&xp).unwrap();
        let (_, gm) = net.scalar_value_and_grad(&xm).unwrap();
        for i in 0..hv.len() {
            let fd = (gp.data()[i] - gm.data()[i]) / (2.0 * h);
            assert!(
                (hv.data()[i] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "hvp {} vs fd {}",
                hv.data()[i],
                fd
            );
        }
    }

    #[test]
    fn finite_diff_on_linear_and_quadratic() {
        let c = [2.5, -1.25];
        let f = |x: &Tensor| c[0] * x.data()[0] + c[1] * x.data()[1];
        let x = Tensor::from_point(&[0.3, 0.7]).unwrap();
        let g = finite_diff_grad(f, &x, 1e-5);
        assert!((g.data()[0] - c[0]).abs() < 1e-9);
        assert!((g.data()[1] - c[1]).abs() < 1e-9);

        let q = |x: &Tensor| 0.5 * x.data().iter().map(|v| v * v).sum::<f64>();
        let x = Tensor::from_point(&[3.0, 4.0]).unwrap();
        let g = finite_diff_grad(q, &x, 1e-5);
        assert!((g.data()[0] - 3.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn params_roundtrip_in_documented_order() {
        let mut rng = Rng::from_seed(2);
        let mut net = MlpNet::<f64>::new(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), 2 * 3 + 3 + 3 + 1);
        let mut q = p.clone();
        q[0] = 42.0;
        net.set_params(&q).unwrap();
        assert_eq!(net.params(), q);
        // First flat entry is W_0[0,0] (layer 0, row-major).
        assert_eq!(net.weights[0][0], 42.0);
    }
}
