//! Energy-based model: a scalar-output net as the negative energy,
//! optionally exponentially tilting a standard-Gaussian reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpNet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reference distribution of the unnormalized density.
///
/// With `StandardGaussian`, the log unnormalized density is
/// `f(x) − ‖x‖²/2`; the reference contributes nothing to parameter
/// gradients (it is parameter-free). A zero net with the Gaussian
/// reference is the analytic quadratic-energy test hook used throughout
/// the test suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    None,
    StandardGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmModel<S: Scalar = f64> {
    net: MlpNet<S>,
    reference: Reference,
}

impl<S: Scalar> EbmModel<S> {
    pub fn new(net: MlpNet<S>, reference: Reference) -> Result<Self> {
        if net.d_out() != 1 {
            return Err(Error::invalid(format!(
                "energy net must have scalar output, got d_out = {}",
                net.d_out()
            )));
        }
        Ok(Self { net, reference })
    }

    pub fn net(&self) -> &MlpNet<S> {
        &self.net
    }

    pub fn reference(&self) -> Reference {
        self.reference
    }

    pub fn dim(&self) -> usize {
        self.net.d_in()
    }

    pub fn param_len(&self) -> usize {
        self.net.param_len()
    }

    pub fn params(&self) -> Vec<S> {
        self.net.params()
    }

    pub fn set_params(&mut self, flat: &[S]) -> Result<()> {
        self.net.set_params(flat)
    }

    /// Log unnormalized density per row: `f(x)` or `f(x) − ‖x‖²/2`.
    pub fn energy(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = self.net.forward(x)?;
        let n = x.shape()[0];
        let mut vals = Vec::with_capacity(n);
        for (i, row) in x.rows().enumerate() {
            let mut v = out.get2(i, 0);
            if self.reference == Reference::StandardGaussian {
                let sq: S = row.iter().map(|&c| c * c).sum();
                v = v - sq * S::of(0.5);
            }
            vals.push(v);
        }
        let t = Tensor::from_parts(vec![n], vals);
        t.ensure_finite("energy")?;
        Ok(t)
    }

    /// Fused energy value and input gradient, the Langevin hot path.
    pub fn value_and_grad(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (mut vals, mut grads) = self.net.scalar_value_and_grad(x)?;
        if self.reference == Reference::StandardGaussian {
            let d = x.shape()[1];
            let vdata = vals.data_mut();
            for (i, row) in x.rows().enumerate() {
                let sq: S = row.iter().map(|&c| c * c).sum();
                vdata[i] = vdata[i] - sq * S::of(0.5);
            }
            let gdata = grads.data_mut();
            for (g, xv) in gdata.iter_mut().zip(x.data()) {
                *g = *g - *xv;
            }
            let _ = d;
        }
        Ok((vals, grads))
    }

    /// Hessian-vector product of the energy (net Hessian, plus −v from the
    /// Gaussian reference when present).
    pub fn hvp(&self, x: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
        let mut hv = self.net.hvp_scalar(x, v)?;
        if self.reference == Reference::StandardGaussian {
            let data = hv.data_mut();
            for (h, vv) in data.iter_mut().zip(v.data()) {
                *h = *h - *vv;
            }
        }
        Ok(hv)
    }

    /// Mean parameter gradient of the energy over a batch, `(1/n)Σ∇_θf`.
    pub fn mean_param_grad(&self, batch: &Tensor<S>) -> Result<Vec<S>> {
        let (n, _) = batch.dims2()?;
        if n == 0 {
            return Err(Error::EmptyBatch("mean_param_grad"));
        }
        let ones = Tensor::from_parts(vec![n, 1], vec![S::one(); n]);
        let (_, gp) = self.net.backward(batch, &ones)?;
        let inv = S::one() / S::from_usize(n).unwrap();
        Ok(gp.into_iter().map(|g| g * inv).collect())
    }
}

/// Ascent direction on the EBM log-likelihood:
/// `(1/n)Σ∇_θf(x_i) − (1/m)Σ∇_θf(x̃_i)`. The reference term of the
/// tilted density contributes nothing (it is θ-free).
pub fn ebm_grad<S: Scalar>(
    ebm: &EbmModel<S>,
    data_batch: &Tensor<S>,
    synth_batch: &Tensor<S>,
) -> Result<Vec<S>> {
    let gd = ebm.mean_param_grad(data_batch)?;
    let gs = ebm.mean_param_grad(synth_batch)?;
    Ok(gd.into_iter().zip(gs).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::{gaussian_sample, Rng};

    fn zero_ebm(reference: Reference) -> EbmModel {
        EbmModel::new(
            MlpNet::zeros(&[2, 4, 1], Activation::Swish).unwrap(),
            reference,
        )
        .unwrap()
    }

    #[test]
    fn zero_net_energies() {
        let ebm = zero_ebm(Reference::None);
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![-3.0, 2.0]]).unwrap();
        assert!(ebm.energy(&x).unwrap().data().iter().all(|&v| v == 0.0));

        let ebm = zero_ebm(Reference::StandardGaussian);
        let e = ebm.energy(&x).unwrap();
        assert_eq!(e.data()[0], -1.0);
        assert_eq!(e.data()[1], -6.5);
    }

    #[test]
    fn energy_matches_forward_plus_reference() {
        let mut rng = Rng::from_seed(9);
        let net = MlpNet::<f64>::new(&[2, 8, 1], Activation::Swish, &mut rng).unwrap();
        let ebm = EbmModel::new(net.clone(), Reference::StandardGaussian).unwrap();
        let x = gaussian_sample(&mut rng, 5, 2);
        let e = ebm.energy(&x).unwrap();
        let f = net.forward(&x).unwrap();
        for i in 0..5 {
            let sq: f64 = x.row(i).iter().map(|v| v * v).sum();
            assert!((e.data()[i] - (f.get2(i, 0) - 0.5 * sq)).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_output_required() {
        let net = MlpNet::<f64>::zeros(&[2, 4, 2], Activation::Swish).unwrap();
        assert!(EbmModel::new(net, Reference::None).is_err());
    }

    #[test]
    fn grad_includes_reference_term() {
        let ebm = zero_ebm(Reference::StandardGaussian);
        let x = Tensor::from_point(&[1.5, -2.0]).unwrap();
        let (_, g) = ebm.value_and_grad(&x).unwrap();
        assert_eq!(g.data(), &[-1.5, 2.0]);
    }

    #[test]
    fn ebm_grad_cancels_on_identical_batches() {
        let mut rng = Rng::from_seed(13);
        let net = MlpNet::<f64>::new(&[2, 8, 1], Activation::Swish, &mut rng).unwrap();
        let ebm = EbmModel::new(net, Reference::None).unwrap();
        let batch = gaussian_sample(&mut rng, 7, 2);
        let g = ebm_grad(&ebm, &batch, &batch).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_energy_gradient_is_mean_difference() {
        // f(x) = <w, x> (single linear layer, zero bias): the gradient w.r.t.
        // the weights is mean(data) − mean(synth); bias gradient cancels.
        let mut net = MlpNet::<f64>::zeros(&[2, 1], Activation::Swish).unwrap();
        net.set_params(&[0.3, -0.7, 0.0]).unwrap();
        let ebm = EbmModel::new(net, Reference::None).unwrap();
        let data = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let synth = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let g = ebm_grad(&ebm, &data, &synth).unwrap();
        assert!((g[0] - (2.0 - 0.5)).abs() < 1e-12);
        assert!((g[1] - (3.0 - 0.5)).abs() < 1e-12);
        assert!(g[2].abs() < 1e-12);
    }

    #[test]
    fn ebm_grad_matches_finite_differences() {
        let mut rng = Rng::from_seed(33);
        let net = MlpNet::new(&[2, 8, 1], Activation::Swish, &mut rng).unwrap();
        let mut ebm = EbmModel::new(net, Reference::StandardGaussian).unwrap();
        let data = gaussian_sample(&mut rng, 4, 2);
        let synth = gaussian_sample(&mut rng, 6, 2);
        let g = ebm_grad(&ebm, &data, &synth).unwrap();
        let params = ebm.params();
        let h = 1e-5;
        let objective = |e: &EbmModel| {
            let fd: f64 = e.energy(&data).unwrap().data().iter().sum::<f64>() / 4.0;
            let fs: f64 = e.energy(&synth).unwrap().data().iter().sum::<f64>() / 6.0;
            fd - fs
        };
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            ebm.set_params(&p).unwrap();
            let fp = objective(&ebm);
            p[i] -= 2.0 * h;
            ebm.set_params(&p).unwrap();
            let fm = objective(&ebm);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "param {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let ebm = zero_ebm(Reference::None);
        let data = Tensor::zeros(vec![0, 2]);
        let synth = Tensor::zeros(vec![1, 2]);
        assert!(ebm_grad(&ebm, &data, &synth).is_err());
        assert!(ebm_grad(&ebm, &synth, &data).is_err());
    }
}
