//! Adam optimizer state and update rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Moment estimates plus hyperparameters for one parameter vector.
///
/// The update is the standard bias-corrected form:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `p ← p − lr·m̂/(√v̂ + ε)` with `m̂ = m/(1−β1^t)`, `v̂ = v/(1−β2^t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<S: Scalar = f64> {
    pub first_moment: Vec<S>,
    pub second_moment: Vec<S>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param_len: usize, lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::invalid(format!(
                "adam betas must lie in [0, 1), got ({beta1}, {beta2})"
            )));
        }
        Ok(Self {
            first_moment: vec![S::zero(); param_len],
            second_moment: vec![S::zero(); param_len],
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        })
    }

    /// One descent step in place. For ascent, pass the negated gradient.
    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "adam length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let b1 = S::of(self.beta1);
        let b2 = S::of(self.beta2);
        let one = S::one();
        let corr1 = S::of(1.0 - self.beta1.powi(self.step_count as i32));
        let corr2 = S::of(1.0 - self.beta2.powi(self.step_count as i32));
        let lr = S::of(self.lr);
        let eps = S::of(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.first_moment[i] + (one - b1) * g;
            let v = b2 * self.second_moment[i] + (one - b2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / corr1;
            let v_hat = v / corr2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_but_updates_moments() {
        let mut st = AdamState::<f64>::new(3, 0.0, 0.9, 0.999).unwrap();
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut p, &[0.5, -0.5, 0.25]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert!(st.first_moment.iter().any(|&m| m != 0.0));
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_with_zero_betas_is_signed_lr() {
        // Hand evaluation of the recursion at t = 1 with β1 = β2 = 0:
        // m = g, v = g², no correction, update = lr·g/(|g| + ε).
        let lr = 0.1;
        let mut st = AdamState::<f64>::new(2, lr, 0.0, 0.0).unwrap();
        let mut p = vec![1.0, 1.0];
        let g = [0.5, -2.0];
        st.step(&mut p, &g).unwrap();
        for i in 0..2 {
            let expect = 1.0 - lr * g[i] / (g[i].abs() + st.eps);
            assert!((p[i] - expect).abs() < 1e-15, "{} vs {}", p[i], expect);
        }
    }

    #[test]
    fn deterministic_given_identical_state() {
        let mut a = AdamState::<f64>::new(4, 1e-3, 0.9, 0.999).unwrap();
        let mut b = a.clone();
        let mut pa = vec![0.1, 0.2, 0.3, 0.4];
        let mut pb = pa.clone();
        let g = [1.0, -1.0, 0.5, 0.0];
        for _ in 0..10 {
            a.step(&mut pa, &g).unwrap();
            b.step(&mut pb, &g).unwrap();
        }
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_grads_after_warm_start_do_not_move_params() {
        let mut st = AdamState::<f64>::new(2, 0.1, 0.5, 0.5).unwrap();
        let mut p = vec![1.0, -1.0];
        // Warm the step counter with zero grads: moments stay zero, so the
        // update must be exactly zero.
        for _ in 0..5 {
            st.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![1.0, -1.0]);
        assert!(st.step_count > 0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut st = AdamState::<f64>::new(2, 0.1, 0.9, 0.999).unwrap();
        let mut p = vec![1.0, 2.0, 3.0];
        assert!(st.step(&mut p, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn bad_betas_rejected() {
        assert!(AdamState::<f64>::new(2, 0.1, 1.0, 0.5).is_err());
        assert!(AdamState::<f64>::new(2, 0.1, -0.1, 0.5).is_err());
    }
}
