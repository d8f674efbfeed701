use super::NnError;
use crate::tensor::{Scalar, Tensor};

/// Bias-corrected Adam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to `params` in place.
    ///
    /// Every gradient is checked for finiteness before anything is written,
    /// so a failed step leaves both `params` and `state` untouched.
    pub fn step<T: Scalar>(
        &self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        state: &mut AdamState<T>,
    ) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::Shape {
                op: "adam",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        state.ensure_init(params)?;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape("adam", g)?;
            if let Some(e) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFinite {
                    param: i,
                    element: e,
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = b1 * md[j] + (T::one() - b1) * gj;
                vd[j] = b2 * vd[j] + (T::one() - b2) * gj * gj;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure_init(&mut self, params: &[&mut Tensor<T>]) -> Result<(), NnError> {
        if self.m.is_empty() && !params.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NnError::Shape {
                op: "adam_state",
                left: vec![self.m.len()],
                right: vec![params.len()],
            });
        }
        for (m, p) in self.m.iter().zip(params) {
            m.expect_same_shape("adam_state", p)?;
        }
        Ok(())
    }
}
