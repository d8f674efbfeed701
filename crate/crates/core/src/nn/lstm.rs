use super::ops::{linear, sigmoid, tanh};
use super::NnError;
use crate::tensor::{Scalar, Tensor};

/// Gate order used for every per-gate array: input, forget, cell, output.
pub const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Weights of one LSTM cell, one input-to-hidden matrix, one
/// hidden-to-hidden matrix and one bias per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T = f32> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[hidden, input]` per gate.
    pub w_ih: [Tensor<T>; 4],
    /// `[hidden, hidden]` per gate.
    pub w_hh: [Tensor<T>; 4],
    /// `[hidden]` per gate.
    pub bias: [Tensor<T>; 4],
}

impl<T: Scalar> LstmCellParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_ih: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim, input_dim])),
            w_hh: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim, hidden_dim])),
            bias: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim])),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        for g in 0..4 {
            for (t, want) in [
                (&self.w_ih[g], vec![h, i]),
                (&self.w_hh[g], vec![h, h]),
                (&self.bias[g], vec![h]),
            ] {
                if t.shape() != want.as_slice() {
                    return Err(NnError::Shape {
                        op: "lstm_params",
                        left: t.shape().to_vec(),
                        right: want,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Hidden and cell state, `[hidden]` or `[batch, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T = f32> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Tensor::zeros(&[hidden_dim]),
            c: Tensor::zeros(&[hidden_dim]),
        }
    }
}

/// One LSTM time step.
///
/// ```text
/// i = σ(W_ii x + W_hi h + b_i)    f = σ(W_if x + W_hf h + b_f)
/// g = tanh(W_ig x + W_hg h + b_g) o = σ(W_io x + W_ho h + b_o)
/// c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
/// ```
pub fn lstm_step<T: Scalar>(
    x_t: &Tensor<T>,
    prev: &LstmState<T>,
    p: &LstmCellParams<T>,
) -> Result<LstmState<T>, NnError> {
    p.validate()?;
    prev.h.expect_same_shape("lstm_step", &prev.c)?;
    if prev.h.cols() != p.hidden_dim || prev.h.rows() != x_t.rows() {
        return Err(NnError::Shape {
            op: "lstm_step",
            left: x_t.shape().to_vec(),
            right: prev.h.shape().to_vec(),
        });
    }
    let gate = |g: usize| -> Result<Tensor<T>, NnError> {
        let a = linear(x_t, &p.w_ih[g], Some(&p.bias[g]))?;
        let b = linear(&prev.h, &p.w_hh[g], None)?;
        a.zip_map(&b, |u, v| u + v)
    };
    let i = sigmoid(&gate(0)?);
    let f = sigmoid(&gate(1)?);
    let g = tanh(&gate(2)?);
    let o = sigmoid(&gate(3)?);
    let fc = f.zip_map(&prev.c, |a, b| a * b)?;
    let ig = i.zip_map(&g, |a, b| a * b)?;
    let c = fc.zip_map(&ig, |a, b| a + b)?;
    let h = o.zip_map(&tanh(&c), |a, b| a * b)?;
    Ok(LstmState { h, c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_zero_state_stays_zero() {
        let p = LstmCellParams::<f64>::zeros(3, 4);
        let x = Tensor::vector(vec![0.3, -2.0, 9.0]);
        let s = lstm_step(&x, &LstmState::zeros(4), &p).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell_state() {
        let p = LstmCellParams::<f64>::zeros(2, 3);
        let prev = LstmState {
            h: Tensor::vector(vec![0.4, -0.1, 0.9]),
            c: Tensor::full(&[3], 1.0),
        };
        let s = lstm_step(&Tensor::vector(vec![1.0, 2.0]), &prev, &p).unwrap();
        let h = 0.5 * 0.5f64.tanh();
        for (&c, &hv) in s.c.data().iter().zip(s.h.data()) {
            assert!((c - 0.5).abs() < 1e-15);
            assert!((hv - h).abs() < 1e-15);
        }
        assert!((h - 0.23106).abs() < 1e-5);
    }

    #[test]
    fn output_shapes_follow_hidden_dim() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p: LstmCellParams<f32> = crate::nn::init::lstm_cell(7, 5, &mut rng);
        let s = lstm_step(&Tensor::full(&[7], 0.2), &LstmState::zeros(5), &p).unwrap();
        assert_eq!(s.h.shape(), &[5]);
        assert_eq!(s.c.shape(), &[5]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = LstmCellParams::<f64>::zeros(2, 3);
        assert!(lstm_step(&Tensor::full(&[4], 1.0), &LstmState::zeros(3), &p).is_err());
        assert!(lstm_step(&Tensor::full(&[2], 1.0), &LstmState::zeros(2), &p).is_err());
    }
}
