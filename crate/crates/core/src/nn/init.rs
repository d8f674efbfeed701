//! Parameter initialization.
//!
//! Weights are drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`; biases
//! start at zero.

use rand::Rng;

use super::LstmCellParams;
use crate::tensor::{Scalar, Tensor};

pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Dense weight `[out, in]`.
pub fn dense<T: Scalar, R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Tensor<T> {
    xavier_uniform(&[out, inp], inp, out, rng)
}

/// Convolution kernel `[a, b, k]`; fans are `b·k` and `a·k`.
pub fn conv<T: Scalar, R: Rng + ?Sized>(a: usize, b: usize, k: usize, rng: &mut R) -> Tensor<T> {
    xavier_uniform(&[a, b, k], b * k, a * k, rng)
}

pub fn lstm_cell<T: Scalar, R: Rng + ?Sized>(
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut R,
) -> LstmCellParams<T> {
    let w_ih = std::array::from_fn(|_| dense(hidden_dim, input_dim, rng));
    let w_hh = std::array::from_fn(|_| dense(hidden_dim, hidden_dim, rng));
    LstmCellParams {
        input_dim,
        hidden_dim,
        w_ih,
        w_hh,
        bias: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_and_seeded() {
        let a: Tensor<f32> = dense(12, 26, &mut ChaCha8Rng::seed_from_u64(1));
        let b: Tensor<f32> = dense(12, 26, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let bound = (6.0f32 / 38.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert!(a.data().iter().any(|&v| v != 0.0));
    }
}
