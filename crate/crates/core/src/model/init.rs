use corridor_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform Glorot: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], values).expect("consistent shape")
}

pub(crate) fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(&[rows, cols])
}
