//! Shared helpers for unit, property and integration tests: deterministic
//! random fixtures, relative-error metrics and a central finite-difference
//! gradient checker. Kept in the library so integration tests and benches
//! can reuse them.

use crate::network::NetworkSpec;
use crate::tensor::{Element, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Uniform draws in `[lo, hi)`, deterministic per seed.
pub fn uniform_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Tensor filled with uniform draws in `[lo, hi)`, deterministic per seed.
pub fn random_tensor<T: Element>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = uniform_vec(seed, n, lo, hi)
        .into_iter()
        .map(T::from_f64)
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

/// Largest elementwise deviation relative to the magnitude of the compared
/// vectors: `max_i |a_i - b_i| / max(max|a|, max|b|, tiny)`.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in comparison");
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(f64::MIN_POSITIVE, |acc, v| acc.max(v.abs()));
    let worst = a
        .iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
    worst / scale
}

/// [`max_rel_error`] over two tensors of any precision.
pub fn tensor_rel_error<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in comparison");
    let av: Vec<f64> = a.data().iter().map(|v| v.to_f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    max_rel_error(&av, &bv)
}

/// Central finite differences of a scalar objective, step `h` per
/// coordinate.
pub fn finite_diff_gradient(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut theta = at.to_vec();
    let mut grad = vec![0.0; at.len()];
    for i in 0..at.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Small network used by gradient-equivalence and finite-difference suites:
/// 2 input channels, rate 1, 7³ input, three narrow layers.
pub fn tiny_spec(blocks_per_stack: usize, precision: Precision) -> NetworkSpec {
    NetworkSpec {
        input_channels: 2,
        upsample_rate: 1,
        input_extent: 7,
        layers: vec![
            crate::network::EspcnLayer {
                kernel_extent: 3,
                out_channels: 4,
                padding: 0,
                relu: true,
            },
            crate::network::EspcnLayer {
                kernel_extent: 1,
                out_channels: 6,
                padding: 0,
                relu: true,
            },
            crate::network::EspcnLayer {
                kernel_extent: 3,
                out_channels: 2,
                padding: 0,
                relu: false,
            },
        ],
        blocks_per_stack,
        precision,
    }
}

/// Width-reduced super-resolution network used by memory-law and training
/// suites: 6 input channels, rate 2, 11³ input.
pub fn toy_spec(blocks_per_stack: usize, precision: Precision) -> NetworkSpec {
    NetworkSpec {
        input_channels: 6,
        upsample_rate: 2,
        input_extent: 11,
        layers: vec![
            crate::network::EspcnLayer {
                kernel_extent: 3,
                out_channels: 12,
                padding: 0,
                relu: true,
            },
            crate::network::EspcnLayer {
                kernel_extent: 1,
                out_channels: 16,
                padding: 0,
                relu: true,
            },
            crate::network::EspcnLayer {
                kernel_extent: 3,
                out_channels: 48,
                padding: 0,
                relu: false,
            },
        ],
        blocks_per_stack,
        precision,
    }
}
