//! Power-iteration estimate of a weight matrix's largest singular value.
//!
//! Weights are viewed as `rows x cols` row-major matrices (a conv kernel
//! `[out, in, k, k]` has `rows = out`, `cols = in * k * k`).

use eventgan_grad::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const NORM_EPS: f64 = 1e-12;

fn normalize<T: Real>(x: &mut [T]) {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    let d = n + T::of(NORM_EPS);
    x.iter_mut().for_each(|v| *v = *v / d);
}

/// Unit-norm Gaussian start vector.
pub fn init_vector<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<T> = (0..len)
        .map(|_| {
            let s: f64 = StandardNormal.sample(&mut rng);
            T::of(s)
        })
        .collect();
    normalize(&mut v);
    v
}

/// `sum_j w[r, j] * u[r]`
fn mat_t_vec<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for r in 0..rows {
        let ur = u[r];
        for (o, &x) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += x * ur;
        }
    }
}

fn mat_vec<T: Real>(w: &[T], rows: usize, cols: usize, v: &[T], out: &mut [T]) {
    for r in 0..rows {
        out[r] = w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum();
    }
}

/// One power iteration: `v <- W^T u / |.|`, `u <- W v / |.|`. Returns the
/// updated estimate `sigma = u^T W v`.
pub fn power_iteration_step<T: Real>(w: &[T], rows: usize, cols: usize, u: &mut [T], v: &mut [T]) -> T {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    assert_eq!(v.len(), cols);
    mat_t_vec(w, rows, cols, u, v);
    normalize(v);
    mat_vec(w, rows, cols, v, u);
    let sigma = u.iter().map(|&x| x * x).sum::<T>().sqrt();
    normalize(u);
    sigma
}

/// Advances the power iteration once and returns `W / sigma`.
pub fn spectral_normalize_step<T: Real>(w: &[T], rows: usize, cols: usize, u: &mut [T], v: &mut [T]) -> Vec<T> {
    let sigma = power_iteration_step(w, rows, cols, u, v);
    w.iter().map(|&x| x / sigma).collect()
}

/// Largest singular value after `iterations` power iterations.
pub fn estimate_sigma<T: Real>(w: &[T], rows: usize, cols: usize, iterations: usize, seed: u64) -> T {
    let mut u = init_vector(rows, seed);
    let mut v = vec![T::zero(); cols];
    let mut sigma = T::zero();
    for _ in 0..iterations {
        sigma = power_iteration_step(w, rows, cols, &mut u, &mut v);
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let w = [3.0f64, 0.0, 0.0, 1.0];
        let s = estimate_sigma(&w, 2, 2, 30, 1);
        assert!((s - 3.0).abs() < 1e-9);
        let mut u = init_vector(2, 4);
        let mut v = vec![0.0; 2];
        let mut n = w.to_vec();
        for _ in 0..30 {
            n = spectral_normalize_step(&w, 2, 2, &mut u, &mut v);
        }
        assert!((n[0] - 1.0).abs() < 1e-9 && (n[3] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_unchanged() {
        let (s, c) = 0.7f64.sin_cos();
        let w = [c, -s, s, c];
        let mut u = init_vector(2, 2);
        let mut v = vec![0.0; 2];
        let n = spectral_normalize_step(&w, 2, 2, &mut u, &mut v);
        for (a, b) in n.iter().zip(&w) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
