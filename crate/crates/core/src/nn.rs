//! Layer primitives with explicit forward and backward passes.
//!
//! Activations are row-major `n x dim` slices. Backward functions accumulate
//! parameter gradients into [`Grads`] and return the input gradient.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, MatMut, MatRef};
use crate::params::{Grads, Init, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::Real;

/// Affine map `y = x W + b` with `W` stored `in_dim x out_dim`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.register(join(name, "weight"), &[in_dim, out_dim], Init::Normal { std: init_std }, rng);
        let bias = store.register(join(name, "bias"), &[out_dim], Init::Zeros, rng);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, params: &ParamStore<T>, x: &[T], n: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), n * self.in_dim);
        let b = params.get(self.bias);
        let mut y: Vec<T> = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        gemm(
            T::one(),
            MatRef::new(x, n, self.in_dim),
            MatRef::new(params.get(self.weight), self.in_dim, self.out_dim),
            T::one(),
            MatMut::new(&mut y, n, self.out_dim),
        );
        y
    }

    /// Accumulates `dW`, `db`; returns `dx` when `want_dx`.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        x: &[T],
        dy: &[T],
        n: usize,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), n * self.out_dim);
        gemm(
            T::one(),
            MatRef::new(x, n, self.in_dim).t(),
            MatRef::new(dy, n, self.out_dim),
            T::one(),
            MatMut::new(grads.get_mut(self.weight), self.in_dim, self.out_dim),
        );
        let db = grads.get_mut(self.bias);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_dx {
            return None;
        }
        let mut dx = vec![T::zero(); n * self.in_dim];
        gemm(
            T::one(),
            MatRef::new(dy, n, self.out_dim),
            MatRef::new(params.get(self.weight), self.in_dim, self.out_dim).t(),
            T::zero(),
            MatMut::new(&mut dx, n, self.in_dim),
        );
        Some(dx)
    }
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut SeededRng) -> Self {
        let gain = store.register(join(name, "gain"), &[dim], Init::Ones, rng);
        let shift = store.register(join(name, "shift"), &[dim], Init::Zeros, rng);
        Self { gain, shift, dim, eps: Self::EPS }
    }

    pub fn forward<T: Real>(&self, params: &ParamStore<T>, x: &[T], n: usize) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim;
        let gain = params.get(self.gain);
        let shift = params.get(self.shift);
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let eps = T::from_f64_lossy(self.eps);
        let mut y = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gain[j] + shift[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &LayerNormCache<T>,
        dy: &[T],
        n: usize,
    ) -> Vec<T> {
        let d = self.dim;
        let gain = params.get(self.gain);
        {
            let dg = grads.get_mut(self.gain);
            for r in 0..n {
                for j in 0..d {
                    dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
                }
            }
        }
        {
            let ds = grads.get_mut(self.shift);
            for r in 0..n {
                for j in 0..d {
                    ds[j] += dy[r * d + j];
                }
            }
        }
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let mut dx = vec![T::zero(); n * d];
        let mut dxhat = vec![T::zero(); d];
        for r in 0..n {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut sum = T::zero();
            let mut sum_x = T::zero();
            for j in 0..d {
                let v = dy[r * d + j] * gain[j];
                dxhat[j] = v;
                sum += v;
                sum_x += v * xh[j];
            }
            let rs = cache.rstd[r];
            for j in 0..d {
                dx[r * d + j] = rs * (dxhat[j] - inv_d * sum - inv_d * xh[j] * sum_x);
            }
        }
        dx
    }
}

/// Exact Gaussian-error gated linear unit: `x * Phi(x)`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64_lossy(0.398_942_280_401_432_7) * (-half * x * x).exp();
    cdf + x * pdf
}

/// Inverted-dropout multipliers: `0` or `1 / (1 - p)` per element.
pub fn dropout_mask<T: Real>(len: usize, p: f64, rng: &mut SeededRng) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.uniform() < p { T::zero() } else { keep }).collect()
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn join(prefix: &str, leaf: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + leaf.len() + 1);
    s.push_str(prefix);
    s.push('.');
    s.push_str(leaf);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -1.2, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = SeededRng::new(0);
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", 4, &mut rng);
        let x = [1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0];
        let (y, _) = ln.forward(&store, &x, 2);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_forward_is_affine() {
        let mut rng = SeededRng::new(1);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 3, 2, 0.5, &mut rng);
        store.get_mut(lin.bias).copy_from_slice(&[0.25, -1.0]);
        let x = [1.0, 2.0, 3.0];
        let y = lin.forward(&store, &x, 1);
        let w = store.get(lin.weight);
        for o in 0..2 {
            let direct = (0..3).map(|i| x[i] * w[i * 2 + o]).sum::<f64>() + store.get(lin.bias)[o];
            assert!((y[o] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn stable_logistic_helpers() {
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
