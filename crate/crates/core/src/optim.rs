//! Adam with optional decoupled weight decay (AdamW).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::{Grads, ParamStore};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `p <- p (1 - lr * weight_decay)` before the Adam step.
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_grad_norm: Option<f64>,
}

impl AdamConfig {
    /// Pretraining optimizer: AdamW, lr 1e-4, weight decay 1e-4.
    pub fn pretrain() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, clip_grad_norm: None }
    }

    /// Linear-probe optimizer: Adam, lr 1e-4, no decay.
    pub fn probe() -> Self {
        Self { weight_decay: 0.0, ..Self::pretrain() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight decay must be nonnegative".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = |p: &crate::params::Param<T>| vec![T::zero(); p.data.len()];
        let state = AdamState { step: 0, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect() };
        Ok(Self { config, state })
    }

    pub fn with_state(config: AdamConfig, state: AdamState<T>, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ok = state.m.len() == params.len()
            && state.v.len() == params.len()
            && params.iter().zip(&state.m).zip(&state.v).all(|((p, m), v)| p.data.len() == m.len() && m.len() == v.len());
        if !ok {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        Ok(Self { config, state })
    }

    /// One update. Returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &mut Grads<T>) -> f64 {
        let c = self.config;
        let norm = grads.global_norm();
        if let Some(max) = c.clip_grad_norm {
            if norm > max {
                grads.scale(T::from_f64_lossy(max / (norm + 1e-12)));
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / libm::sqrt(bc2));
        let eps = T::from_f64_lossy(c.eps);
        let decay = T::from_f64_lossy(1.0 - c.lr * c.weight_decay);
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for j in 0..p.data.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                if c.weight_decay != 0.0 {
                    p.data[j] *= decay;
                }
                p.data[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng::SeededRng;

    fn store() -> (ParamStore<f64>, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("w", &[3], Init::Normal { std: 1.0 }, &mut SeededRng::new(0));
        (s, id)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut s, id) = store();
        let before = s.clone();
        let mut g = s.zeros_like();
        g.get_mut(id).copy_from_slice(&[1.0, -2.0, 0.5]);
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::pretrain() }, &s).unwrap();
        opt.step(&mut s, &mut g);
        assert_eq!(s, before);
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let (mut s, id) = store();
        let before = s.get(id).to_vec();
        let cfg = AdamConfig { lr: 1e-2, weight_decay: 0.5, ..AdamConfig::pretrain() };
        let mut opt = Adam::new(cfg, &s).unwrap();
        let mut g = s.zeros_like();
        opt.step(&mut s, &mut g);
        for (a, b) in s.get(id).iter().zip(&before) {
            assert!((a - b * (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = store();
        let before = s.get(id).to_vec();
        let mut opt = Adam::new(AdamConfig::probe(), &s).unwrap();
        let mut g = s.zeros_like();
        g.get_mut(id).copy_from_slice(&[3.0, -0.1, 1e-3]);
        opt.step(&mut s, &mut g);
        for ((a, b), gr) in s.get(id).iter().zip(&before).zip([3.0f64, -0.1, 1e-3]) {
            let expected = b - 1e-4 * gr / (gr.abs() + 1e-8);
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let (mut s, id) = store();
        let cfg = AdamConfig { clip_grad_norm: Some(1.0), ..AdamConfig::pretrain() };
        let mut opt = Adam::new(cfg, &s).unwrap();
        let mut g = s.zeros_like();
        g.get_mut(id).copy_from_slice(&[30.0, 40.0, 0.0]);
        let pre = opt.step(&mut s, &mut g);
        assert!((pre - 50.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-9);
    }
}
