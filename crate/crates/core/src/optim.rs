//! Rectified Adam.

use eventgan_grad::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam whose adaptive step is switched on only once the variance of the
/// adaptive learning rate is tractable (`rho_t > 5`), and rescaled by the
/// rectification term `r_t` after that. Before then it takes plain
/// bias-corrected momentum steps.
pub struct RAdam<T> {
    config: RAdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> RAdam<T> {
    pub fn new(config: RAdamConfig, params: &ParamSet<T>) -> Result<Self> {
        let c = &config;
        if !(c.lr > 0.0) || !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("bad optimizer settings {c:?}")));
        }
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Ok(Self { m: zeros(), v: zeros(), step: 0, config })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &RAdamConfig {
        &self.config
    }

    /// Applies one update. Parameters without a gradient are left alone but
    /// still count towards the bias correction step.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let (b1, b2) = (c.beta1, c.beta2);
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bias2;
        let rect = (rho_t > 5.0)
            .then(|| ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt());
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::one() - tb1, T::one() - tb2);
        let step_size = T::of(c.lr / bias1);
        let eps = T::of(c.eps);
        let sqrt_bias2 = T::of(bias2.sqrt());
        let rect = rect.map(T::of);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let p = &mut params.tensors_mut()[i];
            if grad.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!("gradient {i} is {:?}, parameter {:?}", grad.shape(), p.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = tb1 * *mi + ob1 * gr;
                *vi = tb2 * *vi + ob2 * gr * gr;
                match rect {
                    Some(r) => *w -= step_size * r * *mi * sqrt_bias2 / (vi.sqrt() + eps),
                    None => *w -= step_size * *mi,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight transcription of the update rule for one scalar parameter.
    fn reference(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, 1.0);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let rho = rho_inf - 2.0 * t as f64 * b2.powi(t) / (1.0 - b2.powi(t));
            if rho > 5.0 {
                let vhat = (v / (1.0 - b2.powi(t))).sqrt();
                let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
                p -= lr * mhat * r / (vhat + eps / (1.0 - b2.powi(t)).sqrt());
            } else {
                p -= lr * mhat;
            }
        }
        p
    }

    #[test]
    fn matches_reference_rule() {
        let grads: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let mut ps = ParamSet::<f64>::new();
        ps.push("p", Tensor::full([1, 1, 1, 1], 1.0));
        let mut opt = RAdam::new(RAdamConfig { lr: 0.01, ..Default::default() }, &ps).unwrap();
        for g in &grads {
            opt.step(&mut ps, &[Some(Tensor::full([1, 1, 1, 1], *g))]).unwrap();
        }
        let want = reference(&grads, 0.01);
        assert!((ps.get(0).item() - want).abs() < 1e-12, "{} vs {want}", ps.get(0).item());
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("p", Tensor::full([1, 1, 1, 2], 3.0));
        let mut opt = RAdam::new(RAdamConfig { lr: 0.05, ..Default::default() }, &ps).unwrap();
        for _ in 0..2000 {
            let grad = ps.get(0).map(|x| 2.0 * (x - 1.0));
            opt.step(&mut ps, &[Some(grad)]).unwrap();
        }
        assert!(ps.get(0).data().iter().all(|x| (x - 1.0).abs() < 1e-2));
    }
}
