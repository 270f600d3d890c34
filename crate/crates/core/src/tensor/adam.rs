use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter, in parameter
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<E: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<E>>,
    second: Vec<Tensor<E>>,
}

impl<E: Real> Adam<E> {
    pub fn new(config: AdamConfig, params: &ParamSet<E>) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<E>], &[Tensor<E>]) {
        (&self.first, &self.second)
    }

    /// Restores optimizer state saved by a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<E>>, second: Vec<Tensor<E>>) -> Result<()> {
        let shapes_ok = first.len() == self.first.len()
            && second.len() == self.second.len()
            && first.iter().zip(&self.first).all(|(a, b)| a.shape() == b.shape())
            && second.iter().zip(&self.second).all(|(a, b)| a.shape() == b.shape());
        if !shapes_ok {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update from the gradients stored in `params`. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<E>, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.first.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        if let Some(bad) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (E::from_f64(beta1), E::from_f64(beta2));
        let (one_b1, one_b2) = (E::from_f64(1.0 - beta1), E::from_f64(1.0 - beta2));
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = m.as_f64() / bc1;
                let v_hat = v.as_f64() / bc2;
                *w = E::from_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}
