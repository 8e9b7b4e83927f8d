use super::{AutodiffError, ParamStore, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (`g += wd·θ`), not decoupled.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam state for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Restores state written by a checkpoint.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Every gradient is checked before any parameter changes,
    /// so a failed step leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<(), AutodiffError> {
        if grads.len() != params.len() {
            return Err(AutodiffError::GradientCount(grads.len(), params.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(AutodiffError::GradientShape {
                    name: params.name(i).to_string(),
                    expected: params.get(i).shape(),
                    got: g.shape(),
                });
            }
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient { name: params.name(i).to_string() });
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] + wd * p[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64([1, 1, vals.len()], vals));
        s
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = store(&[1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::zeros([1, 1, 2])]).unwrap();
        assert_eq!(p.get(0).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g and v̂ = g², so Δ = -lr·g/(|g| + eps)
        let g = [0.3, -2.0, 1e-3];
        let mut p = store(&[0.0; 3]);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &p);
        adam.step(&mut p, &[Tensor::from_f64([1, 1, 3], &g)]).unwrap();
        for (x, gi) in p.get(0).data().iter().zip(g) {
            let expect: f64 = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15, "{x} vs {expect}");
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = store(&[1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::from_f64([1, 1, 1], &[f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p.get(0).data(), &[1.0]);
    }

    #[test]
    fn weight_decay_enters_gradient() {
        // zero gradient but wd > 0: effective g = wd·θ > 0, so θ decreases by ~lr
        let mut p = store(&[2.0]);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &p);
        adam.step(&mut p, &[Tensor::zeros([1, 1, 1])]).unwrap();
        assert!((p.get(0).data()[0] - 1.9).abs() < 1e-8);
    }
}
