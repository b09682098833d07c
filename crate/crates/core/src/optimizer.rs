//! AdamW with decoupled weight decay, and the learning-rate schedule.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::microlm::{Real, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
    pub mode: ScheduleMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { peak_lr: 1e-3, warmup_steps: 100, total_steps: 3000, min_lr: 1e-4, mode: ScheduleMode::Cosine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_schedule: ScheduleConfig,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1, lr_schedule: ScheduleConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    BadConfig(String),
    #[error("parameter, gradient and moment layouts disagree")]
    ShapeMismatch,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::BadConfig(String::from(m)));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        self.lr_schedule.validate()
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.min_lr <= self.peak_lr) || self.min_lr < 0.0 {
            return Err(OptimError::BadConfig(String::from("need 0 <= min_lr <= peak_lr")));
        }
        if self.warmup_steps > self.total_steps {
            return Err(OptimError::BadConfig(String::from("warmup_steps exceeds total_steps")));
        }
        Ok(())
    }
}

/// Learning rate for training step `step`.
pub fn lr_at(cfg: &ScheduleConfig, step: u64) -> f64 {
    if cfg.mode == ScheduleMode::Constant {
        return cfg.peak_lr;
    }
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.total_steps {
        return cfg.min_lr;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Moment estimates and update count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step_count: u64,
    pub first_moment: TensorMap<T>,
    pub second_moment: TensorMap<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &TensorMap<T>) -> Self {
        Self { step_count: 0, first_moment: TensorMap::zeros_like(params), second_moment: TensorMap::zeros_like(params) }
    }
}

/// One bias-corrected AdamW update in place. Only tensors whose
/// [`decays`](crate::microlm::Tensor::decays) is true receive weight decay.
/// On error nothing is modified.
pub fn adamw_step<T: Real>(
    params: &mut TensorMap<T>,
    grads: &TensorMap<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<(), OptimError> {
    if !params.same_layout(grads) || !params.same_layout(&state.first_moment) || !params.same_layout(&state.second_moment)
    {
        return Err(OptimError::ShapeMismatch);
    }
    if let Some(t) = grads.iter().find(|t| t.data.iter().any(|g| !g.is_finite())) {
        return Err(OptimError::NonFiniteGradient(t.name.clone()));
    }
    let t = state.step_count + 1;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
    let eps = T::of(cfg.eps);
    let lr_t = T::of(lr);
    let decay = T::of(lr * cfg.weight_decay);

    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.first_moment.tensors)
        .zip(&mut state.second_moment.tensors)
    {
        let wd = if p.decays() { decay } else { T::zero() };
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi * inv_bc1;
            let v_hat = *vi * inv_bc2;
            *x = *x - wd * *x - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microlm::Tensor;
    use alloc::vec;

    fn scalar(x: f64) -> TensorMap<f64> {
        let mut t = Tensor::zeros("w", &[1, 1]);
        t.data[0] = x;
        TensorMap { tensors: vec![t] }
    }

    fn no_decay() -> AdamWConfig {
        AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }
    }

    #[test]
    fn zero_grads_leave_params_fixed() {
        let mut p = scalar(0.7);
        let g = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut s, &no_decay(), 1e-2).unwrap();
        }
        assert_eq!(p.tensors[0].data[0], 0.7);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        let cfg = no_decay();
        adamw_step(&mut p, &g, &mut s, &cfg, 0.01).unwrap();
        let want = -0.01 / (1.0 + cfg.eps);
        assert!((p.tensors[0].data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn momentum_decays_by_beta1_power() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        let cfg = no_decay();
        adamw_step(&mut p, &scalar(1.0), &mut s, &cfg, 1e-3).unwrap();
        let m1 = s.first_moment.tensors[0].data[0];
        for _ in 0..50 {
            adamw_step(&mut p, &scalar(0.0), &mut s, &cfg, 1e-3).unwrap();
        }
        let ratio = s.first_moment.tensors[0].data[0] / m1;
        assert!((ratio - 0.9f64.powi(50)).abs() < 1e-15);
        assert!((ratio - 0.0052).abs() < 5e-5);
    }

    #[test]
    fn nan_gradient_names_tensor_and_changes_nothing() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        let err = adamw_step(&mut p, &scalar(f64::NAN), &mut s, &no_decay(), 1e-3).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("w".into()));
        assert_eq!(p, scalar(1.0));
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn vectors_are_not_decayed() {
        let mut p = TensorMap { tensors: vec![Tensor::zeros("b", &[2]), Tensor::zeros("w", &[1, 2])] };
        p.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|x| *x = 1.0));
        let g = TensorMap::zeros_like(&p);
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() };
        adamw_step(&mut p, &g, &mut s, &cfg, 0.1).unwrap();
        assert_eq!(p.tensors[0].data, vec![1.0, 1.0]);
        assert_eq!(p.tensors[1].data, vec![0.95, 0.95]);
    }

    #[test]
    fn schedule_endpoints() {
        let c = ScheduleConfig { peak_lr: 1e-3, warmup_steps: 10, total_steps: 100, min_lr: 1e-5, mode: ScheduleMode::Cosine };
        assert_eq!(lr_at(&c, 0), 0.0);
        assert_eq!(lr_at(&c, 10), 1e-3);
        assert_eq!(lr_at(&c, 100), 1e-5);
        assert_eq!(lr_at(&c, 5000), 1e-5);
        let k = ScheduleConfig { mode: ScheduleMode::Constant, ..c };
        for s in [0, 3, 10, 100, 1 << 40] {
            assert_eq!(lr_at(&k, s), 1e-3);
        }
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut p = scalar(1.0);
        let g = TensorMap { tensors: vec![Tensor::zeros("w", &[2])] };
        let mut s = OptimizerState::new(&p);
        assert_eq!(adamw_step(&mut p, &g, &mut s, &no_decay(), 1e-3), Err(OptimError::ShapeMismatch));
    }
}
