//! Learning-rate schedule, gradient clipping and the AdamW update.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Piecewise schedule: linear warmup from 0, then step decays at fixed
/// fractions of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_frac: f64,
    /// `(fraction of total steps, multiplier)`, applied once `step ≥ fraction·total`.
    pub decay_points: Vec<(f64, f64)>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-4, warmup_frac: 0.10, decay_points: alloc::vec![(0.50, 0.1), (0.75, 0.01)] }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize, total_steps: usize) -> Result<f64> {
        if step > total_steps {
            return Err(Error::invalid(format!("step {step} beyond total {total_steps}")));
        }
        let total = total_steps as f64;
        let s = step as f64;
        let warmup = self.warmup_frac * total;
        if s < warmup {
            return Ok(self.base_lr * s / warmup);
        }
        let factor =
            self.decay_points.iter().filter(|(frac, _)| s >= frac * total).map(|(_, m)| *m).next_back().unwrap_or(1.0);
        Ok(self.base_lr * factor)
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(shapes: &[&[usize]], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (i, x) in pd.iter_mut().enumerate() {
                let gi = gd[i];
                let mi = b1 * m.data()[i] + one_b1 * gi;
                let vi = b2 * v.data()[i] + one_b2 * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                *x = *x * decay - step_size * mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::default();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(s.lr_at(5, 100).unwrap(), 0.5e-4));
        assert!(close(s.lr_at(0, 100).unwrap(), 0.0));
        assert!(close(s.lr_at(10, 100).unwrap(), 1e-4));
        assert!(close(s.lr_at(60, 100).unwrap(), 1e-5));
        assert!(close(s.lr_at(80, 100).unwrap(), 1e-6));
        assert!(close(s.lr_at(100, 100).unwrap(), 1e-6));
        assert!(s.lr_at(101, 100).is_err());
    }

    #[test]
    fn clipping_scales_by_ratio() {
        let mut g = alloc::vec![Tensor::from_vec(&[2], alloc::vec![3.0f64, 4.0]).unwrap()];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);
        let mut small = alloc::vec![Tensor::from_vec(&[1], alloc::vec![0.5f64]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.5]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = alloc::vec![Tensor::from_vec(&[2], alloc::vec![1.0f64, -1.0]).unwrap()];
        let g = alloc::vec![Tensor::from_vec(&[2], alloc::vec![0.3f64, -2.0]).unwrap()];
        let mut opt = AdamW::new(&[&[2]], 0.9, 0.99, 1e-12, 0.0);
        opt.step(&mut p, &g, 0.01);
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = alloc::vec![Tensor::from_vec(&[1], alloc::vec![2.0f64]).unwrap()];
        let g = alloc::vec![Tensor::from_vec(&[1], alloc::vec![1.0f64]).unwrap()];
        let mut opt = AdamW::new(&[&[1]], 0.9, 0.99, 1e-8, 0.1);
        opt.step(&mut p, &g, 0.0);
        assert_eq!(p[0].data(), &[2.0]);
    }
}
