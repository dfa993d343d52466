use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Decoupled weight decay: the decay term bypasses the moment estimates.
    AdamW,
}

/// Adam / AdamW with bias correction. Holds first/second moment buffers per
/// parameter; `step` applies one update to every parameter and zeroes their
/// gradients afterward. The step counter increases by exactly one per call.
pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    step_count: u64,
    params: Vec<Tensor>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        params: Vec<Tensor>,
        learning_rate: f32,
        beta1: f32,
        beta2: f32,
        weight_decay: f32,
    ) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Optimizer {
            kind,
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            params,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One optimization step. Every parameter must have a populated gradient.
    pub fn step(&mut self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::Precondition(format!(
                    "optimizer step: parameter {i} has no gradient"
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1 as f64, self.beta2 as f64);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate as f64;
        let eps = self.eps as f64;
        let wd = self.weight_decay as f64;

        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().expect("checked above");
            let mut vals = p.data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..vals.len() {
                let mut g = grad[j] as f64;
                if self.kind == OptimizerKind::Adam && wd != 0.0 {
                    // classic L2 regularization folded into the gradient
                    g += wd * vals[j] as f64;
                }
                let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let mut x = vals[j] as f64;
                x -= lr * m_hat / (v_hat.sqrt() + eps);
                if self.kind == OptimizerKind::AdamW && wd != 0.0 {
                    x -= lr * wd * vals[j] as f64;
                }
                vals[j] = x as f32;
            }
            p.set_data(&vals)?;
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor {
        Tensor::param(vec![v], &[1]).unwrap()
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // with bias correction the first step is lr * g / (|g| + eps)
        let p = scalar_param(1.0);
        p.accumulate_grad(&[1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, vec![p.clone()], 0.1, 0.5, 0.9, 0.0);
        opt.step().unwrap();
        let got = p.data()[0];
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
        assert_eq!(opt.step_count(), 1);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_grad_leaves_adam_param_unchanged() {
        let p = scalar_param(2.5);
        p.accumulate_grad(&[0.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, vec![p.clone()], 0.1, 0.5, 0.9, 0.0);
        opt.step().unwrap();
        assert_eq!(p.data()[0], 2.5);
    }

    #[test]
    fn zero_grad_adamw_still_decays() {
        let p = scalar_param(2.0);
        p.accumulate_grad(&[0.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, vec![p.clone()], 0.1, 0.5, 0.9, 0.01);
        opt.step().unwrap();
        let got = p.data()[0];
        let want = 2.0 - 0.1 * 0.01 * 2.0;
        assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
    }

    #[test]
    fn missing_grad_is_precondition_error() {
        let p = scalar_param(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, vec![p], 0.1, 0.5, 0.9, 0.0);
        assert!(matches!(opt.step(), Err(Error::Precondition(_))));
    }

    #[test]
    fn converges_on_a_quadratic() {
        // minimize (p - 3)^2 from p = 0
        let p = scalar_param(0.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, vec![p.clone()], 0.05, 0.5, 0.9, 0.0);
        for _ in 0..500 {
            let x = p.data()[0];
            p.accumulate_grad(&[2.0 * (x - 3.0)]);
            opt.step().unwrap();
        }
        let got = p.data()[0];
        assert!((got - 3.0).abs() < 0.01, "did not converge: {got}");
        assert_eq!(opt.step_count(), 500);
    }
}
