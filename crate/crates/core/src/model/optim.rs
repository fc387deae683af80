use crate::error::{contract_err, Result};
use crate::model::SegNet;
use crate::scalar::Scalar;

/// SGD with momentum, L2 weight decay and polynomial learning-rate decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub total_iters: usize,
    pub iter: usize,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        power: f64,
        total_iters: usize,
    ) -> Self {
        Self {
            base_lr,
            momentum,
            weight_decay,
            power,
            total_iters,
            iter: 0,
            velocity: Vec::new(),
        }
    }

    /// `base_lr · (1 − iter / total_iters)^power`, zero from `total_iters` on.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter >= self.total_iters {
            return 0.0;
        }
        self.base_lr * (1.0 - iter as f64 / self.total_iters as f64).powf(self.power)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.iter)
    }

    /// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`, then advances the schedule.
    pub fn step(&mut self, model: &mut SegNet<T>) -> Result<()> {
        if let Some(p) = model.params().iter().find(|p| p.value.grad().is_none()) {
            return Err(contract_err!("parameter {} has no gradient", p.name));
        }
        if self.velocity.is_empty() {
            self.velocity = model
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect();
        }
        let lr = self.lr();
        for (p, v) in model.params_mut().iter_mut().zip(&mut self.velocity) {
            let grad: Vec<T> = p.value.grad().expect("checked above").to_vec();
            for ((theta, vel), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                let nv =
                    self.momentum * vel.widen() + g.widen() + self.weight_decay * theta.widen();
                *vel = T::narrow(nv);
                *theta = T::narrow(theta.widen() - lr * nv);
            }
        }
        self.iter += 1;
        Ok(())
    }
}

/// Applies one optimizer step to `model`.
pub fn sgd_step<T: Scalar>(model: &mut SegNet<T>, opt: &mut OptimState<T>) -> Result<()> {
    opt.step(model)
}
