//! Stochastic gradient descent with heavy-ball momentum.

use crate::encoders::model::{Gradients, TwoStreamModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    /// `lr = 0` is allowed and leaves parameters untouched.
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn velocity(&self) -> Option<&Gradients> {
        self.velocity.as_ref()
    }

    pub fn set_velocity(&mut self, velocity: Option<Gradients>) {
        self.velocity = velocity;
    }

    /// `v ← μ·v + g`, `θ ← θ − lr·v`. Non-finite gradients abort the step with nothing changed.
    pub fn step(&mut self, model: &mut TwoStreamModel, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros(model));
        let params = model.param_slices_mut();
        let vel = velocity.slices_mut();
        if params.len() != vel.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: vel.len(),
            });
        }
        for ((p, v), g) in params.into_iter().zip(vel).zip(grads.slices()) {
            update(p, v, g, self.lr, self.momentum);
        }
        Ok(())
    }
}

/// One momentum update on a flat block.
pub fn update(params: &mut [f64], velocity: &mut [f64], grads: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}
