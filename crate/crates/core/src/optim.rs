//! Adam with bias-corrected moments.

use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parameter {index}: gradient shape {grad:?} does not match {param:?}")]
pub struct ShapeMismatch {
    pub index: usize,
    pub param: (usize, usize),
    pub grad: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with `beta1 = 0.9`, `beta2 = 0.999`,
    /// `epsilon = 1e-8`.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let shapes: Vec<(usize, usize)> = params.into_iter().map(Tensor::shape).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One update of every parameter. Shapes are checked before anything changes.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
    ) -> Result<(), ShapeMismatch> {
        for (index, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(ShapeMismatch {
                    index,
                    param: p.shape(),
                    grad: g.shape(),
                });
            }
        }
        if params.len() != grads.len() || grads.len() != self.m.len() {
            return Err(ShapeMismatch {
                index: params.len().min(grads.len()),
                param: (params.len(), 0),
                grad: (grads.len(), 0),
            });
        }

        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
