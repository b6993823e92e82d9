//! Dense f64 tensor with optional gradient buffer.
//!
//! A `Tensor` is the value-semantic parameter/leaf store; differentiable
//! computation happens on a [`crate::tape::Tape`], which copies leaf data in
//! and hands gradients back out. Invariants held at all times:
//! product(shape) == data.len(), all entries finite, and grad (when present)
//! has the same length as data.

use crate::error::{Error, Result};
use crate::rng::fill_xavier_uniform;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "Tensor::from_vec",
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = numel(&shape);
        Self::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::from_vec(vec![1], vec![value])
    }

    /// Xavier-uniform parameter over (fan_in, fan_out) with a scale gain.
    pub fn xavier(
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = numel(&shape);
        let mut data = vec![0.0; n];
        fill_xavier_uniform(rng, &mut data, fan_in, fan_out, gain);
        Tensor {
            shape,
            data,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for the optimizer. The caller is responsible for not
    /// writing non-finite values; updates are derived from finiteness-checked
    /// gradients.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Accumulate `scale * delta` into the gradient buffer, allocating it on
    /// first use.
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![delta.len()],
            });
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta.iter()) {
            *gi += scale * di;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}
