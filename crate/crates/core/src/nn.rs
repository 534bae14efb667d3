//! Small dense layers shared by the score network.

use crate::diffcore::{matmul, Rng, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Tensor::from_fn(&[fan_in, fan_out], |_| rng.uniform(-bound, bound)),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }

    /// `x: [batch, in]` -> `[batch, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.w)?;
        let out = self.fan_out();
        for row in y.data_mut().chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if dy.shape() != [x.shape()[0], self.fan_out()] {
            return Err(Error::dim(format!("dense cotangent {:?}", dy.shape())));
        }
        let dx = matmul(dy, &self.w.transpose2()?)?;
        let dw = matmul(&x.transpose2()?, dy)?;
        let mut db = Tensor::zeros(&[self.fan_out()]);
        for row in dy.data().chunks(self.fan_out()) {
            for (g, v) in db.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok((dx, dw, db))
    }
}
