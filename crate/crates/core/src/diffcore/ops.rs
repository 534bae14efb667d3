use super::{elementwise, elementwise_backward, matmul, matmul_backward, DifferentiableOp, ElementwiseKind, Tensor};
use crate::error::Result;

/// `[a, b] -> [a · b]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MatMulOp;

impl DifferentiableOp for MatMulOp {
    type Context = ();

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, ())> {
        Ok((vec![matmul(&inputs[0], &inputs[1])?], ()))
    }

    fn backward(&self, inputs: &[Tensor], _: &(), cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let (da, db) = matmul_backward(&inputs[0], &inputs[1], &cot[0])?;
        Ok(vec![da, db])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ElementwiseOp(pub ElementwiseKind);

impl DifferentiableOp for ElementwiseOp {
    type Context = Tensor;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
        let args: Vec<&Tensor> = inputs.iter().collect();
        let out = elementwise(self.0, &args)?;
        Ok((vec![out.clone()], out))
    }

    fn backward(&self, inputs: &[Tensor], out: &Tensor, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let args: Vec<&Tensor> = inputs.iter().collect();
        elementwise_backward(self.0, &args, out, &cot[0])
    }

    fn regime(&self, inputs: &[Tensor]) -> Result<Vec<usize>> {
        Ok(match self.0 {
            ElementwiseKind::Relu => inputs[0].data().iter().map(|&v| usize::from(v > 0.0)).collect(),
            _ => Vec::new(),
        })
    }
}
