use crate::diffcore::{DifferentiableOp, Tensor};
use crate::error::{Error, Result};

fn check(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Size("empty prediction".into()));
    }
    Ok(())
}

/// Mean squared coordinate error.
pub fn forecast_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / n)
}

/// Loss and its gradient `2 (pred - gt) / N`.
pub fn forecast_loss_grad(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    let loss = forecast_loss(pred, gt)?;
    let n = pred.len() as f64;
    let grad = Tensor::from_fn(pred.shape(), |i| 2.0 * (pred.data()[i] - gt.data()[i]) / n);
    Ok((loss, grad))
}

/// `[pred] -> [loss]` against a fixed target.
#[derive(Debug, Clone)]
pub struct ForecastLossOp {
    pub gt: Tensor,
}

impl DifferentiableOp for ForecastLossOp {
    type Context = Tensor;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
        let (loss, grad) = forecast_loss_grad(&inputs[0], &self.gt)?;
        Ok((vec![Tensor::scalar(loss)], grad))
    }

    fn backward(&self, _: &[Tensor], ctx: &Tensor, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let c = cot[0].data()[0];
        Ok(vec![ctx.map(|g| g * c)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let gt = Tensor::from_fn(&[10, 10, 2], |i| i as f64 * 0.1);
        assert_eq!(forecast_loss(&gt, &gt).unwrap(), 0.0);
        let shifted = Tensor::from_fn(&[10, 10, 2], |i| gt.data()[i] + if i % 2 == 0 { 3.0 } else { 4.0 });
        assert!((forecast_loss(&shifted, &gt).unwrap() - 12.5).abs() < 1e-12);
        assert!(forecast_loss(&Tensor::zeros(&[10, 9, 2]), &gt).is_err());
    }
}
