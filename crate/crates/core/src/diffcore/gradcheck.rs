use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Sample points whose discrete regime changes within this radius are skipped.
pub const KINK_RADIUS: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms; finite
/// differences of an exactly flat map carry noise around `1e-11`.
pub const SCALE_FLOOR: f64 = 1e-6;
/// An input whose gradient is tiny next to the op's largest gradient is
/// measured against this fraction of that largest gradient.
pub const RELATIVE_FLOOR: f64 = 1e-3;
/// Multiple of the objective's round-off level `ε_mach Σ|cot·out| / h`
/// below which a gradient is indistinguishable from zero.
pub const NOISE_FACTOR: f64 = 1e5;

/// An operation with a hand-written vector-Jacobian product.
pub trait DifferentiableOp {
    /// Whatever the forward pass saves for backward.
    type Context;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Self::Context)>;

    /// Input cotangents given output cotangents. Must be linear in
    /// `cotangents`.
    fn backward(
        &self,
        inputs: &[Tensor],
        ctx: &Self::Context,
        cotangents: &[Tensor],
    ) -> Result<Vec<Tensor>>;

    /// Discrete state of the forward pass at `inputs` (relu sign patterns,
    /// sort orders, isotonic blocks). Smooth ops return an empty vector.
    fn regime(&self, _inputs: &[Tensor]) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    /// Per input: `max_j |analytic_j - numeric_j| / max_j max(|analytic_j|, |numeric_j|)`,
    /// with the denominator floored at [`SCALE_FLOOR`] and at
    /// [`RELATIVE_FLOOR`] times the largest gradient over all inputs, and at
    /// the round-off level scaled by [`NOISE_FACTOR`].
    pub max_rel_error: Vec<f64>,
    /// The sample lies within [`KINK_RADIUS`] of a regime change and was not
    /// compared.
    pub skipped: bool,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.skipped || self.max_rel_error.iter().all(|&e| e <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

fn finite_outputs<O: DifferentiableOp>(op: &O, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let (out, _) = op.forward(inputs)?;
    if out.iter().any(|t| !t.is_finite()) {
        return Err(Error::Evaluation("non-finite forward output".into()));
    }
    Ok(out)
}

/// Compares `op.backward` against central finite differences of
/// `<cot, op.forward(inputs)>` for a fixed pseudo-random cotangent.
pub fn check_gradients<O: DifferentiableOp>(
    op: &O,
    inputs: &[Tensor],
    tolerance: f64,
) -> Result<GradientReport> {
    let (outputs, ctx) = op.forward(inputs)?;
    if outputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::Evaluation("non-finite forward output".into()));
    }

    let base_regime = op.regime(inputs)?;
    if !base_regime.is_empty() {
        let mut probe = inputs.to_vec();
        for j in 0..inputs.len() {
            for e in 0..inputs[j].len() {
                for sign in [1.0, -1.0] {
                    let orig = probe[j].data()[e];
                    probe[j].data_mut()[e] = orig + sign * KINK_RADIUS;
                    let r = op.regime(&probe)?;
                    probe[j].data_mut()[e] = orig;
                    if r != base_regime {
                        return Ok(GradientReport {
                            max_rel_error: vec![0.0; inputs.len()],
                            skipped: true,
                            tolerance,
                        });
                    }
                }
            }
        }
    }

    let mut rng = Rng::new(0x5EED_CAFE);
    let cots: Vec<Tensor> = outputs
        .iter()
        .map(|o| Tensor::from_fn(o.shape(), |_| rng.uniform(-1.0, 1.0)))
        .collect();
    let analytic = op.backward(inputs, &ctx, &cots)?;
    if analytic.len() != inputs.len() {
        return Err(Error::dim(format!(
            "backward returned {} cotangents for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let objective = |xs: &[Tensor]| -> Result<f64> {
        let out = finite_outputs(op, xs)?;
        Ok(out.iter().zip(&cots).map(|(o, c)| o.dot(c)).sum())
    };

    let mut probe = inputs.to_vec();
    let mut diffs = Vec::with_capacity(inputs.len());
    for j in 0..inputs.len() {
        analytic[j].expect_shape(inputs[j].shape(), "input cotangent")?;
        let mut worst_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for e in 0..inputs[j].len() {
            let orig = probe[j].data()[e];
            probe[j].data_mut()[e] = orig + FD_STEP;
            let plus = objective(&probe)?;
            probe[j].data_mut()[e] = orig - FD_STEP;
            let minus = objective(&probe)?;
            probe[j].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[j].data()[e];
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        diffs.push((worst_diff, scale));
    }
    let global = diffs.iter().map(|d| d.1).fold(0.0, f64::max);
    let magnitude: f64 = outputs
        .iter()
        .zip(&cots)
        .flat_map(|(o, c)| o.data().iter().zip(c.data()).map(|(a, b)| (a * b).abs()))
        .sum();
    let noise = NOISE_FACTOR * f64::EPSILON * magnitude / FD_STEP;
    let floor = (RELATIVE_FLOOR * global).max(SCALE_FLOOR).max(noise);
    let max_rel_error = diffs.iter().map(|&(d, s)| d / s.max(floor)).collect();

    Ok(GradientReport {
        max_rel_error,
        skipped: false,
        tolerance,
    })
}
