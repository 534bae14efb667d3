//! Soft ranking as a Euclidean projection onto the permutahedron.
//!
//! The projection of `z` onto the convex hull of all permutations of a
//! strictly decreasing anchor `w` reduces to a decreasing isotonic regression
//! of `sort_desc(z) - w`, which pool-adjacent-violators solves exactly. The
//! resulting block structure gives the Jacobian in closed form: inside each
//! pooled block of size `m` the isotonic fit averages, so the projection's
//! Jacobian in sorted coordinates is `I - blockdiag(11ᵀ / m)`.

use std::ops::Range;

use crate::diffcore::{DifferentiableOp, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicSolution {
    pub values: Vec<f64>,
    /// Contiguous index ranges sharing one value, in order.
    pub blocks: Vec<Range<usize>>,
}

/// Least-squares fit of `y` by a non-increasing sequence, via
/// pool-adjacent-violators.
pub fn isotonic_decreasing(y: &[f64]) -> Result<IsotonicSolution> {
    if y.is_empty() {
        return Err(Error::Size("isotonic regression of an empty vector".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("isotonic regression input must be finite".into()));
    }
    // (start, len, sum) per block
    let mut stack: Vec<(usize, usize, f64)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        let mut cur = (i, 1usize, v);
        while let Some(&(start, len, sum)) = stack.last() {
            // violation: previous block lies strictly below the current one
            if sum / (len as f64) < cur.2 / (cur.1 as f64) {
                stack.pop();
                cur = (start, len + cur.1, sum + cur.2);
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    let mut values = vec![0.0; y.len()];
    let mut blocks = Vec::with_capacity(stack.len());
    for (start, len, sum) in stack {
        let mean = sum / len as f64;
        values[start..start + len].fill(mean);
        blocks.push(start..start + len);
    }
    Ok(IsotonicSolution { values, blocks })
}

/// Permutahedron generated by a strictly decreasing anchor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutahedron {
    anchor: Vec<f64>,
}

impl Permutahedron {
    /// The standard anchor `(n, n-1, ..., 1)`.
    pub fn standard(n: usize) -> Self {
        Self {
            anchor: (1..=n).rev().map(|v| v as f64).collect(),
        }
    }

    pub fn with_anchor(anchor: Vec<f64>) -> Result<Self> {
        if anchor.is_empty() {
            return Err(Error::Size("empty permutahedron anchor".into()));
        }
        if anchor.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Domain("permutahedron anchor must be strictly decreasing".into()));
        }
        Ok(Self { anchor })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }
}

/// Projection plus the structure needed to differentiate it.
#[derive(Debug, Clone)]
struct Projection {
    point: Vec<f64>,
    /// `sort_permutation[j]` = original index of the j-th largest input.
    sort_permutation: Vec<usize>,
    blocks: Vec<Range<usize>>,
}

fn descending_order(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    // stable: ties keep original index order
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    idx
}

fn project(z: &[f64], w: &Permutahedron) -> Result<Projection> {
    if z.len() != w.dim() {
        return Err(Error::dim(format!(
            "projection of a length-{} vector onto a {}-permutahedron",
            z.len(),
            w.dim()
        )));
    }
    let order = descending_order(z);
    let shifted: Vec<f64> = order.iter().zip(w.anchor()).map(|(&i, &a)| z[i] - a).collect();
    let iso = isotonic_decreasing(&shifted)?;
    let mut point = vec![0.0; z.len()];
    for (j, &i) in order.iter().enumerate() {
        point[i] = z[i] - iso.values[j];
    }
    Ok(Projection {
        point,
        sort_permutation: order,
        blocks: iso.blocks,
    })
}

/// Euclidean projection of `z` onto `conv{ w_σ : σ permutation }`.
pub fn project_permutahedron(z: &[f64], w: &Permutahedron) -> Result<Vec<f64>> {
    Ok(project(z, w)?.point)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftRankResult {
    /// Ascending soft ranks in `[1, n]`: rank 1 goes to the smallest score.
    pub ranks: Vec<f64>,
    pub epsilon: f64,
    pub sort_permutation: Vec<usize>,
    /// Isotonic blocks, in sorted coordinates.
    pub blocks: Vec<Range<usize>>,
}

impl SoftRankResult {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Fraction of coordinates sitting in blocks of size > 1.
    pub fn pooled_fraction(&self) -> f64 {
        let pooled: usize = self.blocks.iter().filter(|b| b.len() > 1).map(|b| b.len()).sum();
        pooled as f64 / self.ranks.len() as f64
    }

    /// Player order implied by the ranks: slot k holds the player of the
    /// (k+1)-th smallest rank, ties by index.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ranks.len()).collect();
        idx.sort_by(|&a, &b| self.ranks[a].total_cmp(&self.ranks[b]).then(a.cmp(&b)));
        idx
    }

    /// Dense Jacobian `d ranks / d theta`, row-major `n × n`.
    pub fn jacobian(&self) -> Tensor {
        let n = self.ranks.len();
        let mut jac = Tensor::zeros(&[n, n]);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let col = soft_rank_backward(self, &e).expect("dimensions match");
            for (i, v) in col.into_iter().enumerate() {
                // backward gives row k of Jᵀ, i.e. column k of J (J is symmetric)
                jac.set(&[i, k], v);
            }
        }
        jac
    }
}

/// ε-regularized ascending soft rank of `theta`.
pub fn soft_rank(theta: &[f64], epsilon: f64) -> Result<SoftRankResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("soft rank epsilon must be positive, got {epsilon}")));
    }
    if theta.is_empty() {
        return Err(Error::Size("soft rank of an empty vector".into()));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("soft rank input must be finite".into()));
    }
    // Projecting +theta/ε onto the permutahedron of (n..1) gives the largest
    // score rank n, i.e. ascending ranks.
    let z: Vec<f64> = theta.iter().map(|t| t / epsilon).collect();
    let proj = project(&z, &Permutahedron::standard(theta.len()))?;
    Ok(SoftRankResult {
        ranks: proj.point,
        epsilon,
        sort_permutation: proj.sort_permutation,
        blocks: proj.blocks,
    })
}

/// Exact vector-Jacobian product of [`soft_rank`].
///
/// The Jacobian is `(1/ε) (I - Π B Πᵀ)` where `B` averages within each
/// isotonic block in sorted coordinates; it is symmetric, so the VJP applies
/// the same map.
pub fn soft_rank_backward(result: &SoftRankResult, cotangent: &[f64]) -> Result<Vec<f64>> {
    let n = result.ranks.len();
    if cotangent.len() != n {
        return Err(Error::dim(format!(
            "soft rank cotangent has length {}, ranks have {n}",
            cotangent.len()
        )));
    }
    let inv_eps = 1.0 / result.epsilon;
    let mut grad: Vec<f64> = cotangent.iter().map(|g| g * inv_eps).collect();
    for block in &result.blocks {
        let idx = &result.sort_permutation[block.clone()];
        let mean = idx.iter().map(|&i| cotangent[i]).sum::<f64>() / idx.len() as f64;
        for &i in idx {
            grad[i] -= mean * inv_eps;
        }
    }
    Ok(grad)
}

/// `[theta] -> [ranks]` as a [`DifferentiableOp`].
#[derive(Debug, Clone, Copy)]
pub struct SoftRankOp {
    pub epsilon: f64,
}

impl DifferentiableOp for SoftRankOp {
    type Context = SoftRankResult;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, SoftRankResult)> {
        let r = soft_rank(inputs[0].data(), self.epsilon)?;
        let out = Tensor::new(inputs[0].shape().to_vec(), r.ranks.clone())?;
        Ok((vec![out], r))
    }

    fn backward(&self, _: &[Tensor], ctx: &SoftRankResult, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let g = soft_rank_backward(ctx, cot[0].data())?;
        Ok(vec![Tensor::new(cot[0].shape().to_vec(), g)?])
    }

    fn regime(&self, inputs: &[Tensor]) -> Result<Vec<usize>> {
        let r = soft_rank(inputs[0].data(), self.epsilon)?;
        Ok(regime_signature(&r))
    }
}

/// Sort order followed by block start offsets.
pub(crate) fn regime_signature(r: &SoftRankResult) -> Vec<usize> {
    let mut sig = r.sort_permutation.clone();
    sig.extend(r.blocks.iter().map(|b| b.start));
    sig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_examples() {
        let s = isotonic_decreasing(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.values, vec![3.0, 1.5, 1.5]);
        assert_eq!(s.blocks, vec![0..1, 1..3]);

        let s = isotonic_decreasing(&[5.0, 4.0, 3.0]).unwrap();
        assert_eq!(s.values, vec![5.0, 4.0, 3.0]);
        assert_eq!(s.blocks.len(), 3);

        let s = isotonic_decreasing(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.values, vec![2.0, 2.0, 2.0]);
        assert_eq!(s.blocks, vec![0..3]);

        assert!(matches!(isotonic_decreasing(&[]), Err(Error::Size(_))));
    }

    #[test]
    fn projection_fixed_points_and_centroid() {
        let w = Permutahedron::standard(3);
        assert_eq!(project_permutahedron(&[1.0, 3.0, 2.0], &w).unwrap(), vec![1.0, 3.0, 2.0]);
        assert_eq!(project_permutahedron(&[0.0, 0.0, 0.0], &w).unwrap(), vec![2.0, 2.0, 2.0]);
        assert!(project_permutahedron(&[0.0, 0.0], &w).is_err());
        assert!(Permutahedron::with_anchor(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn soft_rank_limits() {
        let theta = [0.1, 0.9, 0.5];
        let hard = soft_rank(&theta, 1e-6).unwrap();
        for (r, e) in hard.ranks.iter().zip([1.0, 3.0, 2.0]) {
            assert!((r - e).abs() < 1e-4);
        }
        let flat = soft_rank(&theta, 1e6).unwrap();
        for r in &flat.ranks {
            assert!((r - 2.0).abs() < 1e-3);
        }
        assert!(matches!(soft_rank(&theta, 0.0), Err(Error::Domain(_))));
        assert!(matches!(soft_rank(&theta, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tied_scores_share_a_rank() {
        let r = soft_rank(&[0.3, 0.3, 0.9], 1e-3).unwrap();
        assert_eq!(r.ranks[0], r.ranks[1]);
        assert!((r.ranks[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn backward_singletons_is_zero() {
        // hard ranks are locally constant
        let r = soft_rank(&[0.1, 0.9, 0.5], 1e-6).unwrap();
        assert!(r.blocks.iter().all(|b| b.len() == 1));
        let g = soft_rank_backward(&r, &[1.0, -2.0, 0.5]).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn backward_full_block_centers_cotangent() {
        let eps = 1e6;
        let r = soft_rank(&[0.1, 0.9, 0.5], eps).unwrap();
        assert_eq!(r.blocks, vec![0..3]);
        let cot = [1.0, 2.0, 6.0];
        let g = soft_rank_backward(&r, &cot).unwrap();
        for (gi, ci) in g.iter().zip(cot) {
            assert!((gi - (ci - 3.0) / eps).abs() < 1e-18);
        }
        assert!(soft_rank_backward(&r, &[1.0]).is_err());
    }

    #[test]
    fn order_matches_ranks() {
        let r = soft_rank(&[0.7, -1.0, 0.2, 3.0], 1e-3).unwrap();
        assert_eq!(r.order(), vec![1, 2, 0, 3]);
    }
}
