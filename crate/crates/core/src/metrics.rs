//! Displacement errors and ordering accuracy.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    match pred.shape() {
        &[k, p, 2] => Ok((k, p)),
        s => Err(Error::dim(format!("expected [frames, players, 2], got {s:?}"))),
    }
}

fn mean_distance(pred: &Tensor, gt: &Tensor, frames: std::ops::Range<usize>, players: usize) -> f64 {
    let (p, g) = (pred.data(), gt.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for t in frames {
        for a in 0..players {
            let o = (t * players + a) * 2;
            total += (p[o] - g[o]).hypot(p[o + 1] - g[o + 1]);
            count += 1;
        }
    }
    total / count as f64
}

/// Mean Euclidean distance over all frames and players.
pub fn ade(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (k, p) = check_pair(pred, gt)?;
    Ok(mean_distance(pred, gt, 0..k, p))
}

/// Mean Euclidean distance over players at the final frame.
pub fn fde(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (k, p) = check_pair(pred, gt)?;
    Ok(mean_distance(pred, gt, k - 1..k, p))
}

pub fn validate_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Invalid(format!(
            "ordering has {} entries, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!("{order:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// Fraction of the first `k` slots holding exactly the right player.
pub fn topk_ordering_accuracy(pred_order: &[usize], true_order: &[usize], k: usize) -> Result<f64> {
    let n = true_order.len();
    validate_permutation(true_order, n)?;
    validate_permutation(pred_order, n)?;
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("top-k needs 1 <= k <= {n}, got {k}")));
    }
    let hits = pred_order[..k]
        .iter()
        .zip(&true_order[..k])
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrors {
    pub ade: f64,
    pub fde: f64,
    /// `(ade, fde)` per sequence.
    pub per_sequence: Vec<(f64, f64)>,
}

impl ForecastErrors {
    pub fn from_per_sequence(per_sequence: Vec<(f64, f64)>) -> Self {
        let n = per_sequence.len().max(1) as f64;
        let ade = per_sequence.iter().map(|p| p.0).sum::<f64>() / n;
        let fde = per_sequence.iter().map(|p| p.1).sum::<f64>() / n;
        Self { ade, fde, per_sequence }
    }
}

pub const TOPK_LEVELS: [usize; 4] = [1, 3, 5, 10];

/// One row of the evaluation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub variant: String,
    pub ordering: String,
    pub ade: f64,
    pub fde: f64,
    pub topk: [f64; 4],
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "run_id,variant,ordering,ade,fde,topk1,topk3,topk5,topk10,seed";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run_id, r.variant, r.ordering, r.ade, r.fde, r.topk[0], r.topk[1], r.topk[2], r.topk[3], r.seed
        );
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset(base: &Tensor, dx: f64, dy: f64, last_only: bool) -> Tensor {
        let k = base.shape()[0];
        let per_frame = base.len() / k;
        Tensor::from_fn(base.shape(), |i| {
            let apply = !last_only || i / per_frame == k - 1;
            base.data()[i] + if apply { if i % 2 == 0 { dx } else { dy } } else { 0.0 }
        })
    }

    #[test]
    fn displacement_examples() {
        let gt = Tensor::from_fn(&[10, 10, 2], |i| (i % 7) as f64);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);
        let shifted = offset(&gt, 3.0, 4.0, false);
        assert!((ade(&shifted, &gt).unwrap() - 5.0).abs() < 1e-12);
        assert!((fde(&shifted, &gt).unwrap() - 5.0).abs() < 1e-12);
        let end = offset(&gt, 0.0, 2.0, true);
        assert!((fde(&end, &gt).unwrap() - 2.0).abs() < 1e-12);
        assert!((ade(&end, &gt).unwrap() - 0.2).abs() < 1e-12);
        assert!(ade(&gt, &Tensor::zeros(&[10, 9, 2])).is_err());
    }

    #[test]
    fn topk_examples() {
        let id: Vec<usize> = (0..10).collect();
        assert_eq!(topk_ordering_accuracy(&id, &id, 10).unwrap(), 1.0);
        let mut swapped = id.clone();
        swapped.swap(3, 4);
        assert_eq!(topk_ordering_accuracy(&swapped, &id, 10).unwrap(), 0.8);
        let rev: Vec<usize> = (0..10).rev().collect();
        assert_eq!(topk_ordering_accuracy(&rev, &id, 10).unwrap(), 0.0);
        assert!(topk_ordering_accuracy(&[0, 0, 1], &[0, 1, 2], 3).is_err());
        assert!(topk_ordering_accuracy(&id, &id, 0).is_err());
        assert!(topk_ordering_accuracy(&id, &id, 11).is_err());
    }

    #[test]
    fn csv_layout() {
        let row = MetricsRow {
            run_id: "r".into(),
            variant: "oracle".into(),
            ordering: "ball_distance".into(),
            ade: 1.5,
            fde: 2.25,
            topk: [1.0, 1.0, 0.8, 0.7],
            seed: 3,
        };
        let csv = metrics_csv(&[row]);
        assert_eq!(csv, format!("{METRICS_HEADER}\nr,oracle,ball_distance,1.5,2.25,1,1,0.8,0.7,3\n"));
    }
}
