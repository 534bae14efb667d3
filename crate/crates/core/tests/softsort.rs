mod common;

use common::oracles::{
    hard_ranks, in_permutahedron, isotonic_oracle, projection_gap, projection_oracle,
};
use proptest::prelude::*;
use rolfor_core::diffcore::Rng;
use rolfor_core::softsort::{
    isotonic_decreasing, project_permutahedron, soft_rank, soft_rank_backward, Permutahedron,
};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn isotonic_matches_block_partition_oracle() {
    let mut rng = Rng::new(1);
    for _ in 0..1000 {
        let n = 2 + rng.index(5);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let got = isotonic_decreasing(&y).unwrap();
        assert!(max_abs_diff(&got.values, &isotonic_oracle(&y)) < 1e-10, "{y:?}");
    }
}

#[test]
fn projection_matches_oracles() {
    let mut rng = Rng::new(2);
    for _ in 0..1000 {
        let n = 2 + rng.index(5);
        let w = Permutahedron::standard(n);
        let z: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0) * n as f64).collect();
        let p = project_permutahedron(&z, &w).unwrap();
        assert!(max_abs_diff(&p, &projection_oracle(&z, w.anchor())) < 1e-10);
        assert!(in_permutahedron(&p, w.anchor(), 1e-9));
        assert!(projection_gap(&z, &p, w.anchor()) < 1e-9);
    }
}

#[test]
fn projection_examples() {
    let w = Permutahedron::standard(3);
    assert_eq!(project_permutahedron(&[1.0, 3.0, 2.0], &w).unwrap(), vec![1.0, 3.0, 2.0]);
    assert_eq!(project_permutahedron(&[0.0, 0.0, 0.0], &w).unwrap(), vec![2.0, 2.0, 2.0]);
}

#[test]
fn soft_rank_limits() {
    let mut rng = Rng::new(3);
    for _ in 0..1000 {
        let n = 2 + rng.index(10);
        let theta: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let hard = soft_rank(&theta, 1e-6).unwrap();
        let rounded: Vec<f64> = hard.ranks.iter().map(|r| r.round()).collect();
        assert_eq!(rounded, hard_ranks(&theta));
        let soft = soft_rank(&theta, 1e6).unwrap();
        let centre = (n as f64 + 1.0) / 2.0;
        assert!(soft.ranks.iter().all(|r| (r - centre).abs() < 1e-3));
    }
}

/// Dense Jacobian by central differences.
fn fd_jacobian(theta: &[f64], eps: f64) -> Vec<f64> {
    let n = theta.len();
    let h = 1e-6 * eps.max(1.0);
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut a = theta.to_vec();
        let mut b = theta.to_vec();
        a[j] += h;
        b[j] -= h;
        let ra = soft_rank(&a, eps).unwrap().ranks;
        let rb = soft_rank(&b, eps).unwrap().ranks;
        for i in 0..n {
            jac[i * n + j] = (ra[i] - rb[i]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn backward_matches_fd_jacobian() {
    let mut rng = Rng::new(4);
    for _ in 0..50 {
        let n = 2 + rng.index(8);
        let theta: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let r = soft_rank(&theta, 0.3).unwrap();
        let jac = r.jacobian();
        assert!(max_abs_diff(jac.data(), &fd_jacobian(&theta, 0.3)) < 1e-5);
    }
}

#[test]
fn backward_block_structure() {
    // hard limit: every block a singleton, ranks locally constant
    let r = soft_rank(&[0.1, 0.9, 0.5], 1e-6).unwrap();
    assert!(r.blocks.iter().all(|b| b.len() == 1));
    assert_eq!(soft_rank_backward(&r, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    // fully pooled: cotangent minus its mean, over ε
    let r = soft_rank(&[0.1, 0.9, 0.5], 1e3).unwrap();
    assert_eq!(r.blocks.len(), 1);
    let g = soft_rank_backward(&r, &[1.0, 2.0, 6.0]).unwrap();
    for (a, b) in g.iter().zip([-2.0, -1.0, 3.0]) {
        assert!((a - b / 1e3).abs() < 1e-15);
    }
    assert!(soft_rank_backward(&r, &[1.0]).is_err());
}

#[test]
fn jacobian_vanishes_for_large_epsilon() {
    let mut rng = Rng::new(5);
    for _ in 0..20 {
        // scores spread enough that ε=1 keeps some pooling
        let theta: Vec<f64> = (0..11).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let small = soft_rank(&theta, 1.0).unwrap().jacobian().norm();
        let large = soft_rank(&theta, 1e4).unwrap().jacobian().norm();
        assert!(large < 1e-2 * small, "{large} vs {small}");
    }
}

#[test]
fn domain_errors() {
    assert!(soft_rank(&[1.0], 0.0).is_err());
    assert!(soft_rank(&[1.0], -1.0).is_err());
    assert!(soft_rank(&[], 1.0).is_err());
    assert!(isotonic_decreasing(&[]).is_err());
}

proptest! {
    #[test]
    fn isotonic_invariants(y in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let s = isotonic_decreasing(&y).unwrap();
        prop_assert!(s.values.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let mut next = 0;
        for b in &s.blocks {
            prop_assert_eq!(b.start, next);
            next = b.end;
            let mean = y[b.clone()].iter().sum::<f64>() / b.len() as f64;
            prop_assert!(s.values[b.clone()].iter().all(|v| (v - mean).abs() < 1e-9));
        }
        prop_assert_eq!(next, y.len());
    }

    #[test]
    fn soft_rank_invariants(theta in prop::collection::vec(-5.0f64..5.0, 1..20), eps in 0.01f64..100.0, c in -10.0f64..10.0) {
        let n = theta.len() as f64;
        let r = soft_rank(&theta, eps).unwrap();
        prop_assert!((r.ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        prop_assert!(r.ranks.iter().all(|&v| v >= 1.0 - 1e-9 && v <= n + 1e-9));
        let shifted: Vec<f64> = theta.iter().map(|t| t + c).collect();
        let s = soft_rank(&shifted, eps).unwrap();
        prop_assert!(max_abs_diff(&r.ranks, &s.ranks) < 1e-9);
    }

    #[test]
    fn projection_idempotent(z in prop::collection::vec(-20.0f64..20.0, 1..15)) {
        let w = Permutahedron::standard(z.len());
        let p = project_permutahedron(&z, &w).unwrap();
        let q = project_permutahedron(&p, &w).unwrap();
        prop_assert!(max_abs_diff(&p, &q) < 1e-10);
    }
}
