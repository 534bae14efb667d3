//! Independent reference implementations used only by tests.
#![allow(dead_code)]

/// Exhaustive decreasing isotonic regression: every composition of `0..n`
/// into contiguous blocks, keep those whose block means are non-increasing,
/// return the cheapest.
pub fn isotonic_oracle(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // bit i set = a block boundary after position i
    for mask in 0u32..(1 << (n - 1)) {
        let mut values = vec![0.0; n];
        let mut means = Vec::new();
        let mut start = 0;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let mean = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                values[start..end].fill(mean);
                means.push(mean);
                start = end;
            }
        }
        if means.windows(2).any(|w| w[0] < w[1]) {
            continue;
        }
        let cost: f64 = y.iter().zip(&values).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, values));
        }
    }
    best.expect("the all-pooled partition is always feasible").1
}

/// Projection onto the permutahedron of `w` through the sorted reduction,
/// with the isotonic step solved by [`isotonic_oracle`].
pub fn projection_oracle(z: &[f64], w: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    let shifted: Vec<f64> = idx.iter().zip(w).map(|(&i, &a)| z[i] - a).collect();
    let iso = isotonic_oracle(&shifted);
    let mut p = vec![0.0; z.len()];
    for (j, &i) in idx.iter().enumerate() {
        p[i] = z[i] - iso[j];
    }
    p
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Majorization test: `p` lies in conv{w_σ} iff its decreasing partial sums
/// are bounded by those of `w` and the totals agree.
pub fn in_permutahedron(p: &[f64], w: &[f64], tol: f64) -> bool {
    let mut a = p.to_vec();
    a.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let mut b = w.to_vec();
    b.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let (mut sa, mut sb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sa += x;
        sb += y;
        if sa > sb + tol {
            return false;
        }
    }
    (sa - sb).abs() <= tol
}

/// `max_v <z - p, v - p>` over the vertices `v`; a point of the hull is the
/// projection iff this is `<= 0`.
pub fn projection_gap(z: &[f64], p: &[f64], w: &[f64]) -> f64 {
    permutations(w.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &s)| (z[i] - p[i]) * (w[s] - p[i]))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Hard ascending ranks (1 = smallest), by counting.
pub fn hard_ranks(theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .map(|t| 1.0 + theta.iter().filter(|u| *u < t).count() as f64)
        .collect()
}

/// Mean Euclidean error over the frames in `frames`, by explicit loops over
/// a `[K][P][2]` nested layout.
pub fn displacement_loop(pred: &[f64], gt: &[f64], k: usize, p: usize, frames: std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for f in frames {
        for a in 0..p {
            let i = (f * p + a) * 2;
            let dx = pred[i] - gt[i];
            let dy = pred[i + 1] - gt[i + 1];
            sum += (dx * dx + dy * dy).sqrt();
            count += 1.0;
        }
    }
    assert!(k > 0);
    sum / count
}
