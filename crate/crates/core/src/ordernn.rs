//! Order network: score each player, soft-rank the scores, and softly permute
//! players into role slots (and back).
//!
//! The soft permutation is a slot-by-player matrix
//! `M[k][i] = exp(-((k - s_i) / scale)^2)` over 1-based slots `k`, optionally
//! row-normalized so that each slot is a convex combination of players.

use crate::diffcore::{DifferentiableOp, Rng, Tensor};
use crate::error::{Error, Result};
use crate::nn::Dense;
use crate::softsort::{regime_signature, soft_rank, soft_rank_backward};

/// Player features are ball-relative coordinates divided by this (meters).
pub const FEATURE_SCALE: f64 = 10.0;

/// Shared per-player MLP with tanh hidden layers and a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct ScoreCache {
    /// Input of every layer; the last entry is the final hidden activation.
    inputs: Vec<Tensor>,
}

impl ScoreNetwork {
    pub fn new(input: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self {
            layers: dims.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// `features: [players, input]` -> one score per player.
    pub fn forward(&self, features: &Tensor) -> Result<(Vec<f64>, ScoreCache)> {
        if features.ndim() != 2 || features.shape()[1] != self.input_dim() {
            return Err(Error::dim(format!(
                "score network expects [players, {}], got {:?}",
                self.input_dim(),
                features.shape()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = features.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if l + 1 < self.layers.len() { z.map(f64::tanh) } else { z };
        }
        Ok((h.into_data(), ScoreCache { inputs }))
    }

    /// Parameter gradients in [`ScoreNetwork::params`] order, plus the
    /// feature cotangent.
    pub fn backward(&self, cache: &ScoreCache, d_scores: &[f64]) -> Result<(Vec<Tensor>, Tensor)> {
        let players = cache.inputs[0].shape()[0];
        if d_scores.len() != players {
            return Err(Error::dim(format!(
                "{} score cotangents for {players} players",
                d_scores.len()
            )));
        }
        let mut grads = vec![Tensor::scalar(0.0); 2 * self.layers.len()];
        let mut dy = Tensor::new(vec![players, 1], d_scores.to_vec())?;
        for l in (0..self.layers.len()).rev() {
            let (dx, dw, db) = self.layers[l].backward(&cache.inputs[l], &dy)?;
            grads[2 * l] = dw;
            grads[2 * l + 1] = db;
            if l > 0 {
                // inputs[l] = tanh(z_{l-1})
                let a = &cache.inputs[l];
                dy = Tensor::from_fn(a.shape(), |i| dx.data()[i] * (1.0 - a.data()[i] * a.data()[i]));
            } else {
                dy = dx;
            }
        }
        Ok((grads, dy))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, d)| [(format!("scorer.l{l}.w"), &d.w), (format!("scorer.l{l}.b"), &d.b)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|d| [&mut d.w, &mut d.b]).collect()
    }
}

/// Ball-relative observed trajectory of every player, `[A-1, 2T]`.
///
/// `x_in: [T, A, 2]` with the ball as the last agent.
pub fn player_features(x_in: &Tensor) -> Result<Tensor> {
    let (t, a) = match x_in.shape() {
        &[t, a, 2] if a >= 2 => (t, a),
        s => return Err(Error::dim(format!("observed frames must be [T, A, 2], got {s:?}"))),
    };
    let players = a - 1;
    let d = x_in.data();
    Ok(Tensor::from_fn(&[players, 2 * t], |i| {
        let (p, f) = (i / (2 * t), i % (2 * t));
        let (frame, c) = (f / 2, f % 2);
        (d[(frame * a + p) * 2 + c] - d[(frame * a + players) * 2 + c]) / FEATURE_SCALE
    }))
}

/// One score per player (ball excluded).
pub fn score_players(net: &ScoreNetwork, x_in: &Tensor) -> Result<Vec<f64>> {
    Ok(net.forward(&player_features(x_in)?)?.0)
}

/// The `n × n` base matrix whose every row is `(1, ..., n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseMatrix {
    pub n: usize,
}

impl BaseMatrix {
    pub fn matrix(&self) -> Tensor {
        Tensor::from_fn(&[self.n, self.n], |i| (i % self.n + 1) as f64)
    }

    /// `Δ[k][i] = B[i][k] - s_i = (k + 1) - s_i`.
    pub fn delta(&self, ranks: &[f64]) -> Tensor {
        let b = self.matrix();
        Tensor::from_fn(&[self.n, self.n], |idx| {
            let (k, i) = (idx / self.n, idx % self.n);
            b.at(&[i, k]) - ranks[i]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation {
    /// `[slots, players]`
    pub m: Tensor,
    pub scale: f64,
    pub normalized: bool,
}

impl SoftPermutation {
    pub fn n(&self) -> usize {
        self.m.shape()[0]
    }

    /// One-hot matrix sending `order[k]` to slot `k`.
    pub fn hard(order: &[usize]) -> Self {
        let n = order.len();
        let mut m = Tensor::zeros(&[n, n]);
        for (k, &i) in order.iter().enumerate() {
            m.set(&[k, i], 1.0);
        }
        Self {
            m,
            scale: 1.0,
            normalized: true,
        }
    }
}

pub const DEFAULT_SCALE: f64 = 0.1;

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("soft permutation scale must be positive, got {scale}")));
    }
    Ok(())
}

/// Gaussian slot weights from (soft) ranks.
pub fn build_soft_permutation(ranks: &[f64], scale: f64, normalized: bool) -> Result<SoftPermutation> {
    check_scale(scale)?;
    let n = ranks.len();
    if n == 0 {
        return Err(Error::Size("no ranks to permute".into()));
    }
    let delta = BaseMatrix { n }.delta(ranks);
    let mut m = delta.map(|d| -(d / scale).powi(2));
    if normalized {
        // softmax over players, per slot
        for row in m.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    } else {
        m = m.map(f64::exp);
    }
    Ok(SoftPermutation { m, scale, normalized })
}

/// Rank cotangent given the cotangent of `perm.m`.
pub fn soft_permutation_backward(ranks: &[f64], perm: &SoftPermutation, d_m: &Tensor) -> Result<Vec<f64>> {
    let n = perm.n();
    if ranks.len() != n || d_m.shape() != [n, n] {
        return Err(Error::dim(format!(
            "soft permutation backward: {} ranks, cotangent {:?}",
            ranks.len(),
            d_m.shape()
        )));
    }
    let m = perm.m.data();
    let g = d_m.data();
    let inv_s2 = 1.0 / (perm.scale * perm.scale);
    let mut d_ranks = vec![0.0; n];
    for k in 0..n {
        let row = &m[k * n..(k + 1) * n];
        let grow = &g[k * n..(k + 1) * n];
        let centre = if perm.normalized {
            row.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>()
        } else {
            0.0
        };
        for i in 0..n {
            let d_logit = row[i] * (grow[i] - centre);
            // logit = -((k+1 - s_i)/scale)^2
            d_ranks[i] += d_logit * 2.0 * ((k + 1) as f64 - ranks[i]) * inv_s2;
        }
    }
    Ok(d_ranks)
}

fn frames_agents(x: &Tensor, n: usize, what: &str) -> Result<(usize, usize)> {
    match x.shape() {
        &[t, a, 2] if a >= n => Ok((t, a)),
        s => Err(Error::dim(format!(
            "{what}: expected [frames, agents >= {n}, 2], got {s:?}"
        ))),
    }
}

/// Moves players into slots: `x'_k = Σ_i M[k][i] x_i` per frame. Agents
/// beyond the permutation size (the ball) pass through.
pub fn reshuffle(perm: &SoftPermutation, x: &Tensor) -> Result<Tensor> {
    let n = perm.n();
    let (t, a) = frames_agents(x, n, "reshuffle")?;
    let m = perm.m.data();
    let d = x.data();
    let mut out = x.clone();
    let o = out.data_mut();
    for f in 0..t {
        let base = f * a * 2;
        for k in 0..n {
            let (mut sx, mut sy) = (0.0, 0.0);
            for i in 0..n {
                let w = m[k * n + i];
                sx += w * d[base + 2 * i];
                sy += w * d[base + 2 * i + 1];
            }
            o[base + 2 * k] = sx;
            o[base + 2 * k + 1] = sy;
        }
    }
    Ok(out)
}

/// Returns `(dM, dX)` for [`reshuffle`].
pub fn reshuffle_backward(perm: &SoftPermutation, x: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = perm.n();
    let (t, a) = frames_agents(x, n, "reshuffle backward")?;
    d_out.expect_shape(x.shape(), "reshuffle cotangent")?;
    let m = perm.m.data();
    let (d, g) = (x.data(), d_out.data());
    let mut dm = Tensor::zeros(&[n, n]);
    let mut dx = d_out.clone();
    {
        let dmv = dm.data_mut();
        let dxv = dx.data_mut();
        for f in 0..t {
            let base = f * a * 2;
            for i in 0..n {
                dxv[base + 2 * i] = 0.0;
                dxv[base + 2 * i + 1] = 0.0;
            }
            for k in 0..n {
                let (gx, gy) = (g[base + 2 * k], g[base + 2 * k + 1]);
                for i in 0..n {
                    dmv[k * n + i] += gx * d[base + 2 * i] + gy * d[base + 2 * i + 1];
                    dxv[base + 2 * i] += m[k * n + i] * gx;
                    dxv[base + 2 * i + 1] += m[k * n + i] * gy;
                }
            }
        }
    }
    Ok((dm, dx))
}

/// Returns slot-ordered predictions to player order with `Mᵀ`.
pub fn deshuffle(perm: &SoftPermutation, y: &Tensor) -> Result<Tensor> {
    let n = perm.n();
    let (t, a) = frames_agents(y, n, "deshuffle")?;
    let m = perm.m.data();
    let d = y.data();
    let mut out = y.clone();
    let o = out.data_mut();
    for f in 0..t {
        let base = f * a * 2;
        for i in 0..n {
            let (mut sx, mut sy) = (0.0, 0.0);
            for k in 0..n {
                let w = m[k * n + i];
                sx += w * d[base + 2 * k];
                sy += w * d[base + 2 * k + 1];
            }
            o[base + 2 * i] = sx;
            o[base + 2 * i + 1] = sy;
        }
    }
    Ok(out)
}

/// Returns `(dM, dY)` for [`deshuffle`].
pub fn deshuffle_backward(perm: &SoftPermutation, y: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = perm.n();
    let (t, a) = frames_agents(y, n, "deshuffle backward")?;
    d_out.expect_shape(y.shape(), "deshuffle cotangent")?;
    let m = perm.m.data();
    let (d, g) = (y.data(), d_out.data());
    let mut dm = Tensor::zeros(&[n, n]);
    let mut dy = d_out.clone();
    {
        let dmv = dm.data_mut();
        let dyv = dy.data_mut();
        for f in 0..t {
            let base = f * a * 2;
            for k in 0..n {
                let (mut sx, mut sy) = (0.0, 0.0);
                for i in 0..n {
                    let (gx, gy) = (g[base + 2 * i], g[base + 2 * i + 1]);
                    dmv[k * n + i] += gx * d[base + 2 * k] + gy * d[base + 2 * k + 1];
                    sx += m[k * n + i] * gx;
                    sy += m[k * n + i] * gy;
                }
                dyv[base + 2 * k] = sx;
                dyv[base + 2 * k + 1] = sy;
            }
        }
    }
    Ok((dm, dy))
}

/// Hard reshuffle: slot `k` receives player `order[k]`.
pub fn reshuffle_hard(order: &[usize], x: &Tensor) -> Result<Tensor> {
    let n = order.len();
    let (t, a) = frames_agents(x, n, "reshuffle")?;
    let d = x.data();
    let mut out = x.clone();
    let o = out.data_mut();
    for f in 0..t {
        let base = f * a * 2;
        for (k, &i) in order.iter().enumerate() {
            o[base + 2 * k] = d[base + 2 * i];
            o[base + 2 * k + 1] = d[base + 2 * i + 1];
        }
    }
    Ok(out)
}

/// Inverse of [`reshuffle_hard`]; it is its own adjoint's inverse, so the
/// backward pass is [`reshuffle_hard`] applied to the cotangent.
pub fn deshuffle_hard(order: &[usize], y: &Tensor) -> Result<Tensor> {
    let n = order.len();
    let (t, a) = frames_agents(y, n, "deshuffle")?;
    let d = y.data();
    let mut out = y.clone();
    let o = out.data_mut();
    for f in 0..t {
        let base = f * a * 2;
        for (k, &i) in order.iter().enumerate() {
            o[base + 2 * i] = d[base + 2 * k];
            o[base + 2 * i + 1] = d[base + 2 * k + 1];
        }
    }
    Ok(out)
}

/// `[ranks] -> [M]`.
#[derive(Debug, Clone, Copy)]
pub struct SoftPermutationOp {
    pub scale: f64,
    pub normalized: bool,
}

impl DifferentiableOp for SoftPermutationOp {
    type Context = SoftPermutation;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, SoftPermutation)> {
        let p = build_soft_permutation(inputs[0].data(), self.scale, self.normalized)?;
        Ok((vec![p.m.clone()], p))
    }

    fn backward(&self, inputs: &[Tensor], ctx: &SoftPermutation, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let d = soft_permutation_backward(inputs[0].data(), ctx, &cot[0])?;
        Ok(vec![Tensor::new(inputs[0].shape().to_vec(), d)?])
    }
}

fn perm_from(m: &Tensor) -> SoftPermutation {
    SoftPermutation {
        m: m.clone(),
        scale: 1.0,
        normalized: false,
    }
}

/// `[M, X] -> [reshuffle(M, X)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReshuffleOp;

impl DifferentiableOp for ReshuffleOp {
    type Context = ();

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, ())> {
        Ok((vec![reshuffle(&perm_from(&inputs[0]), &inputs[1])?], ()))
    }

    fn backward(&self, inputs: &[Tensor], _: &(), cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let (dm, dx) = reshuffle_backward(&perm_from(&inputs[0]), &inputs[1], &cot[0])?;
        Ok(vec![dm, dx])
    }
}

/// `[M, Y] -> [deshuffle(M, Y)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeshuffleOp;

impl DifferentiableOp for DeshuffleOp {
    type Context = ();

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, ())> {
        Ok((vec![deshuffle(&perm_from(&inputs[0]), &inputs[1])?], ()))
    }

    fn backward(&self, inputs: &[Tensor], _: &(), cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let (dm, dy) = deshuffle_backward(&perm_from(&inputs[0]), &inputs[1], &cot[0])?;
        Ok(vec![dm, dy])
    }
}

/// Score network weights -> reshuffled observed frames, through soft rank
/// and the soft permutation. Inputs are the network parameters in
/// [`ScoreNetwork::params`] order.
#[derive(Debug, Clone)]
pub struct OrderPipelineOp {
    pub template: ScoreNetwork,
    pub x_in: Tensor,
    pub epsilon: f64,
    pub scale: f64,
    pub normalized: bool,
}

pub struct OrderPipelineContext {
    score_cache: ScoreCache,
    ranks: crate::softsort::SoftRankResult,
    perm: SoftPermutation,
}

impl OrderPipelineOp {
    fn network(&self, params: &[Tensor]) -> Result<ScoreNetwork> {
        let mut net = self.template.clone();
        let slots = net.params_mut();
        if slots.len() != params.len() {
            return Err(Error::dim(format!("{} parameters for {} slots", params.len(), slots.len())));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            p.expect_shape(slot.shape(), "score network parameter")?;
            *slot = p.clone();
        }
        Ok(net)
    }
}

impl DifferentiableOp for OrderPipelineOp {
    type Context = OrderPipelineContext;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, OrderPipelineContext)> {
        let net = self.network(inputs)?;
        let (scores, score_cache) = net.forward(&player_features(&self.x_in)?)?;
        let ranks = soft_rank(&scores, self.epsilon)?;
        let perm = build_soft_permutation(&ranks.ranks, self.scale, self.normalized)?;
        let out = reshuffle(&perm, &self.x_in)?;
        Ok((vec![out], OrderPipelineContext { score_cache, ranks, perm }))
    }

    fn backward(&self, inputs: &[Tensor], ctx: &OrderPipelineContext, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let net = self.network(inputs)?;
        let (dm, _) = reshuffle_backward(&ctx.perm, &self.x_in, &cot[0])?;
        let d_ranks = soft_permutation_backward(&ctx.ranks.ranks, &ctx.perm, &dm)?;
        let d_scores = soft_rank_backward(&ctx.ranks, &d_ranks)?;
        Ok(net.backward(&ctx.score_cache, &d_scores)?.0)
    }

    fn regime(&self, inputs: &[Tensor]) -> Result<Vec<usize>> {
        let net = self.network(inputs)?;
        let scores = score_players(&net, &self.x_in)?;
        Ok(regime_signature(&soft_rank(&scores, self.epsilon)?))
    }
}
