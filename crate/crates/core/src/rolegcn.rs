//! Factorized spatio-temporal graph convolution over role slots.
//!
//! Features are laid out `[C, R, T]` (channels, roles, frames). A layer mixes
//! frames within each role with `A_t: [R, T, T]`, then roles within each frame
//! with `A_s: [T, R, R]`, then channels with `W: [C_in, C_out]`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DifferentiableOp, Rng, Tensor};
use crate::error::{Error, Result};

/// Adjacency parameterization, numbered 1 to 8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyConfig {
    pub variant: u8,
    /// Initial diagonal weight for variants 4 to 6.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Initial off-diagonal weight for variant 6.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        Self::variant(3)
    }
}

impl AdjacencyConfig {
    pub const VARIANTS: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

    pub fn variant(variant: u8) -> Self {
        Self {
            variant,
            alpha: None,
            beta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.variant) {
            return Err(Error::Config(format!(
                "adjacency variant must be in 1..=8, got {}",
                self.variant
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::Config(format!("adjacency {name} must be finite")));
                }
            }
        }
        Ok(())
    }

    /// Variant 8 stacks one more hidden layer.
    pub fn extra_layers(&self) -> usize {
        usize::from(self.variant == 8)
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.variant, 1 | 2)
    }
}

/// One adjacency factor: `blocks` independent `n × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjFactor {
    Frozen(Tensor),
    Full(Tensor),
    /// `α I`
    Diagonal { blocks: usize, n: usize, alpha: Tensor },
    /// `α` on the diagonal, `1 - α` elsewhere.
    Complement { blocks: usize, n: usize, alpha: Tensor },
    /// `α` on the diagonal, `β` elsewhere.
    DiagOffDiag {
        blocks: usize,
        n: usize,
        alpha: Tensor,
        beta: Tensor,
    },
}

fn tied(blocks: usize, n: usize, diag: f64, off: f64) -> Tensor {
    Tensor::from_fn(&[blocks, n, n], |i| {
        let (r, c) = ((i / n) % n, i % n);
        if r == c {
            diag
        } else {
            off
        }
    })
}

impl AdjFactor {
    fn build(config: &AdjacencyConfig, blocks: usize, n: usize, rng: &mut Rng) -> Self {
        let alpha = || Tensor::scalar(config.alpha.unwrap_or(1.0)).reshape(&[1]).expect("scalar");
        let bound = 1.0 / (n as f64).sqrt();
        match config.variant {
            1 => AdjFactor::Frozen(Tensor::full(&[blocks, n, n], 1.0)),
            2 => AdjFactor::Frozen(tied(blocks, n, 1.0, 0.0)),
            4 => AdjFactor::Diagonal { blocks, n, alpha: alpha() },
            5 => AdjFactor::Complement {
                blocks,
                n,
                alpha: Tensor::new(vec![1], vec![config.alpha.unwrap_or(0.5)]).expect("scalar"),
            },
            6 => AdjFactor::DiagOffDiag {
                blocks,
                n,
                alpha: alpha(),
                beta: Tensor::new(vec![1], vec![config.beta.unwrap_or(0.0)]).expect("scalar"),
            },
            7 => AdjFactor::Full(Tensor::from_fn(&[blocks, n, n], |_| rng.normal(0.0, bound))),
            _ => AdjFactor::Full(Tensor::from_fn(&[blocks, n, n], |_| rng.uniform(-bound, bound))),
        }
    }

    /// Dense `[blocks, n, n]` matrix.
    pub fn dense(&self) -> Tensor {
        match self {
            AdjFactor::Frozen(a) | AdjFactor::Full(a) => a.clone(),
            AdjFactor::Diagonal { blocks, n, alpha } => tied(*blocks, *n, alpha.data()[0], 0.0),
            AdjFactor::Complement { blocks, n, alpha } => {
                let a = alpha.data()[0];
                tied(*blocks, *n, a, 1.0 - a)
            }
            AdjFactor::DiagOffDiag { blocks, n, alpha, beta } => {
                tied(*blocks, *n, alpha.data()[0], beta.data()[0])
            }
        }
    }

    fn diag_off_sums(d_dense: &Tensor, n: usize) -> (f64, f64) {
        let (mut diag, mut off) = (0.0, 0.0);
        for (i, g) in d_dense.data().iter().enumerate() {
            if (i / n) % n == i % n {
                diag += g;
            } else {
                off += g;
            }
        }
        (diag, off)
    }

    /// Reduces a dense-matrix gradient to the learnable parameters.
    pub fn param_grads(&self, d_dense: &Tensor) -> Vec<Tensor> {
        let one = |v: f64| Tensor::new(vec![1], vec![v]).expect("scalar");
        match self {
            AdjFactor::Frozen(_) => vec![],
            AdjFactor::Full(_) => vec![d_dense.clone()],
            AdjFactor::Diagonal { n, .. } => vec![one(Self::diag_off_sums(d_dense, *n).0)],
            AdjFactor::Complement { n, .. } => {
                let (d, o) = Self::diag_off_sums(d_dense, *n);
                vec![one(d - o)]
            }
            AdjFactor::DiagOffDiag { n, .. } => {
                let (d, o) = Self::diag_off_sums(d_dense, *n);
                vec![one(d), one(o)]
            }
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            AdjFactor::Frozen(_) => vec![],
            AdjFactor::Full(a) => vec![("a", a)],
            AdjFactor::Diagonal { alpha, .. } | AdjFactor::Complement { alpha, .. } => vec![("alpha", alpha)],
            AdjFactor::DiagOffDiag { alpha, beta, .. } => vec![("alpha", alpha), ("beta", beta)],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            AdjFactor::Frozen(_) => vec![],
            AdjFactor::Full(a) => vec![a],
            AdjFactor::Diagonal { alpha, .. } | AdjFactor::Complement { alpha, .. } => vec![alpha],
            AdjFactor::DiagOffDiag { alpha, beta, .. } => vec![alpha, beta],
        }
    }

    pub fn learnable_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Spatial `[T, R, R]` and temporal `[R, T, T]` adjacency of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyPair {
    pub config: AdjacencyConfig,
    pub spatial: AdjFactor,
    pub temporal: AdjFactor,
}

impl AdjacencyPair {
    pub fn learnable_count(&self) -> usize {
        self.spatial.learnable_count() + self.temporal.learnable_count()
    }
}

pub fn build_adjacency(config: &AdjacencyConfig, roles: usize, frames: usize, rng: &mut Rng) -> Result<AdjacencyPair> {
    config.validate()?;
    if roles == 0 || frames == 0 {
        return Err(Error::Size("adjacency needs at least one role and one frame".into()));
    }
    Ok(AdjacencyPair {
        config: *config,
        spatial: AdjFactor::build(config, frames, roles, rng),
        temporal: AdjFactor::build(config, roles, frames, rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    h: Tensor,
    u: Tensor,
    v: Tensor,
    out: Tensor,
    a_s: Tensor,
    a_t: Tensor,
}

/// Dense layer gradients.
#[derive(Debug, Clone)]
pub struct GcnGrads {
    pub d_h: Tensor,
    pub d_a_s: Tensor,
    pub d_a_t: Tensor,
    pub d_w: Tensor,
}

fn gcn_dims(h: &Tensor, a_s: &Tensor, a_t: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c, r, t) = match h.shape() {
        &[c, r, t] => (c, r, t),
        s => return Err(Error::dim(format!("gcn input must be [C, R, T], got {s:?}"))),
    };
    a_s.expect_shape(&[t, r, r], "spatial adjacency")?;
    a_t.expect_shape(&[r, t, t], "temporal adjacency")?;
    if w.ndim() != 2 || w.shape()[0] != c {
        return Err(Error::dim(format!(
            "gcn weight {:?} does not match {c} input channels",
            w.shape()
        )));
    }
    Ok((c, r, t, w.shape()[1]))
}

/// Forward pass with explicit dense adjacency.
pub fn gcn_apply(h: &Tensor, a_s: &Tensor, a_t: &Tensor, w: &Tensor, act: Activation) -> Result<(Tensor, GcnCache)> {
    let (c, r, t, o) = gcn_dims(h, a_s, a_t, w)?;
    let (hd, sd, td, wd) = (h.data(), a_s.data(), a_t.data(), w.data());
    let mut u = vec![0.0; c * r * t];
    for ch in 0..c {
        for role in 0..r {
            let hrow = &hd[(ch * r + role) * t..][..t];
            for f in 0..t {
                let arow = &td[(role * t + f) * t..][..t];
                u[(ch * r + role) * t + f] = arow.iter().zip(hrow).map(|(a, b)| a * b).sum();
            }
        }
    }
    let mut v = vec![0.0; c * r * t];
    for ch in 0..c {
        for f in 0..t {
            for role in 0..r {
                let arow = &sd[(f * r + role) * r..][..r];
                let mut s = 0.0;
                for (q, a) in arow.iter().enumerate() {
                    s += a * u[(ch * r + q) * t + f];
                }
                v[(ch * r + role) * t + f] = s;
            }
        }
    }
    let rt = r * t;
    let mut z = vec![0.0; o * rt];
    for ch in 0..c {
        let vrow = &v[ch * rt..][..rt];
        for oc in 0..o {
            let wv = wd[ch * o + oc];
            if wv == 0.0 {
                continue;
            }
            for (zz, vv) in z[oc * rt..][..rt].iter_mut().zip(vrow) {
                *zz += wv * vv;
            }
        }
    }
    if act == Activation::Tanh {
        for x in z.iter_mut() {
            *x = x.tanh();
        }
    }
    let out = Tensor::new(vec![o, r, t], z)?;
    let cache = GcnCache {
        h: h.clone(),
        u: Tensor::new(vec![c, r, t], u)?,
        v: Tensor::new(vec![c, r, t], v)?,
        out: out.clone(),
        a_s: a_s.clone(),
        a_t: a_t.clone(),
    };
    Ok((out, cache))
}

pub fn gcn_apply_backward(cache: &GcnCache, w: &Tensor, act: Activation, d_out: &Tensor) -> Result<GcnGrads> {
    let (c, r, t, o) = gcn_dims(&cache.h, &cache.a_s, &cache.a_t, w)?;
    d_out.expect_shape(&[o, r, t], "gcn cotangent")?;
    let rt = r * t;
    let dz: Vec<f64> = match act {
        Activation::Tanh => d_out
            .data()
            .iter()
            .zip(cache.out.data())
            .map(|(g, y)| g * (1.0 - y * y))
            .collect(),
        Activation::Identity => d_out.data().to_vec(),
    };
    let (vd, ud, hd, sd, td, wd) = (
        cache.v.data(),
        cache.u.data(),
        cache.h.data(),
        cache.a_s.data(),
        cache.a_t.data(),
        w.data(),
    );
    let mut dw = vec![0.0; c * o];
    let mut dv = vec![0.0; c * rt];
    for ch in 0..c {
        let vrow = &vd[ch * rt..][..rt];
        for oc in 0..o {
            let zrow = &dz[oc * rt..][..rt];
            dw[ch * o + oc] = vrow.iter().zip(zrow).map(|(a, b)| a * b).sum();
            let wv = wd[ch * o + oc];
            for (g, zz) in dv[ch * rt..][..rt].iter_mut().zip(zrow) {
                *g += wv * zz;
            }
        }
    }
    // v[c,r,f] = Σ_q A_s[f,r,q] u[c,q,f]
    let mut du = vec![0.0; c * rt];
    let mut d_as = vec![0.0; t * r * r];
    for ch in 0..c {
        for f in 0..t {
            for role in 0..r {
                let g = dv[(ch * r + role) * t + f];
                if g == 0.0 {
                    continue;
                }
                for q in 0..r {
                    d_as[(f * r + role) * r + q] += g * ud[(ch * r + q) * t + f];
                    du[(ch * r + q) * t + f] += g * sd[(f * r + role) * r + q];
                }
            }
        }
    }
    // u[c,r,f] = Σ_s A_t[r,f,s] h[c,r,s]
    let mut dh = vec![0.0; c * rt];
    let mut d_at = vec![0.0; r * t * t];
    for ch in 0..c {
        for role in 0..r {
            let hrow = &hd[(ch * r + role) * t..][..t];
            for f in 0..t {
                let g = du[(ch * r + role) * t + f];
                if g == 0.0 {
                    continue;
                }
                let arow = &td[(role * t + f) * t..][..t];
                let darow = &mut d_at[(role * t + f) * t..][..t];
                for s in 0..t {
                    darow[s] += g * hrow[s];
                    dh[(ch * r + role) * t + s] += g * arow[s];
                }
            }
        }
    }
    Ok(GcnGrads {
        d_h: Tensor::new(vec![c, r, t], dh)?,
        d_a_s: Tensor::new(vec![t, r, r], d_as)?,
        d_a_t: Tensor::new(vec![r, t, t], d_at)?,
        d_w: Tensor::new(vec![c, o], dw)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub adjacency: AdjacencyPair,
    /// `[C_in, C_out]`
    pub w: Tensor,
    pub activation: Activation,
}

/// Layer parameter gradients in [`GcnLayer::params`] order, and the input
/// cotangent.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub params: Vec<Tensor>,
    pub d_input: Tensor,
}

impl GcnLayer {
    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, GcnCache)> {
        gcn_apply(
            h,
            &self.adjacency.spatial.dense(),
            &self.adjacency.temporal.dense(),
            &self.w,
            self.activation,
        )
    }

    pub fn backward(&self, cache: &GcnCache, d_out: &Tensor) -> Result<LayerGrads> {
        let g = gcn_apply_backward(cache, &self.w, self.activation, d_out)?;
        let mut params = self.adjacency.spatial.param_grads(&g.d_a_s);
        params.extend(self.adjacency.temporal.param_grads(&g.d_a_t));
        params.push(g.d_w);
        Ok(LayerGrads { params, d_input: g.d_h })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (name, t) in self.adjacency.spatial.params() {
            out.push((format!("spatial.{name}"), t));
        }
        for (name, t) in self.adjacency.temporal.params() {
            out.push((format!("temporal.{name}"), t));
        }
        out.push(("w".to_string(), &self.w));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.adjacency.spatial.params_mut();
        out.extend(self.adjacency.temporal.params_mut());
        out.push(&mut self.w);
        out
    }
}

/// Stack of GCN layers; hidden layers use tanh, the last is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleGcn {
    pub layers: Vec<GcnLayer>,
}

impl RoleGcn {
    /// `channels` lists the widths after the input, e.g. `[32, 64]`.
    /// Variant 8 repeats the first hidden width once more.
    pub fn new(
        config: &AdjacencyConfig,
        in_channels: usize,
        channels: &[usize],
        roles: usize,
        frames: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config("gcn channel widths must be non-empty and positive".into()));
        }
        let mut widths = vec![in_channels];
        if config.extra_layers() > 0 {
            widths.push(channels[0]);
        }
        widths.extend_from_slice(channels);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (l, pair) in widths.windows(2).enumerate() {
            let adjacency = build_adjacency(config, roles, frames, rng)?;
            let bound = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            let w = Tensor::from_fn(&[pair[0], pair[1]], |_| rng.uniform(-bound, bound));
            let activation = if l + 1 < n {
                Activation::Tanh
            } else {
                Activation::Identity
            };
            layers.push(GcnLayer {
                adjacency,
                w,
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.shape()[1])
    }

    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, Vec<GcnCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = h.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Parameter gradients in [`RoleGcn::params`] order, and the input
    /// cotangent.
    pub fn backward(&self, caches: &[GcnCache], d_out: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = d_out.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let lg = layer.backward(cache, &g)?;
            per_layer.push(lg.params);
            g = lg.d_input;
        }
        per_layer.reverse();
        Ok((per_layer.into_iter().flatten().collect(), g))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer
                    .params()
                    .into_iter()
                    .map(move |(name, t)| (format!("gcn.l{l}.{name}"), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Learnable adjacency scalars per layer.
    pub fn adjacency_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.adjacency.learnable_count()).collect()
    }
}

/// `[H, A_s, A_t, W] -> [layer output]`.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayerOp {
    pub activation: Activation,
}

impl DifferentiableOp for GcnLayerOp {
    type Context = GcnCache;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, GcnCache)> {
        let (out, cache) = gcn_apply(&inputs[0], &inputs[1], &inputs[2], &inputs[3], self.activation)?;
        Ok((vec![out], cache))
    }

    fn backward(&self, inputs: &[Tensor], ctx: &GcnCache, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let g = gcn_apply_backward(ctx, &inputs[3], self.activation, &cot[0])?;
        Ok(vec![g.d_h, g.d_a_s, g.d_a_t, g.d_w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(variant: u8, c_in: usize, c_out: usize) -> GcnLayer {
        let mut rng = Rng::new(5);
        GcnLayer {
            adjacency: build_adjacency(&AdjacencyConfig::variant(variant), 3, 4, &mut rng).unwrap(),
            w: Tensor::from_fn(&[c_in, c_out], |i| 0.1 * i as f64 - 0.2),
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_adjacency_is_channel_mix() {
        let mut l = layer(2, 2, 1);
        l.w = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let h = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let (y, _) = l.forward(&h).unwrap();
        assert_eq!(y.data(), &h.data()[..12]);
    }

    #[test]
    fn all_ones_sums_everything() {
        let mut l = layer(1, 1, 1);
        l.w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let h = Tensor::from_fn(&[1, 3, 4], |i| i as f64);
        let (y, _) = l.forward(&h).unwrap();
        let total = h.sum();
        assert!(y.data().iter().all(|&v| (v - total).abs() < 1e-12));
    }

    #[test]
    fn learnable_counts() {
        let mut rng = Rng::new(0);
        let count = |v: u8, rng: &mut Rng| build_adjacency(&AdjacencyConfig::variant(v), 11, 5, rng).unwrap().learnable_count();
        assert_eq!(count(1, &mut rng), 0);
        assert_eq!(count(2, &mut rng), 0);
        assert_eq!(count(3, &mut rng), 5 * 121 + 11 * 25);
        assert_eq!(count(4, &mut rng), 2);
        assert_eq!(count(5, &mut rng), 2);
        assert_eq!(count(6, &mut rng), 4);
        assert_eq!(count(7, &mut rng), 880);
    }

    #[test]
    fn tied_variants_materialize() {
        let mut rng = Rng::new(0);
        let cfg = AdjacencyConfig {
            variant: 5,
            alpha: Some(0.25),
            beta: None,
        };
        let a = build_adjacency(&cfg, 3, 2, &mut rng).unwrap().spatial.dense();
        assert_eq!(a.at(&[1, 2, 2]), 0.25);
        assert_eq!(a.at(&[1, 0, 2]), 0.75);
        let a = build_adjacency(&AdjacencyConfig::variant(4), 3, 2, &mut rng).unwrap().temporal.dense();
        assert_eq!(a.data(), tied(3, 2, 1.0, 0.0).data());
    }

    #[test]
    fn frozen_layers_have_no_adjacency_grads() {
        let l = layer(1, 2, 2);
        let h = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let (y, cache) = l.forward(&h).unwrap();
        let g = l.backward(&cache, &y).unwrap();
        assert_eq!(g.params.len(), 1);
    }

    #[test]
    fn variant_eight_is_deeper() {
        let mut rng = Rng::new(1);
        let base = RoleGcn::new(&AdjacencyConfig::variant(3), 2, &[8, 16], 11, 5, &mut rng).unwrap();
        let deep = RoleGcn::new(&AdjacencyConfig::variant(8), 2, &[8, 16], 11, 5, &mut rng).unwrap();
        assert_eq!(base.layers.len() + 1, deep.layers.len());
        assert_eq!(deep.out_channels(), 16);
        assert_eq!(base.layers.last().unwrap().activation, Activation::Identity);
        assert!(RoleGcn::new(&AdjacencyConfig::variant(9), 2, &[8], 11, 5, &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let l = layer(3, 2, 2);
        assert!(l.forward(&Tensor::zeros(&[2, 3, 5])).is_err());
        assert!(l.forward(&Tensor::zeros(&[3, 3, 4])).is_err());
    }
}
