use crate::decoder::{DecoderCache, TcnDecoder};
use crate::diffcore::{DifferentiableOp, Rng, Tensor};
use crate::error::{Error, Result};
use crate::gamedata::{COURT_LENGTH, COURT_WIDTH, K_FUT, N_AGENTS, N_PLAYERS, T_OBS};
use crate::ordernn::{
    build_soft_permutation, deshuffle, deshuffle_backward, deshuffle_hard, player_features, reshuffle,
    reshuffle_backward, reshuffle_hard, soft_permutation_backward, ScoreCache, ScoreNetwork, SoftPermutation,
};
use crate::rolegcn::{GcnCache, RoleGcn};
use crate::softsort::{regime_signature, soft_rank, soft_rank_backward, SoftRankResult};

use super::config::ExperimentConfig;
use super::loss::forecast_loss_grad;

/// Network inputs are `(position - COURT_CENTER) / POSITION_SCALE`.
pub const COURT_CENTER: [f64; 2] = [COURT_LENGTH / 2.0, COURT_WIDTH / 2.0];
pub const POSITION_SCALE: f64 = 10.0;

/// How players are mapped to role slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// Slot `k` holds player `order[k]`.
    Hard(Vec<usize>),
    Soft {
        epsilon: f64,
        scale: f64,
        normalized: bool,
    },
}

/// Score network, role graph encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub scorer: ScoreNetwork,
    pub encoder: RoleGcn,
    pub decoder: TcnDecoder,
    pub predict_offsets: bool,
}

struct SoftState {
    score_cache: ScoreCache,
    ranks: SoftRankResult,
    perm: SoftPermutation,
}

/// Everything a backward pass needs.
pub struct ForwardPass {
    /// `[K_FUT, N_PLAYERS, 2]`, in player order.
    pub prediction: Tensor,
    /// Slot order used (or implied by the soft ranks).
    pub order: Vec<usize>,
    x_in: Tensor,
    soft: Option<SoftState>,
    encoder: Vec<GcnCache>,
    decoder: DecoderCache,
    y_role: Tensor,
}

impl ForwardPass {
    pub fn ranks(&self) -> Option<&SoftRankResult> {
        self.soft.as_ref().map(|s| &s.ranks)
    }
}

/// Gradients grouped by sub-network; `scorer` is `None` when the score
/// network is not part of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub scorer: Option<Vec<Tensor>>,
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

fn norm_sq(ts: &[Tensor]) -> f64 {
    ts.iter().map(Tensor::norm_sq).sum()
}

fn add_all(a: &mut [Tensor], b: &[Tensor]) {
    for (x, y) in a.iter_mut().zip(b) {
        x.axpy(1.0, y);
    }
}

impl Gradients {
    pub fn add(&mut self, other: &Gradients) {
        if let (Some(a), Some(b)) = (&mut self.scorer, &other.scorer) {
            add_all(a, b);
        }
        add_all(&mut self.encoder, &other.encoder);
        add_all(&mut self.decoder, &other.decoder);
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.iter_mut() {
            t.scale_in_place(alpha);
        }
    }

    pub fn scorer_norm(&self) -> f64 {
        self.scorer.as_deref().map_or(0.0, norm_sq).sqrt()
    }

    pub fn encoder_norm(&self) -> f64 {
        norm_sq(&self.encoder).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.scorer.iter().flatten().chain(&self.encoder).chain(&self.decoder)
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.scorer
            .iter_mut()
            .flatten()
            .chain(self.encoder.iter_mut())
            .chain(self.decoder.iter_mut())
    }
}

/// `[T, A, 2]` positions -> `[2, A, T]` normalized features.
fn to_features(x: &Tensor) -> Tensor {
    let (t, a) = (x.shape()[0], x.shape()[1]);
    let d = x.data();
    Tensor::from_fn(&[2, a, t], |i| {
        let (c, r, f) = (i / (a * t), (i / t) % a, i % t);
        (d[(f * a + r) * 2 + c] - COURT_CENTER[c]) / POSITION_SCALE
    })
}

/// Adjoint of [`to_features`] (without the centering shift).
fn from_feature_grad(g: &Tensor) -> Tensor {
    let (a, t) = (g.shape()[1], g.shape()[2]);
    let d = g.data();
    Tensor::from_fn(&[t, a, 2], |i| {
        let (f, r, c) = (i / (a * 2), (i / 2) % a, i % 2);
        d[(c * a + r) * t + f] / POSITION_SCALE
    })
}

impl Forecaster {
    pub fn new(config: &ExperimentConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let scorer = ScoreNetwork::new(2 * T_OBS, &m.score_hidden, &mut rng.child(0));
        let encoder = RoleGcn::new(&config.adjacency, 2, &m.gcn_channels, N_AGENTS, T_OBS, &mut rng.child(1))?;
        let decoder = TcnDecoder::new(
            encoder.out_channels(),
            m.decoder_hidden,
            m.kernel_size,
            T_OBS,
            K_FUT,
            &mut rng.child(2),
        )?;
        Ok(Self {
            scorer,
            encoder,
            decoder,
            predict_offsets: m.predict_offsets,
        })
    }

    /// Every weight tensor with its checkpoint name.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.scorer.params();
        out.extend(self.encoder.params());
        out.extend(self.decoder.params());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Mutable parameters in the same order as [`Gradients::iter`] for the
    /// given set of groups.
    pub(crate) fn trainable_mut(&mut self, with_scorer: bool) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if with_scorer {
            out.extend(self.scorer.params_mut());
        }
        out.extend(self.encoder.params_mut());
        out.extend(self.decoder.params_mut());
        out
    }

    /// Overwrites weights from named tensors; every name must be known and
    /// shapes must agree. Returns how many tensors were loaded.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)], prefix: &str) -> Result<usize> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let mut slots = self.scorer.params_mut();
        slots.extend(self.encoder.params_mut());
        slots.extend(self.decoder.params_mut());
        let mut loaded = 0;
        for (name, slot) in names.iter().zip(slots) {
            if !name.starts_with(prefix) {
                continue;
            }
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
            loaded += 1;
        }
        Ok(loaded)
    }

    /// `x_in: [T_OBS, N_AGENTS, 2]` observed positions.
    pub fn forward(&self, x_in: &Tensor, assignment: &Assignment) -> Result<ForwardPass> {
        x_in.expect_shape(&[T_OBS, N_AGENTS, 2], "observed frames")?;
        let (x_role, soft, order) = match assignment {
            Assignment::Hard(order) => (reshuffle_hard(order, x_in)?, None, order.clone()),
            &Assignment::Soft {
                epsilon,
                scale,
                normalized,
            } => {
                let (scores, score_cache) = self.scorer.forward(&player_features(x_in)?)?;
                let ranks = soft_rank(&scores, epsilon)?;
                let perm = build_soft_permutation(&ranks.ranks, scale, normalized)?;
                let order = ranks.order();
                (
                    reshuffle(&perm, x_in)?,
                    Some(SoftState {
                        score_cache,
                        ranks,
                        perm,
                    }),
                    order,
                )
            }
        };
        let (h, encoder) = self.encoder.forward(&to_features(&x_role))?;
        let (d, decoder) = self.decoder.forward(&h)?;
        let shift = |c: usize| if self.predict_offsets { 0.0 } else { COURT_CENTER[c] };
        let y_role = Tensor::from_fn(d.shape(), |i| d.data()[i] * POSITION_SCALE + shift(i % 2));
        let mut y = match &soft {
            None => deshuffle_hard(&order, &y_role)?,
            Some(s) => deshuffle(&s.perm, &y_role)?,
        };
        if self.predict_offsets {
            let last = &x_in.data()[(T_OBS - 1) * N_AGENTS * 2..];
            for frame in y.data_mut().chunks_mut(N_AGENTS * 2) {
                for (v, l) in frame.iter_mut().zip(last) {
                    *v += l;
                }
            }
        }
        let prediction = Tensor::from_fn(&[K_FUT, N_PLAYERS, 2], |i| {
            let (k, rest) = (i / (N_PLAYERS * 2), i % (N_PLAYERS * 2));
            y.data()[k * N_AGENTS * 2 + rest]
        });
        Ok(ForwardPass {
            prediction,
            order,
            x_in: x_in.clone(),
            soft,
            encoder,
            decoder,
            y_role,
        })
    }

    /// Backward from `d_pred` (cotangent of [`ForwardPass::prediction`]).
    /// Score network gradients are produced only for soft assignments.
    pub fn backward(&self, pass: &ForwardPass, d_pred: &Tensor) -> Result<Gradients> {
        d_pred.expect_shape(&[K_FUT, N_PLAYERS, 2], "prediction cotangent")?;
        let d_y = Tensor::from_fn(&[K_FUT, N_AGENTS, 2], |i| {
            let (k, rest) = (i / (N_AGENTS * 2), i % (N_AGENTS * 2));
            if rest < N_PLAYERS * 2 {
                d_pred.data()[k * N_PLAYERS * 2 + rest]
            } else {
                0.0
            }
        });
        let (d_y_role, dm_out) = match &pass.soft {
            None => (reshuffle_hard(&pass.order, &d_y)?, None),
            Some(s) => {
                let (dm, dyr) = deshuffle_backward(&s.perm, &pass.y_role, &d_y)?;
                (dyr, Some(dm))
            }
        };
        let d_dec = d_y_role.map(|g| g * POSITION_SCALE);
        let (decoder, d_h) = self.decoder.backward(&pass.decoder, &d_dec)?;
        let (encoder, d_h0) = self.encoder.backward(&pass.encoder, &d_h)?;
        let scorer = match (&pass.soft, dm_out) {
            (Some(s), Some(mut dm)) => {
                let d_x_role = from_feature_grad(&d_h0);
                let (dm_in, _) = reshuffle_backward(&s.perm, &pass.x_in, &d_x_role)?;
                dm.axpy(1.0, &dm_in);
                let d_ranks = soft_permutation_backward(&s.ranks.ranks, &s.perm, &dm)?;
                let d_scores = soft_rank_backward(&s.ranks, &d_ranks)?;
                Some(self.scorer.backward(&s.score_cache, &d_scores)?.0)
            }
            _ => None,
        };
        Ok(Gradients {
            scorer,
            encoder,
            decoder,
        })
    }

    /// Loss and gradients for one sequence.
    pub fn loss_and_grad(&self, x_in: &Tensor, gt: &Tensor, assignment: &Assignment) -> Result<(f64, Gradients, ForwardPass)> {
        let pass = self.forward(x_in, assignment)?;
        let (loss, d_pred) = forecast_loss_grad(&pass.prediction, gt)?;
        let grads = self.backward(&pass, &d_pred)?;
        Ok((loss, grads, pass))
    }
}

/// Model parameters -> forecast loss on one sequence, for gradient checks of
/// the assembled pipeline. Inputs are the trainable tensors: score network
/// (soft assignments only), encoder, decoder.
#[derive(Debug, Clone)]
pub struct ForecasterOp {
    pub template: Forecaster,
    pub x_in: Tensor,
    pub gt: Tensor,
    pub assignment: Assignment,
}

impl ForecasterOp {
    fn with_scorer(&self) -> bool {
        matches!(self.assignment, Assignment::Soft { .. })
    }

    pub fn inputs(&self) -> Vec<Tensor> {
        let mut m = self.template.clone();
        m.trainable_mut(self.with_scorer()).into_iter().map(|t| t.clone()).collect()
    }

    fn model(&self, params: &[Tensor]) -> Result<Forecaster> {
        let mut m = self.template.clone();
        let slots = m.trainable_mut(self.with_scorer());
        if slots.len() != params.len() {
            return Err(Error::dim(format!("{} tensors for {} parameters", params.len(), slots.len())));
        }
        for (s, p) in slots.into_iter().zip(params) {
            p.expect_shape(s.shape(), "model parameter")?;
            *s = p.clone();
        }
        Ok(m)
    }
}

impl DifferentiableOp for ForecasterOp {
    type Context = Gradients;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Gradients)> {
        let m = self.model(inputs)?;
        let (loss, grads, _) = m.loss_and_grad(&self.x_in, &self.gt, &self.assignment)?;
        Ok((vec![Tensor::scalar(loss)], grads))
    }

    fn backward(&self, _: &[Tensor], ctx: &Gradients, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let c = cot[0].data()[0];
        Ok(ctx.iter().map(|g| g.map(|v| v * c)).collect())
    }

    fn regime(&self, inputs: &[Tensor]) -> Result<Vec<usize>> {
        match self.assignment {
            Assignment::Hard(_) => Ok(Vec::new()),
            Assignment::Soft { epsilon, .. } => {
                let m = self.model(inputs)?;
                let scores = crate::ordernn::score_players(&m.scorer, &self.x_in)?;
                Ok(regime_signature(&soft_rank(&scores, epsilon)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::config::Variant;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.model.score_hidden = vec![4];
        c.model.gcn_channels = vec![3, 4];
        c.model.decoder_hidden = 3;
        c
    }

    #[test]
    fn feature_layout_round_trips() {
        let x = Tensor::from_fn(&[5, 11, 2], |i| i as f64);
        let f = to_features(&x);
        assert_eq!(f.at(&[1, 3, 2]), (x.at(&[2, 3, 1]) - COURT_CENTER[1]) / POSITION_SCALE);
        let g = from_feature_grad(&f);
        assert!((g.at(&[2, 3, 1]) - f.at(&[1, 3, 2]) / POSITION_SCALE).abs() < 1e-15);
    }

    #[test]
    fn hard_assignment_has_no_scorer_gradient() {
        let model = Forecaster::new(&small_config(), &Rng::new(0)).unwrap();
        let x = Tensor::from_fn(&[5, 11, 2], |i| 5.0 + (i % 7) as f64);
        let gt = Tensor::full(&[10, 10, 2], 7.0);
        let order: Vec<usize> = (0..10).rev().collect();
        let (_, g, _) = model.loss_and_grad(&x, &gt, &Assignment::Hard(order)).unwrap();
        assert!(g.scorer.is_none());
        let soft = Assignment::Soft {
            epsilon: 1.0,
            scale: 0.5,
            normalized: true,
        };
        let (_, g, _) = model.loss_and_grad(&x, &gt, &soft).unwrap();
        assert!(g.scorer.is_some());
    }

    #[test]
    fn hard_order_is_equivariant() {
        // relabeling players and permuting the order to match leaves
        // predictions relabeled the same way
        let model = Forecaster::new(&small_config(), &Rng::new(1)).unwrap();
        let x = Tensor::from_fn(&[5, 11, 2], |i| 3.0 + ((i * 13) % 17) as f64 * 0.5);
        let order = vec![3, 1, 4, 0, 5, 9, 2, 6, 8, 7];
        let p = model.forward(&x, &Assignment::Hard(order.clone())).unwrap().prediction;
        let relabel = |i: usize| (i + 1) % 10;
        let mut x2 = x.clone();
        for t in 0..5 {
            for i in 0..10 {
                for c in 0..2 {
                    x2.set(&[t, relabel(i), c], x.at(&[t, i, c]));
                }
            }
        }
        let order2: Vec<usize> = order.iter().map(|&i| relabel(i)).collect();
        let p2 = model.forward(&x2, &Assignment::Hard(order2)).unwrap().prediction;
        for k in 0..10 {
            for i in 0..10 {
                for c in 0..2 {
                    assert!((p.at(&[k, i, c]) - p2.at(&[k, relabel(i), c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn param_names_unique() {
        let mut c = small_config();
        c.variant = Variant::E2e;
        let model = Forecaster::new(&c, &Rng::new(0)).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}
