use std::fmt::Write as _;

use rayon::prelude::*;

use crate::diffcore::{child_seed, Rng, Tensor};
use crate::error::{Error, Result};
use crate::gamedata::{split_dataset, TrajectorySequence, N_PLAYERS, T_OBS};
use crate::metrics::{ade, fde, topk_ordering_accuracy, ForecastErrors, TOPK_LEVELS};
use crate::oracles::{euclidean_distances_to_ball, order_players, OrderingKind, OrderingSpec};
use crate::ordernn::{player_features, score_players, ScoreCache, ScoreNetwork};
use crate::perturb::{apply_perturbation, PerturbSpec};
use crate::softsort::soft_rank;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, Variant};
use super::model::{Assignment, Forecaster, Gradients};

/// Regularization used to turn estimator scores into hard ranks.
pub const HARD_EPSILON: f64 = 1e-6;

/// Plain stochastic gradient descent with heavy-ball momentum:
/// `v <- μ v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, params: Vec<&mut Tensor>, grads: impl IntoIterator<Item = &'a Tensor>) -> Result<()> {
        let grads: Vec<&Tensor> = grads.into_iter().collect();
        if grads.len() != params.len() {
            return Err(Error::dim(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            g.expect_shape(p.shape(), "gradient")?;
            v.scale_in_place(self.momentum);
            v.axpy(1.0, g);
            p.axpy(-self.learning_rate, v);
        }
        Ok(())
    }
}

/// The slot assignment a variant uses for `seq`.
pub fn assignment_for(config: &ExperimentConfig, model: &Forecaster, seq: &TrajectorySequence) -> Result<Assignment> {
    Ok(match config.variant {
        Variant::None => Assignment::Hard(order_players(&OrderingSpec::new(OrderingKind::None), seq, config.seed)?),
        Variant::Oracle(kind) => Assignment::Hard(order_players(&OrderingSpec::new(kind), seq, config.seed)?),
        Variant::EuclDistEst => {
            let scores = score_players(&model.scorer, &seq.observed())?;
            Assignment::Hard(soft_rank(&scores, HARD_EPSILON)?.order())
        }
        Variant::E2e | Variant::E2eFinetune => Assignment::Soft {
            epsilon: config.epsilon,
            scale: config.scale,
            normalized: config.normalize_permutation,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean pre-update batch loss, m².
    pub train_loss: f64,
    /// Mean norm of the averaged batch gradient.
    pub grad_norm: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,grad_norm";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.grad_norm);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Present when the estimator was pretrained inline.
    pub pretrain: Option<PretrainReport>,
}

/// Sums per-item gradients in index order; the result does not depend on
/// how many threads computed them.
fn reduce(items: Vec<(f64, Gradients)>) -> Option<(f64, Gradients)> {
    let mut it = items.into_iter();
    let (mut loss, mut grads) = it.next()?;
    for (l, g) in it {
        loss += l;
        grads.add(&g);
    }
    Some((loss, grads))
}

pub fn train(config: &ExperimentConfig, train_seqs: &[TrajectorySequence], init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_seqs.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    let root = Rng::new(config.seed);
    let mut model = Forecaster::new(config, &root)?;
    let mut pretrain = None;
    match (config.variant, init) {
        (Variant::E2eFinetune, None) => {
            return Err(Error::Config(
                "variant e2e_finetune requires a pretrained checkpoint (init)".into(),
            ))
        }
        (Variant::E2eFinetune | Variant::EuclDistEst, Some(c)) => {
            model.load_named(&c.tensors, "scorer.")?;
        }
        (Variant::EuclDistEst, None) => {
            let (c, report) = pretrain_dist_estimator(config, train_seqs)?;
            model.load_named(&c.tensors, "scorer.")?;
            pretrain = Some(report);
        }
        (_, Some(c)) => {
            model.load_named(&c.tensors, "")?;
        }
        (_, None) => {}
    }

    let soft = config.variant.is_soft();
    let data: Vec<(Tensor, Tensor, Assignment)> = train_seqs
        .par_iter()
        .map(|s| Ok((s.observed(), s.future_players(), assignment_for(config, &model, s)?)))
        .collect::<Result<_>>()?;

    let mut rng = root.child(10);
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let perm = rng.permutation(data.len());
        let (mut loss_sum, mut norm_sum, mut steps) = (0.0, 0.0, 0usize);
        for batch in perm.chunks(config.batch_size) {
            let items = batch
                .par_iter()
                .map(|&i| {
                    let (x, gt, a) = &data[i];
                    model.loss_and_grad(x, gt, a).map(|(l, g, _)| (l, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = reduce(items).expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            let mut norm = grads.norm();
            if !norm.is_finite() {
                return Err(Error::Evaluation(format!("non-finite gradient in epoch {epoch}")));
            }
            if let Some(clip) = config.grad_clip {
                if norm > clip {
                    grads.scale(clip / norm);
                    norm = clip;
                }
            }
            sgd.step(model.trainable_mut(soft), grads.iter())?;
            loss_sum += loss;
            norm_sum += norm;
            steps += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            grad_norm: norm_sum / steps as f64,
        });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_model(config, config.epochs, rng.state(), &model),
        history,
        pretrain,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Mean squared distance error on held-out sequences, m².
    pub heldout_mse: f64,
    /// Top-k accuracy of the induced ordering against the true ball-distance
    /// ordering, for k in [`TOPK_LEVELS`].
    pub heldout_topk: [f64; 4],
    pub fit_sequences: usize,
    pub heldout_sequences: usize,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

struct DistSample {
    features: Tensor,
    target: Vec<f64>,
    true_order: Vec<usize>,
}

fn dist_sample(seq: &TrajectorySequence) -> Result<DistSample> {
    let target = euclidean_distances_to_ball(seq, T_OBS - 1)?;
    Ok(DistSample {
        features: player_features(&seq.observed())?,
        true_order: order_players(&OrderingSpec::new(OrderingKind::BallDistance), seq, 0)?,
        target,
    })
}

fn regression_grad(net: &ScoreNetwork, s: &DistSample) -> Result<(f64, Vec<Tensor>)> {
    let (pred, cache): (Vec<f64>, ScoreCache) = net.forward(&s.features)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(&s.target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let d: Vec<f64> = pred.iter().zip(&s.target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, net.backward(&cache, &d)?.0))
}

/// Trains the score network to regress each player's distance to the ball at
/// the last observed frame. The returned checkpoint holds a full model whose
/// score network is the trained regressor.
pub fn pretrain_dist_estimator(config: &ExperimentConfig, seqs: &[TrajectorySequence]) -> Result<(Checkpoint, PretrainReport)> {
    config.validate()?;
    if seqs.is_empty() {
        return Err(Error::Data("no sequences to pretrain on".into()));
    }
    let (fit, heldout): (Vec<&TrajectorySequence>, Vec<&TrajectorySequence>) = if seqs.len() >= 3 {
        let (train, val, test) = split_dataset(seqs, config.seed)?.select(seqs);
        (train.into_iter().chain(val).collect(), test)
    } else {
        (seqs.iter().collect(), seqs.iter().collect())
    };
    let fit: Vec<DistSample> = fit.par_iter().map(|s| dist_sample(s)).collect::<Result<_>>()?;
    let held: Vec<DistSample> = heldout.par_iter().map(|s| dist_sample(s)).collect::<Result<_>>()?;

    let root = Rng::new(config.seed);
    let mut model = Forecaster::new(config, &root)?;
    let p = &config.pretrain;
    let mut rng = root.child(20);
    let mut sgd = Sgd::new(p.learning_rate, config.momentum);
    let mut loss_history = Vec::with_capacity(p.epochs);
    for _ in 0..p.epochs {
        let perm = rng.permutation(fit.len());
        let mut total = 0.0;
        for batch in perm.chunks(p.batch_size) {
            let items = batch
                .par_iter()
                .map(|&i| regression_grad(&model.scorer, &fit[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut it = items.into_iter();
            let (mut loss, mut grads) = it.next().expect("non-empty batch");
            for (l, g) in it {
                loss += l;
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.axpy(1.0, b);
                }
            }
            for g in &mut grads {
                g.scale_in_place(1.0 / batch.len() as f64);
            }
            sgd.step(model.scorer.params_mut(), grads.iter())?;
            total += loss;
        }
        loss_history.push(total / fit.len() as f64);
    }

    let per_seq = held
        .par_iter()
        .map(|s| {
            let pred = model.scorer.forward(&s.features)?.0;
            let mse = pred.iter().zip(&s.target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
            let order = soft_rank(&pred, HARD_EPSILON)?.order();
            let mut topk = [0.0; 4];
            for (slot, &k) in topk.iter_mut().zip(&TOPK_LEVELS) {
                *slot = topk_ordering_accuracy(&order, &s.true_order, k)?;
            }
            Ok((mse, topk))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_seq.len() as f64;
    let mut heldout_topk = [0.0; 4];
    for (_, t) in &per_seq {
        for (a, b) in heldout_topk.iter_mut().zip(t) {
            *a += b / n;
        }
    }
    let report = PretrainReport {
        heldout_mse: per_seq.iter().map(|p| p.0).sum::<f64>() / n,
        heldout_topk,
        fit_sequences: fit.len(),
        heldout_sequences: held.len(),
        loss_history,
    };
    let snapshot = ExperimentConfig {
        variant: Variant::EuclDistEst,
        ..config.clone()
    };
    Ok((Checkpoint::from_model(&snapshot, p.epochs, rng.state(), &model), report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `clean` or the perturbation label.
    pub label: String,
    pub errors: ForecastErrors,
    /// Mean top-k ordering accuracy for k in [`TOPK_LEVELS`].
    pub topk: [f64; 4],
}

/// Ordering the top-k accuracy is measured against: the clean oracle
/// ordering for oracle variants, the ball-distance ordering otherwise.
pub fn reference_order(config: &ExperimentConfig, seq: &TrajectorySequence) -> Result<Vec<usize>> {
    match config.variant {
        Variant::Oracle(kind) => order_players(&OrderingSpec::new(kind), seq, config.seed),
        _ => order_players(&OrderingSpec::new(OrderingKind::BallDistance), seq, config.seed),
    }
}

/// Forecast errors and ordering accuracy of `model` on `seqs`, optionally
/// with the ordering perturbed before forecasting.
pub fn evaluate(
    model: &Forecaster,
    config: &ExperimentConfig,
    seqs: &[TrajectorySequence],
    perturb: Option<&PerturbSpec>,
) -> Result<EvalReport> {
    if seqs.is_empty() {
        return Err(Error::Data("no evaluation sequences".into()));
    }
    if let Some(p) = perturb {
        p.validate()?;
        if config.variant.is_soft() {
            return Err(Error::Config(format!(
                "perturbations apply to hard orderings, not variant {}",
                config.variant
            )));
        }
    }
    let rows = seqs
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut assignment = assignment_for(config, model, seq)?;
            if let (Some(p), Assignment::Hard(order)) = (perturb, &assignment) {
                let mut rng = Rng::new(child_seed(p.seed, i as u64));
                assignment = Assignment::Hard(apply_perturbation(p, order, &mut rng)?);
            }
            let pass = model.forward(&seq.observed(), &assignment)?;
            let gt = seq.future_players();
            let reference = reference_order(config, seq)?;
            let mut topk = [0.0; 4];
            for (slot, &k) in topk.iter_mut().zip(&TOPK_LEVELS) {
                *slot = topk_ordering_accuracy(&pass.order[..N_PLAYERS], &reference, k)?;
            }
            Ok(((ade(&pass.prediction, &gt)?, fde(&pass.prediction, &gt)?), topk))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mut topk = [0.0; 4];
    for (_, t) in &rows {
        for (a, b) in topk.iter_mut().zip(t) {
            *a += b / n;
        }
    }
    Ok(EvalReport {
        label: perturb.map_or_else(|| "clean".to_string(), PerturbSpec::label),
        errors: ForecastErrors::from_per_sequence(rows.into_iter().map(|r| r.0).collect()),
        topk,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub ordernn_grad_norm: f64,
    pub gcn_grad_norm: f64,
    /// Mean fraction of soft-rank coordinates in non-singleton blocks.
    pub pooled_fraction: f64,
}

pub const PROBE_HEADER: &str = "epsilon,ordernn_grad_norm,gcn_grad_norm,pooled_fraction";

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = format!("{PROBE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.epsilon, r.ordernn_grad_norm, r.gcn_grad_norm, r.pooled_fraction);
    }
    s
}

/// One forward/backward of the end-to-end pipeline per `ε` over `batch`,
/// recording how much gradient reaches the score network and the graph
/// encoder.
pub fn gradient_probe(checkpoint: &Checkpoint, batch: &[TrajectorySequence], epsilons: &[f64]) -> Result<Vec<ProbeRow>> {
    let config = &checkpoint.config;
    if !config.variant.is_soft() {
        return Err(Error::Config(format!(
            "gradient probe needs an e2e checkpoint, got variant {}",
            config.variant
        )));
    }
    if batch.is_empty() {
        return Err(Error::Data("empty probe batch".into()));
    }
    let model = checkpoint.model()?;
    let data: Vec<(Tensor, Tensor)> = batch.iter().map(|s| (s.observed(), s.future_players())).collect();
    epsilons
        .iter()
        .map(|&epsilon| {
            let assignment = Assignment::Soft {
                epsilon,
                scale: config.scale,
                normalized: config.normalize_permutation,
            };
            let items = data
                .par_iter()
                .map(|(x, gt)| {
                    let (l, g, pass) = model.loss_and_grad(x, gt, &assignment)?;
                    let pooled = pass.ranks().map_or(0.0, |r| r.pooled_fraction());
                    Ok((l, g, pooled))
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled = items.iter().map(|i| i.2).sum::<f64>() / items.len() as f64;
            let (_, mut grads) = reduce(items.into_iter().map(|(l, g, _)| (l, g)).collect()).expect("non-empty batch");
            grads.scale(1.0 / data.len() as f64);
            Ok(ProbeRow {
                epsilon,
                ordernn_grad_norm: grads.scorer_norm(),
                gcn_grad_norm: grads.encoder_norm(),
                pooled_fraction: pooled,
            })
        })
        .collect()
}
