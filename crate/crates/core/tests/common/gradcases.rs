//! Gradient-check cases for every differentiable op, shared by the gradient
//! tests and the acceptance suite.
#![allow(dead_code)]

use rolfor_core::decoder::{DecoderOp, TcnDecoder};
use rolfor_core::diffcore::{check_gradients, ElementwiseKind, ElementwiseOp, MatMulOp, Rng, Tensor};
use rolfor_core::ordernn::{DeshuffleOp, OrderPipelineOp, ReshuffleOp, ScoreNetwork, SoftPermutationOp};
use rolfor_core::rolegcn::{Activation, GcnLayerOp};
use rolfor_core::softsort::SoftRankOp;
use rolfor_core::trainer::{Assignment, ForecastLossOp, ForecasterOp};
use rolfor_core::{AdjacencyConfig, DifferentiableOp, ExperimentConfig, Forecaster};

pub const TOL: f64 = 1e-4;
pub const POINTS: u64 = 100;

#[derive(Debug)]
pub struct CaseResult {
    pub name: String,
    pub points: usize,
    pub compared: usize,
    pub failures: Vec<String>,
}

impl CaseResult {
    /// Every point within tolerance, and at least half of them away from
    /// kinks.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.compared * 2 >= self.points
    }
}

fn random(shape: &[usize], rng: &mut Rng, spread: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-spread, spread))
}

fn run<O: DifferentiableOp>(name: &str, points: u64, seed: u64, op_inputs: impl Fn(&mut Rng) -> (O, Vec<Tensor>)) -> CaseResult {
    let mut r = CaseResult {
        name: name.to_string(),
        points: points as usize,
        compared: 0,
        failures: Vec::new(),
    };
    for p in 0..points {
        let mut rng = Rng::new(seed + p);
        let (op, inputs) = op_inputs(&mut rng);
        match check_gradients(&op, &inputs, TOL) {
            Ok(report) if report.passed() => r.compared += usize::from(!report.skipped),
            Ok(report) => r.failures.push(format!("point {p}: worst {:e}", report.worst())),
            Err(e) => r.failures.push(format!("point {p}: {e}")),
        }
    }
    r
}

pub fn matmul_and_elementwise() -> Vec<CaseResult> {
    vec![
        run("matmul", POINTS, 1000, |rng| (MatMulOp, vec![random(&[3, 4], rng, 1.0), random(&[4, 2], rng, 1.0)])),
        run("tanh", POINTS, 1000, |rng| (ElementwiseOp(ElementwiseKind::Tanh), vec![random(&[5], rng, 2.0)])),
        run("mul", POINTS, 1000, |rng| {
            (ElementwiseOp(ElementwiseKind::Mul), vec![random(&[4], rng, 2.0), random(&[4], rng, 2.0)])
        }),
        run("relu", POINTS, 1000, |rng| (ElementwiseOp(ElementwiseKind::Relu), vec![random(&[6], rng, 1.0)])),
    ]
}

pub fn soft_rank() -> Vec<CaseResult> {
    [0.1, 1.0, 10.0]
        .into_iter()
        .map(|eps| {
            run(&format!("soft_rank eps={eps}"), POINTS, 1000, |rng| {
                let n = 2 + rng.index(9);
                (SoftRankOp { epsilon: eps }, vec![random(&[n], rng, 3.0)])
            })
        })
        .collect()
}

pub fn soft_permutation() -> Vec<CaseResult> {
    [true, false]
        .into_iter()
        .map(|normalized| {
            run(&format!("soft_permutation normalized={normalized}"), POINTS, 1000, |rng| {
                let n = 2 + rng.index(5);
                let ranks = Tensor::from_fn(&[n], |_| rng.uniform(1.0, n as f64));
                (SoftPermutationOp { scale: 0.5 + rng.unit(), normalized }, vec![ranks])
            })
        })
        .collect()
}

pub fn reshuffle_and_deshuffle() -> Vec<CaseResult> {
    vec![
        run("reshuffle", POINTS, 1000, |rng| {
            (ReshuffleOp, vec![random(&[3, 3], rng, 1.0), random(&[2, 4, 2], rng, 10.0)])
        }),
        run("deshuffle", POINTS, 1000, |rng| {
            (DeshuffleOp, vec![random(&[3, 3], rng, 1.0), random(&[2, 4, 2], rng, 10.0)])
        }),
    ]
}

/// Raw scores through soft rank, soft permutation and reshuffle.
pub fn order_pipeline() -> Vec<CaseResult> {
    vec![run("score->rank->M->reshuffle", POINTS, 1000, |rng| {
        let net = ScoreNetwork::new(4, &[5], rng);
        let x_in = Tensor::from_fn(&[2, 5, 2], |_| rng.uniform(0.0, 15.0));
        let params: Vec<Tensor> = net.params().into_iter().map(|(_, t)| t.clone()).collect();
        let op = OrderPipelineOp {
            template: net,
            x_in,
            epsilon: 0.05,
            scale: 1.0,
            normalized: true,
        };
        (op, params)
    })]
}

pub fn gcn_layer() -> Vec<CaseResult> {
    [Activation::Tanh, Activation::Identity]
        .into_iter()
        .map(|activation| {
            run(&format!("gcn_layer {activation:?}"), POINTS, 1000, |rng| {
                let inputs = vec![
                    random(&[2, 3, 4], rng, 1.0),
                    random(&[4, 3, 3], rng, 1.0),
                    random(&[3, 4, 4], rng, 1.0),
                    random(&[2, 3], rng, 1.0),
                ];
                (GcnLayerOp { activation }, inputs)
            })
        })
        .collect()
}

pub fn decoder() -> Vec<CaseResult> {
    vec![run("decoder", POINTS, 1000, |rng| {
        let dec = TcnDecoder::new(3, 4, 3, 4, 3, rng).unwrap();
        let mut inputs = vec![random(&[3, 2, 4], rng, 1.0)];
        inputs.extend(dec.params().into_iter().map(|(_, t)| random(t.shape(), rng, 0.8)));
        (DecoderOp, inputs)
    })]
}

pub fn forecast_loss() -> Vec<CaseResult> {
    vec![run("forecast_loss", POINTS, 1000, |rng| {
        let gt = random(&[10, 10, 2], rng, 10.0);
        (ForecastLossOp { gt }, vec![random(&[10, 10, 2], rng, 10.0)])
    })]
}

fn tiny_model(rng: &mut Rng, offsets: bool, adjacency: u8) -> Forecaster {
    let mut c = ExperimentConfig::default();
    c.model.score_hidden = vec![3];
    c.model.gcn_channels = vec![2, 3];
    c.model.decoder_hidden = 2;
    c.model.predict_offsets = offsets;
    c.adjacency = AdjacencyConfig::variant(adjacency);
    Forecaster::new(&c, &Rng::new(rng.next_u64())).unwrap()
}

/// The whole forecaster, loss included. Fewer points: each finite
/// difference runs a full model.
pub fn assembled_forecaster() -> Vec<CaseResult> {
    [(false, 3, false), (true, 6, false), (false, 5, true), (true, 3, true)]
        .into_iter()
        .map(|(offsets, adjacency, soft)| {
            run(&format!("forecaster offsets={offsets} adjacency={adjacency} soft={soft}"), 12, 50, |rng| {
                let template = tiny_model(rng, offsets, adjacency);
                let x_in = Tensor::from_fn(&[5, 11, 2], |_| rng.uniform(2.0, 14.0));
                let gt = Tensor::from_fn(&[10, 10, 2], |_| rng.uniform(2.0, 14.0));
                let assignment = if soft {
                    Assignment::Soft { epsilon: 0.05, scale: 0.7, normalized: true }
                } else {
                    Assignment::Hard(rng.permutation(10))
                };
                let op = ForecasterOp { template, x_in, gt, assignment };
                let inputs = op.inputs();
                (op, inputs)
            })
        })
        .collect()
}

pub const ALL: [(&str, fn() -> Vec<CaseResult>); 9] = [
    ("matmul_and_elementwise", matmul_and_elementwise),
    ("soft_rank", soft_rank),
    ("soft_permutation", soft_permutation),
    ("reshuffle_and_deshuffle", reshuffle_and_deshuffle),
    ("order_pipeline", order_pipeline),
    ("gcn_layer", gcn_layer),
    ("decoder", decoder),
    ("forecast_loss", forecast_loss),
    ("assembled_forecaster", assembled_forecaster),
];
