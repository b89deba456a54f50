//! Finite-difference verification of every differentiable kernel and of the
//! assembled network, run in 64-bit.

use super::config::{ModelConfig, TokenLayout};
use super::network::PatchFormerModel;
use super::stages;
use crate::error::Result;
use crate::numerics::gradcheck::GradCheckReport;
use crate::numerics::{grad_check, AttentionParams, BatchNormStats, Mode, Rng, Tape, Tensor, Var, GRAD_CHECK_EPS};

/// Kernels covered by [`op_suite`].
pub const SUITE_OPS: &[&str] = &[
    "conv_temporal",
    "conv_spatial",
    "avg_pool_time",
    "batch_norm_train",
    "batch_norm_eval",
    "leaky_relu",
    "relu",
    "linear",
    "bmm",
    "softmax",
    "dropout",
    "layer_norm",
    "multi_head_attention",
    "cross_entropy",
    "broadcast_arith",
    "permute_concat",
    "unfold_time",
    "spm_local_filter",
    "aggregate",
];

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// `sum(y * R)` for a fixed random `R`, so every output element has a
/// distinct weight in the objective.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::new(seed);
    let r = rand_tensor(&mut rng, tape.shape(y), -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One randomized instance of `op`: its inputs and the scalar objective.
fn instance(op: &str, rng: &mut Rng) -> (Vec<Tensor<f64>>, Objective) {
    let seed = rng.next_u64();
    let b = dim(rng, 1, 2);
    match op {
        "conv_temporal" => {
            let (fi, fo, c, t) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 3, 7));
            let k = dim(rng, 1, t);
            let inputs = vec![
                rand_tensor(rng, &[b, fi, c, t], -1.0, 1.0),
                rand_tensor(rng, &[fo, fi, 1, k], -1.0, 1.0),
                rand_tensor(rng, &[fo], -1.0, 1.0),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv_temporal(v[0], v[1], v[2])?;
                    project(t, y, seed)
                }),
            )
        }
        "conv_spatial" => {
            let (fi, fo, c, t) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 5));
            let inputs = vec![
                rand_tensor(rng, &[b, fi, c, t], -1.0, 1.0),
                rand_tensor(rng, &[fo, fi, c, 1], -1.0, 1.0),
                rand_tensor(rng, &[fo], -1.0, 1.0),
            ];
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv_spatial(v[0], v[1], v[2])?;
                    project(t, y, seed)
                }),
            )
        }
        "avg_pool_time" => {
            let t = dim(rng, 2, 9);
            let len = dim(rng, 1, t);
            let step = dim(rng, 1, 3);
            (
                vec![rand_tensor(rng, &[b, 2, t], -1.0, 1.0)],
                Box::new(move |tp, v| {
                    let y = tp.avg_pool_time(v[0], len, step)?;
                    project(tp, y, seed)
                }),
            )
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mode = if op == "batch_norm_train" { Mode::Train } else { Mode::Eval };
            let (f, c, t) = (dim(rng, 1, 3), dim(rng, 1, 2), dim(rng, 2, 4));
            let mean: Vec<f64> = (0..f).map(|_| rng.uniform(-0.3, 0.3)).collect();
            let var: Vec<f64> = (0..f).map(|_| rng.uniform(0.5, 1.5)).collect();
            let inputs = vec![
                rand_tensor(rng, &[b, f, c, t], -2.0, 2.0),
                rand_tensor(rng, &[f], 0.5, 1.5),
                rand_tensor(rng, &[f], -0.5, 0.5),
            ];
            (
                inputs,
                Box::new(move |tp, v| {
                    let mut stats = BatchNormStats { mean: mean.clone(), var: var.clone() };
                    let y = tp.batch_norm(v[0], v[1], v[2], &mut stats, mode)?;
                    project(tp, y, seed)
                }),
            )
        }
        "leaky_relu" | "relu" => {
            let slope = if op == "relu" { 0.0 } else { 0.01 };
            let n = dim(rng, 1, 12);
            (
                vec![rand_tensor(rng, &[n], -1.0, 1.0)],
                Box::new(move |tp, v| {
                    let y = tp.leaky_relu(v[0], slope)?;
                    project(tp, y, seed)
                }),
            )
        }
        "linear" => {
            let (m, i, o) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4));
            let inputs = vec![
                rand_tensor(rng, &[b, m, i], -1.0, 1.0),
                rand_tensor(rng, &[i, o], -1.0, 1.0),
                rand_tensor(rng, &[o], -1.0, 1.0),
            ];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = tp.linear(v[0], v[1], v[2])?;
                    project(tp, y, seed)
                }),
            )
        }
        "bmm" => {
            let (m, k, p) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
            let inputs = vec![rand_tensor(rng, &[b, m, k], -1.0, 1.0), rand_tensor(rng, &[b, k, p], -1.0, 1.0)];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = tp.bmm(v[0], v[1])?;
                    project(tp, y, seed)
                }),
            )
        }
        "softmax" => {
            let shape = [b, dim(rng, 1, 4), dim(rng, 1, 4)];
            let axis = dim(rng, 0, 2);
            (
                vec![rand_tensor(rng, &shape, -3.0, 3.0)],
                Box::new(move |tp, v| {
                    let y = tp.softmax(v[0], axis)?;
                    project(tp, y, seed)
                }),
            )
        }
        "dropout" => {
            let n = dim(rng, 2, 16);
            (
                vec![rand_tensor(rng, &[n], -1.0, 1.0)],
                Box::new(move |tp, v| {
                    let mut mask_rng = Rng::new(seed ^ 0x5a5a);
                    let y = tp.dropout(v[0], 0.5, &mut mask_rng, Mode::Train)?;
                    project(tp, y, seed)
                }),
            )
        }
        "layer_norm" => {
            let d = dim(rng, 2, 6);
            let inputs = vec![
                rand_tensor(rng, &[b, 3, d], -2.0, 2.0),
                rand_tensor(rng, &[d], 0.5, 1.5),
                rand_tensor(rng, &[d], -0.5, 0.5),
            ];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = tp.layer_norm(v[0], v[1], v[2])?;
                    project(tp, y, seed)
                }),
            )
        }
        "multi_head_attention" => {
            let heads = dim(rng, 1, 2);
            let d = heads * dim(rng, 1, 2);
            let s = dim(rng, 1, 4);
            let mut inputs = vec![rand_tensor(rng, &[b, s, d], -1.0, 1.0)];
            for _ in 0..4 {
                inputs.push(rand_tensor(rng, &[d, d], -1.0, 1.0));
                inputs.push(rand_tensor(rng, &[d], -0.5, 0.5));
            }
            (
                inputs,
                Box::new(move |tp, v| {
                    let p = AttentionParams {
                        wq: v[1],
                        bq: v[2],
                        wk: v[3],
                        bk: v[4],
                        wv: v[5],
                        bv: v[6],
                        wo: v[7],
                        bo: v[8],
                    };
                    let out = tp.multi_head_attention(v[0], heads, &p, 0.0, &mut Rng::new(0), Mode::Eval)?;
                    project(tp, out.output, seed)
                }),
            )
        }
        "cross_entropy" => {
            let k = dim(rng, 2, 4);
            let labels: Vec<usize> = (0..b).map(|_| dim(rng, 0, k - 1)).collect();
            (vec![rand_tensor(rng, &[b, k], -3.0, 3.0)], Box::new(move |tp, v| tp.softmax_cross_entropy(v[0], &labels)))
        }
        "broadcast_arith" => {
            let (m, n) = (dim(rng, 1, 3), dim(rng, 1, 4));
            let inputs = vec![
                rand_tensor(rng, &[b, m, n], -1.0, 1.0),
                rand_tensor(rng, &[m, n], -1.0, 1.0),
                rand_tensor(rng, &[n], -1.0, 1.0),
            ];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = tp.mul(v[0], v[1])?;
                    let y = tp.sub(y, v[2])?;
                    let y = tp.add(y, v[1])?;
                    let y = tp.scale(y, 1.5)?;
                    project(tp, y, seed)
                }),
            )
        }
        "permute_concat" => {
            let (m, n) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let inputs = vec![rand_tensor(rng, &[b, m, n], -1.0, 1.0), rand_tensor(rng, &[b, 2, n], -1.0, 1.0)];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = tp.concat(&[v[0], v[1]], 1)?;
                    let y = tp.permute(y, &[2, 0, 1])?;
                    let y = tp.reshape(y, &[tp.value(y).len()])?;
                    project(tp, y, seed)
                }),
            )
        }
        "unfold_time" => {
            let t = dim(rng, 2, 9);
            let len = dim(rng, 1, t);
            let step = dim(rng, 1, 3);
            (
                vec![rand_tensor(rng, &[b, 2, t], -1.0, 1.0)],
                Box::new(move |tp, v| {
                    let y = tp.unfold_time(v[0], len, step)?;
                    project(tp, y, seed)
                }),
            )
        }
        "spm_local_filter" => {
            let (k, c, t) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
            let inputs = vec![
                rand_tensor(rng, &[b, k, c, t], -1.0, 1.0),
                rand_tensor(rng, &[c, k * t], 0.5, 1.5),
                rand_tensor(rng, &[c, k * t], -0.3, 0.3),
            ];
            (
                inputs,
                Box::new(move |tp, v| {
                    let y = stages::spm_local_filter(tp, v[0], v[1], v[2])?;
                    project(tp, y, seed)
                }),
            )
        }
        "aggregate" => {
            let c = dim(rng, 2, 5);
            let mut order: Vec<usize> = (0..c).collect();
            rng.shuffle(&mut order);
            let split = dim(rng, 1, c - 1);
            let regions = vec![order[..split].to_vec(), order[split..].to_vec()];
            (
                vec![rand_tensor(rng, &[b, c, 3], -1.0, 1.0)],
                Box::new(move |tp, v| {
                    let y = stages::aggregate(tp, v[0], &regions)?;
                    project(tp, y, seed)
                }),
            )
        }
        other => unreachable!("unknown suite op {other}"),
    }
}

/// Runs `trials` randomized gradient checks of every kernel in [`SUITE_OPS`].
pub fn op_suite(trials: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let root = Rng::new(seed);
    SUITE_OPS
        .iter()
        .map(|&op| {
            let mut rng = root.fork(op);
            let mut worst = 0.0f64;
            for _ in 0..trials {
                let (inputs, f) = instance(op, &mut rng);
                let r = grad_check(&inputs, GRAD_CHECK_EPS, f)?;
                worst = worst.max(r.max_rel_error);
            }
            Ok(OpCheck { op, trials, max_rel_error: worst })
        })
        .collect()
}

/// Gradient check of the whole network (eval-mode batch norm, no dropout)
/// w.r.t. every parameter and the input, on a cross-entropy objective.
/// Batch-norm running statistics and the local filter are randomized first
/// so no stage sits at its initial identity.
pub fn full_model(config: &ModelConfig, batch: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut model = PatchFormerModel::<f64>::build(config, &mut rng)?;
    for (_, stats) in model.buffers.named_mut() {
        stats.mean.iter_mut().for_each(|m| *m = rng.uniform(-0.2, 0.2));
        stats.var.iter_mut().for_each(|v| *v = rng.uniform(0.5, 1.5));
    }
    for p in model.params.iter_mut() {
        if p.name.starts_with("spm.local") || p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            let base = if p.name.ends_with(".b") || p.name.ends_with(".beta") { 0.0 } else { 1.0 };
            p.value.data_mut().iter_mut().for_each(|v| *v = base + rng.uniform(-0.2, 0.2));
        }
    }
    let x = rand_tensor(&mut rng, &[batch, 1, config.c, config.l], -2.0, 2.0);
    let labels: Vec<usize> = (0..batch).map(|i| i % config.n_classes).collect();
    let mut inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
    inputs.push(x);
    let n = model.params.len();
    let buffers = model.buffers.clone();
    grad_check(&inputs, GRAD_CHECK_EPS, move |tape, vars| {
        let mut b = buffers.clone();
        let trace = model.forward_with(tape, &vars[..n], &mut b, vars[n], Mode::Eval, &mut Rng::new(0))?;
        tape.softmax_cross_entropy(trace.logits, &labels)
    })
}

/// The small configuration used for full-network gradient checks:
/// `c=4, l=64, k=4, l_token=8, n_head=2`, one encoder layer.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig { dropout_p: 0.0, token_layout: TokenLayout::PatchWindow, ..ModelConfig::toy() }
}
