//! Gradient-check suite over every differentiable op and the full training
//! graph, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{gradcheck, Graph, GradcheckOptions, GradcheckReport, Var};
use crate::error::{Error, Result};
use crate::loss::{contrastive_pair, multi_siamese, LossWeights};
use crate::model::{init_params, ModelConfig, PyramidConfig, StreamConfig, StreamSet};
use crate::params::ParamStore;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::trainer::{build_batch_plan, LossReduction, LrDataset, Mode, SourceVideos, StepInput};
use crate::transform::LrVideo;

/// Names of every check in the suite, in run order.
pub const CHECKS: &[&str] = &[
    "conv2d",
    "conv2d-strided",
    "max_pool2d",
    "relu",
    "linear",
    "linear-vector",
    "concat",
    "temporal_max",
    "select_row",
    "reshape",
    "add",
    "sub",
    "add_n",
    "scale",
    "add_scalar",
    "sum",
    "sum_squares",
    "sqrt",
    "softmax_cross_entropy",
    "contrastive-positive",
    "contrastive-negative",
    "multi-siamese-hinge-active",
    "multi-siamese-hinge-inactive",
    "embed+multi-siamese",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn opts(seed: u64, nonsmooth: bool, max_coords: Option<usize>) -> GradcheckOptions {
    GradcheckOptions {
        epsilon: 1e-6,
        tolerance: 1e-3,
        max_coords,
        skip_nonsmooth: nonsmooth,
        seed,
    }
}

type OpFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn simple(inputs: &[Tensor<f64>], f: OpFn, o: &GradcheckOptions) -> Result<GradcheckReport> {
    gradcheck(f, inputs, o)
}

/// Runs one named check with inputs drawn from `seed`.
pub fn run_check(name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["gradcheck", name]));
    let r = &mut rng;
    let smooth = opts(seed, false, None);
    let kinked = opts(seed, true, None);
    let report = match name {
        "conv2d" => simple(
            &[uniform(r, &[2, 5, 6, 3], -1.0, 1.0), uniform(r, &[3, 3, 3, 4], -0.5, 0.5), uniform(r, &[4], -0.5, 0.5)],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
                Ok(g.sum_squares(y))
            },
            &opts(seed, false, Some(40)),
        )?,
        "conv2d-strided" => simple(
            &[uniform(r, &[1, 7, 7, 2], -1.0, 1.0), uniform(r, &[3, 3, 2, 3], -0.5, 0.5), uniform(r, &[3], -0.5, 0.5)],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2, 0)?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "max_pool2d" => simple(
            &[uniform(r, &[2, 4, 6, 3], -1.0, 1.0)],
            |g, v| {
                let y = g.max_pool2d(v[0], 2, 2)?;
                Ok(g.sum_squares(y))
            },
            &kinked,
        )?,
        "relu" => simple(
            &[uniform(r, &[24], -1.0, 1.0)],
            |g, v| {
                let y = g.relu(v[0]);
                Ok(g.sum_squares(y))
            },
            &kinked,
        )?,
        "linear" => simple(
            &[uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[5, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "linear-vector" => simple(
            &[uniform(r, &[5], -1.0, 1.0), uniform(r, &[5, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "concat" => simple(
            &[uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0), uniform(r, &[5, 2], -1.0, 1.0)],
            |g, v| {
                let c = g.concat(&[v[0], v[1]], 1)?;
                let b = g_zero(g, 2);
                let y = g.linear(c, v[2], b)?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "temporal_max" => simple(
            &[
                uniform(r, &[6], -1.0, 1.0),
                uniform(r, &[6], -1.0, 1.0),
                uniform(r, &[6], -1.0, 1.0),
                uniform(r, &[6], -1.0, 1.0),
            ],
            |g, v| {
                let y = g.temporal_max(v)?;
                Ok(g.sum_squares(y))
            },
            &kinked,
        )?,
        "select_row" => simple(
            &[uniform(r, &[4, 3], -1.0, 1.0)],
            |g, v| {
                let a = g.select_row(v[0], 2)?;
                let b = g.select_row(v[0], 0)?;
                let s = g.sub(a, b)?;
                Ok(g.sum_squares(s))
            },
            &smooth,
        )?,
        "reshape" => simple(
            &[uniform(r, &[2, 6], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)],
            |g, v| {
                let x = g.reshape(v[0], &[3, 4])?;
                let b = g_zero(g, 2);
                let y = g.linear(x, v[1], b)?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "add" | "sub" => {
            let inputs = [uniform(r, &[7], -1.0, 1.0), uniform(r, &[7], -1.0, 1.0)];
            let f: OpFn = if name == "add" {
                |g, v| {
                    let y = g.add(v[0], v[1])?;
                    Ok(g.sum_squares(y))
                }
            } else {
                |g, v| {
                    let y = g.sub(v[0], v[1])?;
                    Ok(g.sum_squares(y))
                }
            };
            simple(&inputs, f, &smooth)?
        }
        "add_n" => simple(
            &[uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            |g, v| {
                let y = g.add_n(&[v[0], v[1], v[2], v[0]])?;
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "scale" => simple(
            &[uniform(r, &[6], -1.0, 1.0)],
            |g, v| {
                let y = g.scale(v[0], -1.7);
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "add_scalar" => simple(
            &[uniform(r, &[6], -1.0, 1.0)],
            |g, v| {
                let y = g.add_scalar(v[0], 0.4);
                Ok(g.sum_squares(y))
            },
            &smooth,
        )?,
        "sum" => simple(
            &[uniform(r, &[3, 4], -1.0, 1.0)],
            |g, v| {
                let s = g.sum(v[0]);
                Ok(g.sum_squares(s))
            },
            &smooth,
        )?,
        "sum_squares" => simple(&[uniform(r, &[9], -2.0, 2.0)], |g, v| Ok(g.sum_squares(v[0])), &smooth)?,
        "sqrt" => simple(
            &[uniform(r, &[6], 0.5, 2.0)],
            |g, v| {
                let y = g.sqrt(v[0]);
                Ok(g.sum(y))
            },
            &smooth,
        )?,
        "softmax_cross_entropy" => simple(
            &[uniform(r, &[3, 5], -2.0, 2.0)],
            |g, v| g.softmax_cross_entropy(v[0], &[4, 0, 2]),
            &smooth,
        )?,
        "contrastive-positive" => simple(
            &[uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            |g, v| contrastive_pair(g, v[0], v[1], true, 1.0),
            &smooth,
        )?,
        "contrastive-negative" => simple(
            &[uniform(r, &[5], -0.2, 0.2), uniform(r, &[5], -0.2, 0.2)],
            |g, v| contrastive_pair(g, v[0], v[1], false, 1.0),
            &smooth,
        )?,
        "multi-siamese-hinge-active" | "multi-siamese-hinge-inactive" => {
            let scale = if name.ends_with("inactive") { 3.0 } else { 0.1 };
            let inputs: Vec<Tensor<f64>> = (0..6).map(|_| uniform(r, &[4], -scale, scale)).collect();
            simple(&inputs, |g, v| multi_siamese(g, &v[..3], &v[3..], 1.0), &kinked)?
        }
        "embed+multi-siamese" => full_graph(seed, r)?,
        other => return Err(Error::invalid(format!("unknown gradient check {other:?}"))),
    };
    Ok(CheckResult {
        name: name.to_string(),
        seed,
        max_rel_error: report.max_rel_error,
        checked: report.checked,
        skipped: report.skipped,
        passed: report.passed(),
    })
}

fn g_zero(g: &mut Graph<f64>, n: usize) -> Var {
    g.constant(Tensor::zeros(&[n]))
}

/// One multi-siamese training step (two sources in the batch, n = 2, three
/// sources and two transforms in the pool) on a narrow two-stream model,
/// checked with respect to every parameter.
fn full_graph(seed: u64, rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let cfg = ModelConfig {
        streams: StreamSet::TwoStream,
        stream: StreamConfig {
            conv_channels: [2, 3, 2],
            feature_dim: 3,
        },
        pyramid: PyramidConfig { levels: 2 },
        embed_dim: 5,
        num_classes: 3,
    };
    let frames = 4;
    let sources = (0..3)
        .map(|s| {
            let variants = (0..2)
                .map(|k| {
                    let rgb = Tensor::from_fn(&[frames, 12, 16, 3], |_| rng.gen_range(0.0..1.0f32));
                    let mut v = LrVideo::new(format!("s{s}"), k, s, rgb)?;
                    v.flow = Some(Tensor::from_fn(&[frames, 12, 16, 20], |_| rng.gen_range(-1.0..1.0f32)));
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            Ok(SourceVideos {
                id: format!("s{s}"),
                label: s,
                variants,
            })
        })
        .collect::<Result<_>>()?;
    let data = LrDataset {
        sources,
        num_transforms: 2,
        identity: 0,
        num_classes: 3,
    };
    let plan = build_batch_plan(&[0, 2], &[0, 1, 2], 2, 2, rng)?;
    let store = init_params(&cfg, seed)?;
    let names = store.names();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).unwrap().value().cast()).collect();
    for (n, t) in names.iter().zip(inputs.iter_mut()) {
        if n.ends_with(".b") {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(0.0..0.2));
        }
    }
    let empty = ParamStore::<f64>::new();
    let weights = LossWeights {
        lambda1: 1.0,
        lambda2: 1.0,
        margin: 2.0,
    };
    gradcheck(
        |g, v| {
            for (n, &var) in names.iter().zip(v) {
                g.bind_param(n, var);
            }
            StepInput {
                cfg: &cfg,
                params: &empty,
                data: &data,
                cache: None,
                mode: Mode::MultiSiamese,
                weights,
                reduction: LossReduction::Sum,
            }
            .build(g, &plan)
        },
        &inputs,
        &opts(seed, true, Some(6)),
    )
}

/// Every check for every seed, in parallel; results ordered by check, then
/// seed.
pub fn gradcheck_suite(seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let jobs: Vec<(&str, u64)> = CHECKS.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    jobs.par_iter().map(|&(c, s)| run_check(c, s)).collect()
}
