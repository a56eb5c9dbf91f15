use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stages::{plan_for, training_transforms};
use super::*;
use crate::autodiff::Graph;
use crate::config::RunConfig;
use crate::data::{generate_toy, ToyConfig};
use crate::loss::LossWeights;
use crate::model::{init_params, ModelConfig, StreamConfig, StreamKind, StreamSet};
use crate::params::ParamStore;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::transform::{build_transform_grid, DegradeConfig};

fn tiny_toy(classes: usize, per_class: usize) -> ToyConfig {
    ToyConfig {
        num_classes: classes,
        videos_per_class: per_class,
        frames: 16,
        width: 64,
        height: 48,
        sprite_min: 8,
        sprite_max: 12,
        seed: 7,
    }
}

fn tiny_model(classes: usize, streams: StreamSet) -> ModelConfig {
    ModelConfig {
        streams,
        stream: StreamConfig {
            conv_channels: [4, 6, 6],
            feature_dim: 8,
        },
        embed_dim: 16,
        num_classes: classes,
        ..ModelConfig::default()
    }
}

/// Three transforms (identity in the middle); optional random flow stacks.
fn tiny_data(classes: usize, per_class: usize, flow_seed: Option<u64>) -> LrDataset {
    let hr = generate_toy(&tiny_toy(classes, per_class)).unwrap();
    let set = build_transform_grid(&[-5.0, 0.0, 5.0], &[0.0], &[0.0]).unwrap();
    let mut data = LrDataset::build(&hr, &set, &DegradeConfig::default(), None, classes).unwrap();
    if let Some(seed) = flow_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut data.sources {
            for v in &mut s.variants {
                v.flow = Some(Tensor::from_fn(&[v.num_frames(), 12, 16, 20], |_| rng.gen_range(-1.0..1.0)));
            }
        }
    }
    data
}

fn quick_train(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        stage1: Stage1Config {
            skip: true,
            ..Stage1Config::default()
        },
        lr: 0.01,
        batch_size: 2,
        n: 2,
        max_epochs: 3,
        patience: 2,
        ..TrainConfig::default()
    }
}

// ---- batch plans ----

proptest! {
    #[test]
    fn plan_b2_never_shares_the_item_source(seed in any::<u64>(), n in 2usize..4, sources in 2usize..6) {
        let pool: Vec<usize> = (0..sources).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = build_batch_plan(&pool, &pool, 5, n, &mut rng).unwrap();
        for it in &plan.items {
            prop_assert_eq!(it.b1.len(), n);
            prop_assert_eq!(it.b2.len(), n);
            prop_assert_eq!(it.b1.iter().collect::<HashSet<_>>().len(), n);
            prop_assert!(it.b2.iter().all(|&(s, k)| s != it.source && k < 5));
        }
        prop_assert_eq!(plan.branches().len(), 2 * n * sources);
    }
}

#[test]
fn plan_with_three_sources_and_n2() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = build_batch_plan(&[0, 1, 2], &[0, 1, 2], 4, 2, &mut rng).unwrap();
        assert!(plan.items.iter().all(|it| it.b2.iter().all(|&(s, _)| s != it.source)));
    }
}

#[test]
fn plan_is_deterministic() {
    let a = build_batch_plan(&[0, 3], &[0, 1, 2, 3], 9, 4, &mut substream(5, &["p"])).unwrap();
    let b = build_batch_plan(&[0, 3], &[0, 1, 2, 3], 9, 4, &mut substream(5, &["p"])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn b1_transform_frequency_is_uniform() {
    let (k, n, trials) = (10usize, 3usize, 1000usize);
    let mut counts = vec![0usize; k];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..trials {
        let plan = build_batch_plan(&[0], &[0, 1], k, n, &mut rng).unwrap();
        for &t in &plan.items[0].b1 {
            counts[t] += 1;
        }
    }
    let p = n as f64 / k as f64;
    let mean = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (t, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "transform {t}: {c} vs {mean} +- {sigma}");
    }
}

#[test]
fn full_n_uses_every_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let plan = build_batch_plan(&[1], &[0, 1], 6, 6, &mut rng).unwrap();
    let mut b1 = plan.items[0].b1.clone();
    b1.sort_unstable();
    assert_eq!(b1, (0..6).collect::<Vec<_>>());
}

#[test]
fn single_source_plan_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(build_batch_plan(&[0], &[0], 4, 2, &mut rng).is_err());
    assert!(build_batch_plan(&[0], &[0, 1], 4, 5, &mut rng).is_err());
}

#[test]
fn epoch_batches_cover_each_source_once() {
    let train: Vec<usize> = (0..11).collect();
    let batches = epoch_batches(&train, 4, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 3]);
    let mut all: Vec<usize> = batches.concat();
    all.sort_unstable();
    assert_eq!(all, train);
}

// ---- metrics ----

#[test]
fn metrics_match_confusion_oracle() {
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth: Vec<usize> = (0..100).map(|_| rng.gen_range(0..c)).collect();
    let pred: Vec<usize> = (0..100).map(|_| rng.gen_range(0..c)).collect();
    let m = metrics_from_predictions(&pred, &truth, c).unwrap();
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    assert!((m.accuracy - correct as f64 / 100.0).abs() < 1e-9);
    for class in 0..c {
        let total = truth.iter().filter(|&&t| t == class).count();
        let hit = pred.iter().zip(&truth).filter(|(&p, &t)| t == class && p == class).count();
        let want = hit as f64 / total as f64;
        assert!((m.per_class[class].unwrap() - want).abs() < 1e-9);
    }
    assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 100);
    assert!(m.binary.is_none());
}

#[test]
fn binary_metrics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let truth: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
    let pred: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
    let m = metrics_from_predictions(&pred, &truth, 2).unwrap();
    let count = |p: usize, t: usize| pred.iter().zip(&truth).filter(|(&a, &b)| a == p && b == t).count() as f64;
    let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let b = m.binary.unwrap();
    assert!((b.precision - precision).abs() < 1e-9);
    assert!((b.recall - recall).abs() < 1e-9);
    assert!((b.f1 - 2.0 * precision * recall / (precision + recall)).abs() < 1e-9);
}

#[test]
fn perfect_and_constant_predictors() {
    let truth: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let m = metrics_from_predictions(&truth, &truth, 2).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.binary.unwrap().f1, 1.0);

    let c = 5;
    let truth: Vec<usize> = (0..50).map(|i| i % c).collect();
    let m = metrics_from_predictions(&vec![3; 50], &truth, c).unwrap();
    assert!((m.accuracy - 1.0 / c as f64).abs() < 1e-12);
}

#[test]
fn empty_split_is_rejected() {
    assert!(metrics_from_predictions(&[], &[], 3).is_err());
    let data = tiny_data(2, 2, None);
    let params = init_params(&tiny_model(2, StreamSet::OneStream), 0).unwrap();
    assert!(evaluate(&tiny_model(2, StreamSet::OneStream), &params, &data, &[], None).is_err());
}

// ---- stage 1 ----

fn stage1_cfg(steps: usize) -> Stage1Config {
    Stage1Config {
        skip: false,
        lr: 0.01,
        momentum: 0.9,
        batch_frames: 16,
        steps,
    }
}

#[test]
fn stage1_loss_decreases() {
    let data = tiny_data(3, 3, None);
    let cfg = tiny_model(3, StreamSet::OneStream);
    let mut params = init_params(&cfg, 1).unwrap();
    let all: Vec<usize> = (0..data.sources.len()).collect();
    let losses =
        stage1_pretrain(&mut params, &cfg, &stage1_cfg(50), &data, &all, &[1], StreamKind::Spatial, 1).unwrap();
    assert_eq!(losses.len(), 50);
    assert!(losses.iter().all(|l| l.is_finite()));
    let median = |xs: &[f32]| {
        let mut v = xs.to_vec();
        v.sort_by(f32::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    assert!(median(&losses[40..]) < median(&losses[..10]), "{losses:?}");
    assert!(!params.names().iter().any(|n| n.starts_with("stage1.")));
}

#[test]
fn spatial_stage1_ignores_flow() {
    let cfg = tiny_model(2, StreamSet::TwoStream);
    let run = |flow_seed| {
        let data = tiny_data(2, 2, Some(flow_seed));
        let mut params = init_params(&cfg, 4).unwrap();
        let all: Vec<usize> = (0..data.sources.len()).collect();
        stage1_pretrain(&mut params, &cfg, &stage1_cfg(5), &data, &all, &[0, 1, 2], StreamKind::Spatial, 4).unwrap();
        params
    };
    assert_eq!(run(1).checksum(), run(2).checksum());
}

#[test]
fn stage1_is_deterministic_and_leaves_other_stream_alone() {
    let cfg = tiny_model(2, StreamSet::TwoStream);
    let data = tiny_data(2, 2, Some(3));
    let all: Vec<usize> = (0..data.sources.len()).collect();
    let run = || {
        let mut params = init_params(&cfg, 9).unwrap();
        let l = stage1_pretrain(&mut params, &cfg, &stage1_cfg(4), &data, &all, &[1], StreamKind::Temporal, 9).unwrap();
        (params, l)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    let init = init_params(&cfg, 9).unwrap();
    for p in init.iter() {
        let same = a.get(&p.name).unwrap().value().bit_eq(p.value());
        assert_eq!(same, !p.name.starts_with("temporal."), "{}", p.name);
    }
}

#[test]
fn temporal_stage1_needs_flow() {
    let cfg = tiny_model(2, StreamSet::TwoStream);
    let data = tiny_data(2, 2, None);
    let mut params = init_params(&cfg, 0).unwrap();
    let e = stage1_pretrain(&mut params, &cfg, &stage1_cfg(1), &data, &[0], &[1], StreamKind::Temporal, 0);
    assert!(matches!(e, Err(crate::Error::MissingArtifact(_))));
}

// ---- stage 2 ----

#[test]
fn baseline_plans_hold_one_identity_video_per_source() {
    let data = tiny_data(2, 2, None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = plan_for(Mode::Baseline, &[0, 3], &[0, 1, 2, 3], &data, 2, &mut rng).unwrap();
    for it in &plan.items {
        assert_eq!(it.b1, vec![data.identity]);
        assert!(it.b2.is_empty());
    }
    assert_eq!(training_transforms(Mode::Baseline, &data), vec![data.identity]);
}

#[test]
fn augment_and_multi_siamese_draw_identical_plans() {
    let data = tiny_data(2, 3, None);
    assert_eq!(training_transforms(Mode::Augment, &data), training_transforms(Mode::MultiSiamese, &data));
    let train: Vec<usize> = (0..data.sources.len()).collect();
    let plans = |mode| {
        let mut rng = substream(3, &["stage2"]);
        let mut out = Vec::new();
        for _ in 0..3 {
            for b in epoch_batches(&train, 2, &mut rng) {
                out.push(plan_for(mode, &b, &train, &data, 2, &mut rng).unwrap());
            }
        }
        out
    };
    assert_eq!(plans(Mode::Augment), plans(Mode::MultiSiamese));
}

fn step_loss(mode: Mode, weights: LossWeights, plan: &BatchPlan, data: &LrDataset, params: &ParamStore) -> f32 {
    let cfg = tiny_model(data.num_classes, StreamSet::OneStream);
    let step = StepInput {
        cfg: &cfg,
        params,
        data,
        cache: None,
        mode,
        weights,
        reduction: LossReduction::Sum,
    };
    let mut g = Graph::new();
    let l = step.build(&mut g, plan).unwrap();
    g.value(l).item()
}

#[test]
fn augment_step_is_multi_siamese_without_metric_term() {
    let data = tiny_data(2, 2, None);
    let params = init_params(&tiny_model(2, StreamSet::OneStream), 2).unwrap();
    let plan = build_batch_plan(&[0, 2], &[0, 1, 2, 3], 3, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let w = LossWeights::default();
    let aug = step_loss(Mode::Augment, LossWeights { lambda1: 0.0, ..w }, &plan, &data, &params);
    let ms0 = step_loss(Mode::MultiSiamese, LossWeights { lambda1: 0.0, ..w }, &plan, &data, &params);
    let ms = step_loss(Mode::MultiSiamese, w, &plan, &data, &params);
    assert_eq!(aug.to_bits(), ms0.to_bits());
    assert!(ms >= aug);
}

#[test]
fn cached_features_give_the_same_step_loss() {
    let data = tiny_data(2, 2, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let params = init_params(&cfg, 6).unwrap();
    let plan = build_batch_plan(&[1, 2], &[0, 1, 2, 3], 3, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let cache = FeatureCache::compute(&cfg, &params, &data, &[0, 1, 2, 3], &[0, 1, 2]).unwrap();
    assert_eq!(cache.len(), 12);
    let run = |cache| {
        let step = StepInput {
            cfg: &cfg,
            params: &params,
            data: &data,
            cache,
            mode: Mode::MultiSiamese,
            weights: LossWeights::default(),
            reduction: LossReduction::Sum,
        };
        let mut g = Graph::new();
        let l = step.build(&mut g, &plan).unwrap();
        g.value(l).item()
    };
    let (a, b) = (run(None), run(Some(&cache)));
    assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn every_branch_reads_one_parameter_instance() {
    let data = tiny_data(2, 3, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let params = init_params(&cfg, 1).unwrap();
    let bound = |n| {
        let plan = build_batch_plan(&[0, 4], &[0, 1, 2, 3, 4, 5], 3, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let step = StepInput {
            cfg: &cfg,
            params: &params,
            data: &data,
            cache: None,
            mode: Mode::MultiSiamese,
            weights: LossWeights::default(),
            reduction: LossReduction::Sum,
        };
        let mut g = Graph::new();
        step.build(&mut g, &plan).unwrap();
        let mut names: Vec<String> = g.bound_params().map(|(k, _)| k.to_string()).collect();
        names.sort();
        let vars: HashSet<_> = g.bound_params().map(|(_, v)| v).collect();
        (names, vars.len())
    };
    let (n2, v2) = bound(2);
    let (n3, v3) = bound(3);
    assert_eq!(n2, n3);
    assert_eq!(v2, params.len());
    assert_eq!(v3, params.len());
}

fn split_of(data: &LrDataset) -> TrainSplit {
    let parts = ExperimentData::for_seed(data, 0, 0.25).unwrap();
    parts.split
}

#[test]
fn stage2_is_deterministic() {
    let data = tiny_data(2, 4, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let split = split_of(&data);
    let run = || {
        let p = init_params(&cfg, 3).unwrap();
        stage2_train(p, &cfg, &quick_train(Mode::MultiSiamese), &LossWeights::default(), &data, &split, 3, None)
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_eq!(
        a.first_step_losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.first_step_losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.history, b.history);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let data = tiny_data(2, 4, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let split = split_of(&data);
    assert!(!split.val.is_empty());
    let tc = TrainConfig {
        max_epochs: 6,
        patience: 2,
        ..quick_train(Mode::Augment)
    };
    let out = stage2_train(init_params(&cfg, 5).unwrap(), &cfg, &tc, &LossWeights::default(), &data, &split, 5, None)
        .unwrap();
    let best = out.best_val_accuracy.unwrap();
    let last = out.history.last().unwrap().val_accuracy.unwrap();
    assert!(best >= last);
    assert_eq!(out.history[out.best_epoch - 1].val_accuracy, Some(best));
    let again = evaluate(&cfg, &out.params, &data, &split.val, None).unwrap();
    assert_eq!(again.accuracy, best);
    assert!(out.history.len() <= tc.max_epochs);
}

#[test]
fn frozen_streams_stay_fixed() {
    let data = tiny_data(2, 4, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let split = split_of(&data);
    let init = init_params(&cfg, 8).unwrap();
    let tc = TrainConfig {
        freeze_streams: true,
        max_epochs: 2,
        ..quick_train(Mode::MultiSiamese)
    };
    let out = stage2_train(init.clone(), &cfg, &tc, &LossWeights::default(), &data, &split, 8, None).unwrap();
    let mut moved = 0;
    for p in init.iter() {
        let same = out.params.get(&p.name).unwrap().value().bit_eq(p.value());
        if p.name.starts_with("spatial.") {
            assert!(same, "{} moved", p.name);
        } else if !same {
            moved += 1;
        }
        assert!(out.params.get(&p.name).unwrap().trainable);
    }
    assert!(moved > 0);
}

#[test]
fn nan_weights_abort_with_numeric_error() {
    let data = tiny_data(2, 3, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let mut params = init_params(&cfg, 0).unwrap();
    let shape = params.get("classifier.b").unwrap().value().shape().to_vec();
    params.set("classifier.b", Tensor::full(&shape, f32::NAN));
    let split = TrainSplit {
        train: (0..data.sources.len()).collect(),
        val: vec![],
    };
    let e = stage2_train(params, &cfg, &quick_train(Mode::Baseline), &LossWeights::default(), &data, &split, 0, None);
    assert!(matches!(e, Err(crate::Error::Numeric(_))));
}

#[test]
fn metric_only_training_pulls_variants_together() {
    let data = tiny_data(2, 3, None);
    let cfg = tiny_model(2, StreamSet::OneStream);
    let train: Vec<usize> = (0..data.sources.len()).collect();
    let split = TrainSplit {
        train: train.clone(),
        val: vec![],
    };
    let tc = TrainConfig {
        lr: 0.002,
        momentum: 0.0,
        batch_size: train.len(),
        n: data.num_transforms,
        max_epochs: 20,
        ..quick_train(Mode::MultiSiamese)
    };
    let weights = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        margin: 1e-3,
    };
    let transforms: Vec<usize> = (0..data.num_transforms).collect();
    let intra = |p: &ParamStore| -> f64 {
        let e = embed_sources(&cfg, p, &data, &train, &transforms, None).unwrap();
        let mut sum = 0.0;
        for (i, (si, ei)) in e.iter().enumerate() {
            for (sj, ej) in &e[i + 1..] {
                if si == sj {
                    sum += ei.data().iter().zip(ej.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
                }
            }
        }
        sum
    };
    let init = init_params(&cfg, 12).unwrap();
    let mut curve = vec![intra(&init)];
    let mut record = |_: &EpochRecord, p: &ParamStore| curve.push(intra(p));
    let out = stage2_train(init, &cfg, &tc, &weights, &data, &split, 12, Some(&mut record)).unwrap();
    assert_eq!(out.history.len(), 20);
    assert_eq!(curve.len(), 21);
    for w in curve.windows(2) {
        assert!(w[1] < w[0], "{curve:?}");
    }
}

#[test]
fn history_is_one_json_object_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.jsonl");
    let recs = vec![
        EpochRecord {
            epoch: 1,
            train_loss: 2.5,
            val_accuracy: Some(0.5),
        },
        EpochRecord {
            epoch: 2,
            train_loss: 1.25,
            val_accuracy: None,
        },
    ];
    write_history(&p, &recs).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let back: Vec<EpochRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, recs);
}

// ---- experiment ----

#[test]
fn mean_std_values() {
    assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-12);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn distance_ratio_by_hand() {
    let v = |x: f32| Tensor::from_vec(vec![x, 0.0]);
    // Groups {0, 1} and {10, 12}: intra 1 and 2, inter 10, 12, 9, 11.
    let e = vec![(0, v(0.0)), (0, v(1.0)), (1, v(10.0)), (1, v(12.0))];
    let r = distance_ratio(&e).unwrap();
    assert!((r - 1.5 / 10.5).abs() < 1e-12);
    assert!(distance_ratio(&[(0, v(0.0)), (1, v(1.0))]).is_err());
}

#[test]
fn seed_splits_are_disjoint_and_stratified() {
    let data = tiny_data(2, 6, None);
    let p = ExperimentData::for_seed(&data, 4, 0.2).unwrap();
    let all: Vec<usize> = [p.split.train.clone(), p.split.val.clone(), p.test.clone()].concat();
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), data.sources.len());
    assert_eq!(p.test.len(), 6);
    assert_eq!(p.split.val.len(), 2);
    for c in 0..2 {
        assert_eq!(p.test.iter().filter(|&&s| data.sources[s].label == c).count(), 3);
    }
    assert_ne!(p, ExperimentData::for_seed(&data, 5, 0.2).unwrap());
}

fn tiny_run(seeds: Vec<u64>) -> RunConfig {
    let mut cfg = RunConfig {
        seeds,
        model: tiny_model(2, StreamSet::OneStream),
        train: TrainConfig {
            stage1: stage1_cfg(3),
            max_epochs: 2,
            ..quick_train(Mode::MultiSiamese)
        },
        ..RunConfig::default()
    };
    cfg.toy = tiny_toy(2, 4);
    cfg
}

#[test]
fn run_experiment_is_repeatable() {
    let data = tiny_data(2, 4, None);
    let cfg = tiny_run(vec![0, 1]);
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg, &data, &Mode::ALL, Some(dir.path())).unwrap();
    let b = run_experiment(&cfg, &data, &Mode::ALL, None).unwrap();
    assert_eq!(a.runs, b.runs);
    assert_eq!(a.outcomes, b.outcomes);
    assert_eq!(a.runs.len(), 3);
    assert!(a.runs.iter().all(|r| r.seeds == vec![0, 1] && !r.single_seed));
    assert!(a.outcomes.iter().all(|o| o.ratio_before.is_some() && o.ratio_after.is_some()));
    assert!(dir.path().join("run_stats.json").exists());
    assert!(dir.path().join("seed-1/multi-siamese/history.jsonl").exists());
    assert!(dir.path().join("seed-0/baseline/model.lrck").exists());
    assert!(a.table().contains("multi-siamese"));
}

#[test]
fn single_seed_is_flagged() {
    let data = tiny_data(2, 4, None);
    let r = run_experiment(&tiny_run(vec![3]), &data, &[Mode::Baseline], None).unwrap();
    let s = r.stats(Mode::Baseline).unwrap();
    assert!(s.single_seed);
    assert_eq!(s.std, 0.0);
    assert_eq!(s.accuracies.len(), 1);
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            n: 1,
            ..TrainConfig::default()
        },
        TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        },
    ];
    for b in bad {
        assert!(b.validate().is_err(), "{b:?}");
    }
    assert!(TrainConfig {
        n: 1,
        mode: Mode::Baseline,
        ..TrainConfig::default()
    }
    .validate()
    .is_ok());
    assert_eq!("augment".parse::<Mode>().unwrap(), Mode::Augment);
    assert!("siamese".parse::<Mode>().is_err());
}
