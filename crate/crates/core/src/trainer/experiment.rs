//! Multi-seed train/evaluate runs across modes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureCache, LrDataset};
use super::metrics::{evaluate, infer_embedding, Metrics};
use super::stages::{stage1_pretrain, stage2_train, write_history, EpochRecord, Stage2Outcome};
use super::{Mode, TrainConfig};
use crate::config::RunConfig;
use crate::data::{fingerprint, random_half, save_checkpoint, stratified_holdout, Checkpoint};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{init_params, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Source indices used for optimisation and for early stopping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Train/val/test partition of one seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentData {
    pub split: TrainSplit,
    pub test: Vec<usize>,
}

impl ExperimentData {
    /// Random half `seed` of the sources for training, the rest for test;
    /// then `val_fraction` of each training class held out.
    pub fn for_seed(data: &LrDataset, seed: u64, val_fraction: f64) -> Result<Self> {
        let items: Vec<(String, usize)> = data.sources.iter().map(|s| (s.id.clone(), s.label)).collect();
        let half = random_half(&items, seed, 0)?;
        let train_items: Vec<(String, usize)> = half
            .train
            .iter()
            .map(|id| (id.clone(), data.sources[data.index_of(id).unwrap()].label))
            .collect();
        let (keep, held) = stratified_holdout(&train_items, val_fraction, seed, "val")?;
        Ok(Self {
            split: TrainSplit {
                train: data.indices_of(&keep)?,
                val: data.indices_of(&held)?,
            },
            test: data.indices_of(&half.test)?,
        })
    }
}

/// Fresh parameters with every configured stream pretrained on frames of
/// the given LR videos (unless stage 1 is skipped). Training uses the
/// identity transform only.
pub fn pretrain_streams(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &LrDataset,
    sources: &[usize],
    transforms: &[usize],
    seed: u64,
) -> Result<(ParamStore, Vec<Vec<f32>>)> {
    let mut params = init_params(cfg, seed)?;
    let mut curves = Vec::new();
    if !tc.stage1.skip {
        for &kind in cfg.streams.kinds() {
            curves.push(stage1_pretrain(&mut params, cfg, &tc.stage1, data, sources, transforms, kind, seed)?);
        }
    }
    Ok((params, curves))
}

/// Stage 1 then stage 2 for one mode and seed.
#[allow(clippy::too_many_arguments)]
pub fn train_one(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    weights: &LossWeights,
    data: &LrDataset,
    split: &TrainSplit,
    seed: u64,
    pretrained: Option<ParamStore>,
) -> Result<Stage2Outcome> {
    let params = match pretrained {
        Some(p) => p,
        None => pretrain_streams(cfg, tc, data, &split.train, &[data.identity], seed)?.0,
    };
    stage2_train(params, cfg, tc, weights, data, split, seed, None)
}

/// Inference embeddings of every (source, transform) pair, tagged with the
/// source index.
pub fn embed_sources(
    cfg: &ModelConfig,
    params: &ParamStore,
    data: &LrDataset,
    sources: &[usize],
    transforms: &[usize],
    cache: Option<&FeatureCache>,
) -> Result<Vec<(usize, Tensor)>> {
    let keys: Vec<(usize, usize)> = sources.iter().flat_map(|&s| transforms.iter().map(move |&k| (s, k))).collect();
    keys.par_iter()
        .map(|&(s, k)| Ok((s, infer_embedding(cfg, params, data, s, k, cache)?)))
        .collect()
}

fn euclidean(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean distance between embeddings of the same group over the mean
/// distance between embeddings of different groups.
pub fn distance_ratio(embeddings: &[(usize, Tensor)]) -> Result<f64> {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for (i, (gi, ei)) in embeddings.iter().enumerate() {
        for (gj, ej) in &embeddings[i + 1..] {
            let d = euclidean(ei, ej);
            if gi == gj {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 {
        return Err(Error::invalid("distance ratio needs two groups and a group with two members"));
    }
    let inter = inter / nx as f64;
    if inter == 0.0 {
        return Err(Error::Numeric("all inter-group distances are zero".into()));
    }
    Ok(intra / ni as f64 / inter)
}

/// Mean and sample standard deviation; a single value has std 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mode: Mode,
    pub test: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_accuracy: Option<f64>,
    /// Intra/inter-source distance ratio over every transform of the test
    /// sources, before stage 2 and after it.
    pub ratio_before: Option<f64>,
    pub ratio_after: Option<f64>,
    pub first_step_losses: Vec<f32>,
    pub checksum: u64,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

/// Test accuracy over seeds for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Set when only one seed ran, so `std` carries no information.
    pub single_seed: bool,
}

impl RunStats {
    pub fn from_outcomes(mode: Mode, outcomes: &[SeedOutcome]) -> Self {
        let mine: Vec<&SeedOutcome> = outcomes.iter().filter(|o| o.mode == mode).collect();
        let accuracies: Vec<f64> = mine.iter().map(|o| o.test.accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        Self {
            mode,
            seeds: mine.iter().map(|o| o.seed).collect(),
            single_seed: accuracies.len() == 1,
            accuracies,
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunStats>,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn stats(&self, mode: Mode) -> Option<&RunStats> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    /// Plain-text comparison across modes.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<14} {:>6} {:>9} {:>8}", "mode", "seeds", "mean acc", "std").unwrap();
        for r in &self.runs {
            let flag = if r.single_seed { " (single seed)" } else { "" };
            writeln!(
                s,
                "{:<14} {:>6} {:>8.2}% {:>7.2}{flag}",
                r.mode.name(),
                r.seeds.len(),
                100.0 * r.mean,
                100.0 * r.std
            )
            .unwrap();
        }
        s
    }
}

/// Trains and evaluates every mode for every seed of `cfg`. All modes of a
/// seed start stage 2 from one shared stage-1 result. With `out`, per-run
/// history and checkpoints are written under `out/seed-<s>/<mode>/`, and
/// `run_stats.json` at the top.
pub fn run_experiment(cfg: &RunConfig, data: &LrDataset, modes: &[Mode], out: Option<&Path>) -> Result<ExperimentReport> {
    if modes.is_empty() {
        return Err(Error::invalid("no modes selected"));
    }
    let all_transforms: Vec<usize> = (0..data.num_transforms).collect();
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let parts = ExperimentData::for_seed(data, seed, cfg.train.val_fraction)?;
        log::info!(
            "seed {seed}: {} train, {} val, {} test sources",
            parts.split.train.len(),
            parts.split.val.len(),
            parts.test.len()
        );
        let tc = TrainConfig { mode: modes[0], ..cfg.train };
        let (pretrained, curves) =
            pretrain_streams(&cfg.model, &tc, data, &parts.split.train, &[data.identity], seed)?;
        for c in &curves {
            log::info!(
                "seed {seed} stage 1: loss {:.4} -> {:.4}",
                c.first().copied().unwrap_or(f32::NAN),
                c.last().copied().unwrap_or(f32::NAN)
            );
        }
        for &mode in modes {
            let tc = TrainConfig { mode, ..cfg.train };
            let params = pretrained.clone();
            let test_cache = if tc.freeze_streams {
                Some(FeatureCache::compute(&cfg.model, &params, data, &parts.test, &all_transforms)?)
            } else {
                None
            };
            let ratio = |p: &ParamStore| -> Result<Option<f64>> {
                if parts.test.len() < 2 {
                    return Ok(None);
                }
                let e = embed_sources(&cfg.model, p, data, &parts.test, &all_transforms, test_cache.as_ref())?;
                distance_ratio(&e).map(Some)
            };
            let ratio_before = if data.num_transforms > 1 { ratio(&params)? } else { None };
            let outcome = stage2_train(params, &cfg.model, &tc, &cfg.loss, data, &parts.split, seed, None)?;
            let test = evaluate(&cfg.model, &outcome.params, data, &parts.test, test_cache.as_ref())?;
            let ratio_after = if data.num_transforms > 1 { ratio(&outcome.params)? } else { None };
            log::info!("seed {seed} {mode}: test accuracy {:.4}", test.accuracy);
            if let Some(dir) = out {
                let d = dir.join(format!("seed-{seed}")).join(mode.name());
                fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                write_history(d.join("history.jsonl"), &outcome.history)?;
                let ck = Checkpoint::from_store(&outcome.params, fingerprint(&cfg.model));
                save_checkpoint(d.join("model.lrck"), &ck)?;
                let p = d.join("metrics.json");
                fs::write(&p, serde_json::to_string_pretty(&test).unwrap()).map_err(|e| Error::io(&p, e))?;
            }
            outcomes.push(SeedOutcome {
                seed,
                mode,
                test,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.history.len(),
                best_val_accuracy: outcome.best_val_accuracy,
                ratio_before,
                ratio_after,
                first_step_losses: outcome.first_step_losses,
                checksum: outcome.params.checksum(),
                history: outcome.history,
            });
        }
    }
    let report = ExperimentReport {
        runs: modes.iter().map(|&m| RunStats::from_outcomes(m, &outcomes)).collect(),
        outcomes,
    };
    if let Some(dir) = out {
        let p = dir.join("run_stats.json");
        fs::write(&p, serde_json::to_string_pretty(&report).unwrap()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
