//! File-level stages behind the command line: LR preparation, flow
//! precomputation, training, evaluation and embedding export.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{
    fingerprint, load_checkpoint, random_half, stratified_holdout, write_tensor, Manifest, ManifestKind,
    SplitDef, VideoEntry, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::flow::{video_flow_stacks, FlowConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::trainer::{
    distance_ratio, embed_sources, evaluate, run_experiment, ExperimentData, ExperimentReport, LrDataset, Metrics,
    Mode, TrainSplit,
};
use crate::transform::{degrade, HrVideo};
use crate::{LR_HEIGHT, LR_WIDTH};

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::invalid(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

/// Id of the LR video made from `source` with transform `k`.
pub fn lr_video_id(source: &str, k: usize) -> String {
    format!("{source}#{k}")
}

/// Degrades every HR video of `hr_manifest` under every configured
/// transform into `out`, writing an LR manifest with one random-half split
/// (train/val/test) per configured seed. Returns the manifest path.
pub fn prepare_lr(hr_manifest: &Path, out: &Path, cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let hr = Manifest::load(hr_manifest)?;
    if hr.kind != ManifestKind::Hr {
        return Err(Error::Data(format!("{} is not an HR manifest", hr_manifest.display())));
    }
    let manifest_path = out.join(MANIFEST_FILE);
    refuse_overwrite(&manifest_path, force)?;
    let set = cfg.transform_set()?;
    let jobs: Vec<(usize, usize)> = (0..hr.videos.len()).flat_map(|v| (0..set.n()).map(move |k| (v, k))).collect();
    let entries: Vec<VideoEntry> = jobs
        .par_iter()
        .map(|&(vi, k)| {
            let e = &hr.videos[vi];
            // Each worker reloads the source; cheaper than holding every HR video.
            let video = HrVideo::from_tensor(e.id.clone(), e.label, &hr.load_video(e)?)?;
            let lr = degrade(&video, set.get(k).unwrap(), k, &cfg.degrade)?;
            let id = lr_video_id(&e.id, k);
            let rel = PathBuf::from("lr").join(format!("{id}.lrsv"));
            write_tensor(out.join(&rel), &lr.frames)?;
            Ok(VideoEntry {
                id,
                path: rel,
                label: e.label,
                frames: lr.num_frames(),
                height: LR_HEIGHT,
                width: LR_WIDTH,
                source_id: Some(e.id.clone()),
                transform: Some(k),
                flow: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut m = Manifest::new(hr.name.clone(), ManifestKind::Lr, hr.classes.clone());
    m.root = out.to_path_buf();
    m.videos = entries;
    let items: Vec<(String, usize)> = hr.videos.iter().map(|v| (v.id.clone(), v.label)).collect();
    for &seed in &cfg.seeds {
        m.splits.push(seed_split_def(&items, seed, cfg.train.val_fraction)?);
    }
    m.splits.extend(hr.splits.iter().cloned());
    m.validate()?;
    m.save(&manifest_path)?;
    Ok(manifest_path)
}

/// The split `ExperimentData::for_seed` uses, as ids.
fn seed_split_def(items: &[(String, usize)], seed: u64, val_fraction: f64) -> Result<SplitDef> {
    let mut def = random_half(items, seed, 0)?;
    let train: Vec<(String, usize)> = items.iter().filter(|(id, _)| def.train.contains(id)).cloned().collect();
    let (keep, held) = stratified_holdout(&train, val_fraction, seed, "val")?;
    def.train = keep;
    def.val = held;
    Ok(def)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlowSummary {
    pub computed: usize,
    pub reused: usize,
}

/// Computes flow stacks for every LR video of the manifest and records
/// them in it. Stacks go under `out` (the manifest's directory by default).
/// Existing stack files are reused unless `force`.
pub fn compute_flow(lr_manifest: &Path, out: Option<&Path>, cfg: &FlowConfig, force: bool) -> Result<FlowSummary> {
    let mut m = Manifest::load(lr_manifest)?;
    if m.kind != ManifestKind::Lr {
        return Err(Error::Data("flow needs an LR manifest; run `prepare-lr` first".into()));
    }
    cfg.validate()?;
    // entries stay relative to the manifest root unless stacks live elsewhere
    let base = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let dir = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
            let root = fs::canonicalize(&m.root).unwrap_or_else(|_| m.root.clone());
            dir.strip_prefix(&root).map(Path::to_path_buf).unwrap_or(dir)
        }
        None => PathBuf::new(),
    };
    let provider = cfg.provider();
    let results: Vec<(PathBuf, bool)> = m
        .videos
        .par_iter()
        .map(|v| {
            let rel = base.join("flow").join(format!("{}.lrsv", v.id));
            let path = m.resolve(&rel);
            if !force && path.exists() {
                return Ok((rel, false));
            }
            let frames = m.load_video(v)?;
            let stacks = video_flow_stacks(&frames, &provider, cfg)?;
            write_tensor(&path, &stacks)?;
            Ok((rel, true))
        })
        .collect::<Result<_>>()?;
    let mut summary = FlowSummary { computed: 0, reused: 0 };
    for (v, (rel, fresh)) in m.videos.iter_mut().zip(results) {
        v.flow = Some(rel);
        if fresh {
            summary.computed += 1;
        } else {
            summary.reused += 1;
        }
    }
    m.save(lr_manifest)?;
    Ok(summary)
}

/// Loads an LR manifest against the configured transform grid.
pub fn load_lr(lr_manifest: &Path, cfg: &RunConfig) -> Result<(Manifest, LrDataset)> {
    let m = Manifest::load(lr_manifest)?;
    m.validate()?;
    let set = cfg.transform_set()?;
    let identity = set
        .identity_index()
        .ok_or_else(|| Error::Config("transform grid must contain the identity".into()))?;
    let data = LrDataset::from_manifest(&m, set.n(), identity, cfg.model.streams.uses_flow())?;
    if data.num_classes != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "manifest has {} classes but model.num_classes = {}",
            data.num_classes, cfg.model.num_classes
        )));
    }
    Ok((m, data))
}

/// Source indices of split `name`: a split recorded in the manifest, or
/// `half-<s>` derived on the fly.
pub fn resolve_split(m: &Manifest, data: &LrDataset, name: &str, val_fraction: f64) -> Result<ExperimentData> {
    if let Ok(def) = m.split(name) {
        return Ok(ExperimentData {
            split: TrainSplit {
                train: data.indices_of(&def.train)?,
                val: data.indices_of(&def.val)?,
            },
            test: data.indices_of(&def.test)?,
        });
    }
    let seed: u64 = name
        .strip_prefix("half-")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("unknown split {name:?}")))?;
    ExperimentData::for_seed(data, seed, val_fraction)
}

/// Runs every requested mode for every configured seed and writes the
/// outputs under `out`.
pub fn train(lr_manifest: &Path, out: &Path, cfg: &RunConfig, modes: &[Mode]) -> Result<ExperimentReport> {
    let (_, data) = load_lr(lr_manifest, cfg)?;
    let all: Vec<usize> = (0..data.sources.len()).collect();
    let transforms: Vec<usize> = (0..data.num_transforms).collect();
    log::info!(
        "{} sources x {} transforms, content hash {}",
        data.sources.len(),
        data.num_transforms,
        data.content_hash(&all, &transforms)
    );
    cfg.echo(out)?;
    run_experiment(cfg, &data, modes, Some(out))
}

pub fn load_params(checkpoint: &Path, cfg: &RunConfig) -> Result<ParamStore> {
    let (ck, matched) = load_checkpoint(checkpoint, Some(fingerprint(&cfg.model)))?;
    if !matched {
        log::warn!("checkpoint {} was trained under a different model config", checkpoint.display());
    }
    ck.to_store()
}

/// Test metrics of a checkpoint on the identity LR videos of a split.
pub fn evaluate_checkpoint(lr_manifest: &Path, checkpoint: &Path, cfg: &RunConfig, split: &str) -> Result<Metrics> {
    let (m, data) = load_lr(lr_manifest, cfg)?;
    let params = load_params(checkpoint, cfg)?;
    let parts = resolve_split(&m, &data, split, cfg.train.val_fraction)?;
    evaluate(&cfg.model, &params, &data, &parts.test, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub videos: usize,
    pub sources: usize,
    pub dim: usize,
    /// Mean intra-source over mean inter-source distance.
    pub distance_ratio: Option<f64>,
}

/// Embeds every LR video of the split's test sources (all sources without
/// a split). Writes `[N, E]` to `out`, video ids one per line to
/// `<out>.ids`, and the report as JSON to `<out>.json`.
pub fn export_embeddings(
    lr_manifest: &Path,
    checkpoint: &Path,
    cfg: &RunConfig,
    split: Option<&str>,
    out: &Path,
) -> Result<EmbeddingReport> {
    let (m, data) = load_lr(lr_manifest, cfg)?;
    let params = load_params(checkpoint, cfg)?;
    let sources = match split {
        Some(name) => resolve_split(&m, &data, name, cfg.train.val_fraction)?.test,
        None => (0..data.sources.len()).collect(),
    };
    let transforms: Vec<usize> = (0..data.num_transforms).collect();
    let emb = embed_sources(&cfg.model, &params, &data, &sources, &transforms, None)?;
    let dim = cfg.model.embed_dim;
    let flat: Vec<f32> = emb.iter().flat_map(|(_, e)| e.data().iter().copied()).collect();
    write_tensor(out, &Tensor::new(vec![emb.len(), dim], flat)?)?;
    let ids: Vec<String> = sources
        .iter()
        .flat_map(|&s| transforms.iter().map(|&k| lr_video_id(&data.sources[s].id, k)).collect::<Vec<_>>())
        .collect();
    let with_ext = |ext: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    let ids_path = with_ext(".ids");
    fs::write(&ids_path, ids.join("\n") + "\n").map_err(|e| Error::io(&ids_path, e))?;
    let report = EmbeddingReport {
        videos: emb.len(),
        sources: sources.len(),
        dim,
        distance_ratio: distance_ratio(&emb).ok(),
    };
    let json_path = with_ext(".json");
    fs::write(&json_path, serde_json::to_string_pretty(&report).unwrap()).map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}
