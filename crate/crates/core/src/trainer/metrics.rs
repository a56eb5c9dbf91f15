//! Test-time evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureCache, LrDataset};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{argmax, classify_logits, embed, embed_head, pyramid_pool, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    /// Positive class 1; only for two-class problems.
    pub binary: Option<BinaryMetrics>,
}

pub fn metrics_from_predictions(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if pred.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    if pred.iter().chain(truth).any(|&c| c >= num_classes) {
        return Err(Error::invalid("class index out of range"));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let binary = (num_classes == 2).then(|| {
        let tp = confusion[1][1] as f64;
        let fp = confusion[0][1] as f64;
        let fn_ = confusion[1][0] as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        BinaryMetrics { precision, recall, f1 }
    });
    Ok(Metrics {
        count: pred.len(),
        accuracy: correct as f64 / pred.len() as f64,
        per_class,
        confusion,
        binary,
    })
}

/// Inference embedding of one LR video, from cached features when present.
pub(crate) fn infer_embedding(
    cfg: &ModelConfig,
    params: &ParamStore,
    data: &LrDataset,
    source: usize,
    transform: usize,
    cache: Option<&FeatureCache>,
) -> Result<Tensor> {
    let mut g = Graph::inference();
    let e = match cache.and_then(|c| c.get(source, transform)) {
        Some(h) => {
            let h = g.constant(h.clone());
            let f = pyramid_pool(&mut g, h, &cfg.pyramid)?;
            embed_head(&mut g, params, f)?
        }
        None => {
            let v = data.video(source, transform);
            let rgb = g.constant(v.frames.clone());
            let flow = if cfg.streams.uses_flow() {
                let f = v
                    .flow
                    .as_ref()
                    .ok_or_else(|| Error::MissingArtifact(format!("{} has no flow stacks", v.key())))?;
                Some(g.constant(f.clone()))
            } else {
                None
            };
            embed(&mut g, params, cfg, rgb, flow)?
        }
    };
    Ok(g.value(e).clone())
}

fn predict(params: &ParamStore, embedding: &Tensor) -> Result<usize> {
    let mut g = Graph::inference();
    let e = g.constant(embedding.clone());
    let l = classify_logits(&mut g, params, e)?;
    Ok(argmax(g.value(l).data()))
}

/// Classifies the identity-transform LR video of each listed source.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ParamStore,
    data: &LrDataset,
    sources: &[usize],
    cache: Option<&FeatureCache>,
) -> Result<Metrics> {
    let pred: Vec<usize> = sources
        .par_iter()
        .map(|&s| {
            let e = infer_embedding(cfg, params, data, s, data.identity, cache)?;
            predict(params, &e)
        })
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = sources.iter().map(|&s| data.sources[s].label).collect();
    metrics_from_predictions(&pred, &truth, data.num_classes)
}
