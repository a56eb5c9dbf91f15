//! Stage 1 (per-stream frame classification) and stage 2 (joint training of
//! the full network under the selected objective).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureCache, LrDataset};
use super::experiment::TrainSplit;
use super::metrics::evaluate;
use super::plan::{build_batch_plan, epoch_batches, BatchPlan, PlanItem};
use super::{LossReduction, Mode, Stage1Config, TrainConfig};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::loss::{combined, multi_siamese, LossWeights};
use crate::model::{
    classify_logits, embed_head, frame_features, init_stage1_head, per_frame_logits, pyramid_pool_rows,
    stage1_head_name, ModelConfig, StreamKind,
};
use crate::params::{clip_grad_norm, ParamStore, Sgd};
use crate::rng::substream;
use crate::tensor::{Element, Tensor};
use crate::{LR_HEIGHT, LR_WIDTH};

fn check_finite(value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{} produced a non-finite loss ({value})", what())))
    }
}

/// Trains one stream and a temporary per-frame head on frames labelled with
/// their video's class, then discards the head. Returns per-step losses
/// (mean cross entropy over the step's frames).
#[allow(clippy::too_many_arguments)]
pub fn stage1_pretrain(
    params: &mut ParamStore,
    cfg: &ModelConfig,
    s1: &Stage1Config,
    data: &LrDataset,
    sources: &[usize],
    transforms: &[usize],
    kind: StreamKind,
    seed: u64,
) -> Result<Vec<f32>> {
    if sources.is_empty() || transforms.is_empty() {
        return Err(Error::invalid("stage 1 needs at least one source and transform"));
    }
    if kind == StreamKind::Temporal && !data.has_flow() {
        return Err(Error::MissingArtifact("temporal stream pretraining needs flow stacks".into()));
    }
    init_stage1_head(params, cfg, kind, seed)?;
    let mut rng = substream(seed, &["stage1", kind.name()]);
    let mut opt = Sgd::new(s1.lr, s1.momentum);
    let channels = kind.in_channels();
    let frame_len = LR_HEIGHT * LR_WIDTH * channels;
    let mut losses = Vec::with_capacity(s1.steps);
    for step in 0..s1.steps {
        let mut batch = Vec::with_capacity(s1.batch_frames * frame_len);
        let mut labels = Vec::with_capacity(s1.batch_frames);
        for _ in 0..s1.batch_frames {
            let s = sources[rng.gen_range(0..sources.len())];
            let k = transforms[rng.gen_range(0..transforms.len())];
            let v = data.video(s, k);
            let t = rng.gen_range(0..v.num_frames());
            let src = match kind {
                StreamKind::Spatial => &v.frames,
                StreamKind::Temporal => v.flow.as_ref().unwrap(),
            };
            batch.extend_from_slice(&src.data()[t * frame_len..(t + 1) * frame_len]);
            labels.push(v.label);
        }
        let input = Tensor::new(vec![s1.batch_frames, LR_HEIGHT, LR_WIDTH, channels], batch)?;
        let mut g = Graph::new();
        let x = g.constant(input);
        let logits = per_frame_logits(&mut g, params, kind, x)?;
        let ce = g.softmax_cross_entropy(logits, &labels)?;
        let loss = g.scale(ce, 1.0 / s1.batch_frames as f32);
        let value = g.value(loss).item();
        check_finite(value as f64, || format!("stage 1 ({kind}) step {step}"))?;
        let grads = g.backward(loss)?.params(&g);
        drop(g);
        opt.step(params, &grads)?;
        losses.push(value);
    }
    let head = stage1_head_name(kind);
    params.remove(&format!("{head}.w"));
    params.remove(&format!("{head}.b"));
    Ok(losses)
}

/// Inputs to one stage-2 step graph.
pub struct StepInput<'a, T: Element> {
    pub cfg: &'a ModelConfig,
    pub params: &'a ParamStore<T>,
    pub data: &'a LrDataset,
    pub cache: Option<&'a FeatureCache>,
    pub mode: Mode,
    pub weights: LossWeights,
    pub reduction: LossReduction,
}

impl<T: Element> StepInput<'_, T> {
    /// Builds the forward graph of one step over every branch of `plan` with
    /// shared parameters. Returns the scalar loss node.
    pub fn build(&self, g: &mut Graph<T>, plan: &BatchPlan) -> Result<Var> {
        let branches = plan.branches();
        let emb = self.embed_branches(g, &branches)?;
        let logits = classify_logits(g, self.params, emb)?;
        let labels: Vec<usize> = branches.iter().map(|&(s, _)| self.data.sources[s].label).collect();
        let ce = g.softmax_cross_entropy(logits, &labels)?;
        let metric = if self.mode == Mode::MultiSiamese {
            let mut per_item = Vec::with_capacity(plan.items.len());
            let mut row = 0;
            for it in &plan.items {
                let (n1, n2) = (it.b1.len(), it.b2.len());
                let b1: Vec<Var> = (row..row + n1).map(|r| g.select_row(emb, r)).collect::<Result<_>>()?;
                let b2: Vec<Var> = (row + n1..row + n1 + n2).map(|r| g.select_row(emb, r)).collect::<Result<_>>()?;
                row += n1 + n2;
                per_item.push(multi_siamese(g, &b1, &b2, self.weights.margin as f64)?);
            }
            Some(g.add_n(&per_item)?)
        } else {
            None
        };
        let total = combined(g, metric, &[ce], &self.weights)?;
        Ok(match self.reduction {
            LossReduction::Sum => total,
            LossReduction::Mean => g.scale(total, T::from_f64(1.0 / branches.len() as f64)),
        })
    }

    /// Embeddings `[branches, E]`.
    fn embed_branches(&self, g: &mut Graph<T>, branches: &[(usize, usize)]) -> Result<Var> {
        let cached = self.cache.filter(|c| branches.iter().all(|&(s, k)| c.get(s, k).is_some()));
        let mut pooled = Vec::with_capacity(branches.len());
        match cached {
            Some(cache) => {
                for &(s, k) in branches {
                    let h = cache.get(s, k).unwrap();
                    let hv = g.constant(h.cast());
                    let rows: Vec<Var> = (0..h.shape()[0]).map(|t| g.select_row(hv, t)).collect::<Result<_>>()?;
                    pooled.push(pyramid_pool_rows(g, &rows, &self.cfg.pyramid)?);
                }
            }
            None => {
                let videos: Vec<_> = branches.iter().map(|&(s, k)| self.data.video(s, k)).collect();
                let total: usize = videos.iter().map(|v| v.num_frames()).sum();
                let rgb: Vec<T> = videos.iter().flat_map(|v| v.frames.data().iter().map(|&x| T::from_f64(x as f64))).collect();
                let rgb = g.constant(Tensor::new(vec![total, LR_HEIGHT, LR_WIDTH, 3], rgb)?);
                let flow = if self.cfg.streams.uses_flow() {
                    let mut buf = Vec::with_capacity(total * LR_HEIGHT * LR_WIDTH * crate::flow::STACK_CHANNELS);
                    for v in &videos {
                        let f = v
                            .flow
                            .as_ref()
                            .ok_or_else(|| Error::MissingArtifact(format!("{} has no flow stacks", v.key())))?;
                        buf.extend(f.data().iter().map(|&x| T::from_f64(x as f64)));
                    }
                    Some(g.constant(Tensor::new(
                        vec![total, LR_HEIGHT, LR_WIDTH, crate::flow::STACK_CHANNELS],
                        buf,
                    )?))
                } else {
                    None
                };
                let h = frame_features(g, self.params, self.cfg, rgb, flow)?;
                let mut start = 0;
                for v in &videos {
                    let rows: Vec<Var> =
                        (start..start + v.num_frames()).map(|t| g.select_row(h, t)).collect::<Result<_>>()?;
                    start += v.num_frames();
                    pooled.push(pyramid_pool_rows(g, &rows, &self.cfg.pyramid)?);
                }
            }
        }
        let p = self.cfg.pooled_dim();
        let flat = g.concat(&pooled, 0)?;
        let stacked = g.reshape(flat, &[branches.len(), p])?;
        embed_head(g, self.params, stacked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Losses of the first optimizer steps, in order.
    pub first_step_losses: Vec<f32>,
}

/// Transform indices a mode trains on.
pub(crate) fn training_transforms(mode: Mode, data: &LrDataset) -> Vec<usize> {
    match mode {
        Mode::Baseline => vec![data.identity],
        Mode::Augment | Mode::MultiSiamese => (0..data.num_transforms).collect(),
    }
}

pub(crate) fn plan_for(
    mode: Mode,
    batch: &[usize],
    pool: &[usize],
    data: &LrDataset,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<BatchPlan> {
    match mode {
        Mode::Baseline => Ok(BatchPlan {
            items: batch
                .iter()
                .map(|&s| PlanItem {
                    source: s,
                    b1: vec![data.identity],
                    b2: vec![],
                })
                .collect(),
        }),
        Mode::Augment | Mode::MultiSiamese => build_batch_plan(batch, pool, data.num_transforms, n, rng),
    }
}

/// Jointly trains the network from `params` under `tc.mode`, with early
/// stopping on validation accuracy. `on_epoch` sees every epoch's record and
/// weights.
#[allow(clippy::too_many_arguments)]
pub fn stage2_train(
    params: ParamStore,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    weights: &LossWeights,
    data: &LrDataset,
    split: &TrainSplit,
    seed: u64,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord, &ParamStore)>,
) -> Result<Stage2Outcome> {
    if split.train.is_empty() {
        return Err(Error::invalid("stage 2 needs training sources"));
    }
    let mode = tc.mode;
    let weights = match mode {
        Mode::MultiSiamese => *weights,
        _ => LossWeights {
            lambda1: 0.0,
            ..*weights
        },
    };
    let mut params = params;
    let streams: Vec<String> = cfg.streams.kinds().iter().map(|k| format!("{}.", k.name())).collect();
    let cache = if tc.freeze_streams {
        for p in &streams {
            params.set_trainable(p, false);
        }
        let mut keys = FeatureCache::compute(cfg, &params, data, &split.train, &training_transforms(mode, data))?;
        let val = FeatureCache::compute(cfg, &params, data, &split.val, &[data.identity])?;
        keys.extend(val);
        Some(keys)
    } else {
        None
    };

    let mut rng = substream(seed, &["stage2", mode.name()]);
    let mut opt = Sgd::new(tc.lr, tc.momentum);
    let mut history = Vec::new();
    let mut first_step_losses = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=tc.max_epochs {
        let mut total = 0.0;
        let batches = epoch_batches(&split.train, tc.batch_size, &mut rng);
        for (b, batch) in batches.iter().enumerate() {
            let plan = plan_for(mode, batch, &split.train, data, tc.n, &mut rng)?;
            let step = StepInput {
                cfg,
                params: &params,
                data,
                cache: cache.as_ref(),
                mode,
                weights,
                reduction: tc.loss_reduction,
            };
            let mut g = Graph::new();
            let loss = step.build(&mut g, &plan)?;
            let value = g.value(loss).item();
            check_finite(value as f64, || format!("stage 2 ({mode}) epoch {epoch} step {b}"))?;
            let mut grads = g.backward(loss)?.params(&g);
            drop(g);
            let norm = clip_grad_norm(&params, &mut grads, tc.grad_clip.unwrap_or(f32::INFINITY));
            log::trace!("{mode} epoch {epoch} step {b}: loss {value:.4}, grad norm {norm:.3}");
            opt.step(&mut params, &grads)?;
            total += value as f64;
            if first_step_losses.len() < 10 {
                first_step_losses.push(value);
            }
        }
        let val_accuracy = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(cfg, &params, data, &split.val, cache.as_ref())?.accuracy)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            val_accuracy,
        };
        log::info!(
            "{mode} epoch {epoch}: loss {:.4}, val acc {}",
            rec.train_loss,
            val_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
        );
        if let Some(f) = on_epoch.as_mut() {
            f(&rec, &params);
        }
        history.push(rec);
        // Without a validation split every epoch runs and the last weights are kept.
        let Some(score) = val_accuracy else { continue };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    let (score, best_epoch, mut params) = if split.val.is_empty() {
        (f64::NAN, history.len(), params)
    } else {
        best.expect("at least one epoch")
    };
    for p in &streams {
        params.set_trainable(p, true);
    }
    Ok(Stage2Outcome {
        params,
        best_epoch,
        best_val_accuracy: score.is_finite().then_some(score),
        history,
        first_step_losses,
    })
}

/// One JSON object per line.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in history {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
