//! In-memory LR training data: every transform of every source video.

use std::collections::HashMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{Manifest, ManifestKind};
use crate::error::{Error, Result};
use crate::flow::{video_flow_stacks, FlowConfig};
use crate::model::{frame_features, ModelConfig};
use crate::autodiff::Graph;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::transform::{degrade, DegradeConfig, HrVideo, LrVideo, TransformSet};

/// All LR variants of one HR source; `variants[k]` used transform `k`.
#[derive(Debug, Clone)]
pub struct SourceVideos {
    pub id: String,
    pub label: usize,
    pub variants: Vec<LrVideo>,
}

#[derive(Debug, Clone)]
pub struct LrDataset {
    pub sources: Vec<SourceVideos>,
    pub num_transforms: usize,
    /// Transform index of the identity, used for baseline training and test.
    pub identity: usize,
    pub num_classes: usize,
}

impl LrDataset {
    /// Degrades every HR video under every transform, then (if `flow` is
    /// given) computes flow stacks. Parallel over (video, transform).
    pub fn build(
        hr: &[HrVideo],
        set: &TransformSet,
        degrade_cfg: &DegradeConfig,
        flow: Option<&FlowConfig>,
        num_classes: usize,
    ) -> Result<Self> {
        let identity = set
            .identity_index()
            .ok_or_else(|| Error::invalid("transform set must contain the identity"))?;
        let jobs: Vec<(usize, usize)> = (0..hr.len()).flat_map(|v| (0..set.n()).map(move |k| (v, k))).collect();
        let provider = flow.map(|f| f.provider());
        let videos: Vec<LrVideo> = jobs
            .par_iter()
            .map(|&(v, k)| {
                let mut lr = degrade(&hr[v], set.get(k).unwrap(), k, degrade_cfg)?;
                if let (Some(cfg), Some(p)) = (flow, provider.as_ref()) {
                    lr.flow = Some(video_flow_stacks(&lr.frames, p, cfg)?);
                }
                Ok(lr)
            })
            .collect::<Result<_>>()?;
        let mut it = videos.into_iter();
        let sources = hr
            .iter()
            .map(|h| SourceVideos {
                id: h.id.clone(),
                label: h.label,
                variants: it.by_ref().take(set.n()).collect(),
            })
            .collect();
        let ds = Self {
            sources,
            num_transforms: set.n(),
            identity,
            num_classes,
        };
        ds.check_labels()?;
        Ok(ds)
    }

    /// Loads an LR manifest. Every source must carry transforms
    /// `0..num_transforms`; `identity` names the identity transform.
    pub fn from_manifest(m: &Manifest, num_transforms: usize, identity: usize, need_flow: bool) -> Result<Self> {
        if m.kind != ManifestKind::Lr {
            return Err(Error::Data("expected an LR manifest; run `prepare-lr` first".into()));
        }
        let mut order: Vec<String> = Vec::new();
        let mut slots: HashMap<String, (usize, Vec<Option<LrVideo>>)> = HashMap::new();
        for v in &m.videos {
            let src = v.source().to_string();
            let k = v.transform.expect("validated LR manifest");
            if k >= num_transforms {
                return Err(Error::Data(format!(
                    "{} uses transform {k}, but the configured grid has {num_transforms}",
                    v.id
                )));
            }
            let entry = slots.entry(src.clone()).or_insert_with(|| {
                order.push(src.clone());
                (v.label, vec![None; num_transforms])
            });
            let mut lr = LrVideo::new(src.clone(), k, v.label, m.load_video(v)?)?;
            if need_flow {
                lr.flow = Some(m.load_flow(v)?);
            }
            entry.1[k] = Some(lr);
        }
        let sources = order
            .into_iter()
            .map(|id| {
                let (label, vs) = slots.remove(&id).unwrap();
                let variants = vs
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| v.ok_or_else(|| Error::Data(format!("source {id} lacks transform {k}"))))
                    .collect::<Result<_>>()?;
                Ok(SourceVideos { id, label, variants })
            })
            .collect::<Result<_>>()?;
        let num_classes = if m.classes.is_empty() {
            m.videos.iter().map(|v| v.label + 1).max().unwrap_or(0)
        } else {
            m.classes.len()
        };
        let ds = Self {
            sources,
            num_transforms,
            identity,
            num_classes,
        };
        ds.check_labels()?;
        Ok(ds)
    }

    fn check_labels(&self) -> Result<()> {
        if let Some(s) = self.sources.iter().find(|s| s.label >= self.num_classes) {
            return Err(Error::Data(format!("source {} has label {} >= {}", s.id, s.label, self.num_classes)));
        }
        Ok(())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| self.index_of(id).ok_or_else(|| Error::Data(format!("unknown source video {id:?}"))))
            .collect()
    }

    pub fn video(&self, source: usize, transform: usize) -> &LrVideo {
        &self.sources[source].variants[transform]
    }

    pub fn has_flow(&self) -> bool {
        self.sources.iter().all(|s| s.variants.iter().all(|v| v.flow.is_some()))
    }

    /// SHA-256 over the frames (and flow) of the listed videos.
    pub fn content_hash(&self, sources: &[usize], transforms: &[usize]) -> String {
        let mut h = Sha256::new();
        for &s in sources {
            for &k in transforms {
                let v = self.video(s, k);
                h.update(v.key().as_bytes());
                for x in v.frames.data() {
                    h.update(x.to_le_bytes());
                }
                if let Some(f) = &v.flow {
                    for x in f.data() {
                        h.update(x.to_le_bytes());
                    }
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-frame stream features `[T, frame_dim]` keyed by (source, transform),
/// for training with frozen streams.
#[derive(Debug, Clone, Default)]
pub struct FeatureCache {
    map: HashMap<(usize, usize), Tensor>,
}

impl FeatureCache {
    pub fn compute(
        cfg: &ModelConfig,
        params: &ParamStore,
        data: &LrDataset,
        sources: &[usize],
        transforms: &[usize],
    ) -> Result<Self> {
        let keys: Vec<(usize, usize)> = sources.iter().flat_map(|&s| transforms.iter().map(move |&k| (s, k))).collect();
        let feats: Vec<Tensor> = keys
            .par_iter()
            .map(|&(s, k)| {
                let v = data.video(s, k);
                let mut g = Graph::inference();
                let rgb = g.constant(v.frames.clone());
                let flow = match (cfg.streams.uses_flow(), &v.flow) {
                    (true, Some(f)) => Some(g.constant(f.clone())),
                    (true, None) => {
                        return Err(Error::MissingArtifact(format!("{} has no flow stacks", v.key())))
                    }
                    (false, _) => None,
                };
                let h = frame_features(&mut g, params, cfg, rgb, flow)?;
                Ok(g.value(h).clone())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            map: keys.into_iter().zip(feats).collect(),
        })
    }

    /// Adds every entry of `other`, replacing existing keys.
    pub fn extend(&mut self, other: FeatureCache) {
        self.map.extend(other.map);
    }

    pub fn get(&self, source: usize, transform: usize) -> Option<&Tensor> {
        self.map.get(&(source, transform))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
