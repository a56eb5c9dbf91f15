//! The recognition network.
//!
//! Per frame, a spatial stream reads the `[12, 16, 3]` RGB frame and a
//! temporal stream reads the `[12, 16, 20]` flow stack; each ends in a 256-D
//! feature and the two are concatenated. A temporal pyramid max-pools the
//! per-frame features over `2^L - 1` intervals, two fully connected layers
//! produce the embedding, and a final layer gives class logits.
//!
//! Parameter names:
//!
//! | prefix | layers |
//! |---|---|
//! | `spatial.`, `temporal.` | `conv1`, `conv2`, `conv3`, `fc` (each `.w`, `.b`) |
//! | `embed.` | `fc1`, `fc2` |
//! | `classifier.` | `w`, `b` |
//! | `stage1.{stream}.head.` | per-frame head used only during pretraining |

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::flow::STACK_CHANNELS;
use crate::params::{kaiming_uniform, ParamStore};
use crate::rng::substream;
use crate::tensor::{Element, Tensor};
use crate::{LR_HEIGHT, LR_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Spatial,
    Temporal,
}

impl StreamKind {
    pub const ALL: [StreamKind; 2] = [StreamKind::Spatial, StreamKind::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Spatial => "spatial",
            StreamKind::Temporal => "temporal",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            StreamKind::Spatial => 3,
            StreamKind::Temporal => STACK_CHANNELS,
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(StreamKind::Spatial),
            "temporal" => Ok(StreamKind::Temporal),
            _ => Err(Error::invalid(format!("unknown stream {s:?} (expected spatial or temporal)"))),
        }
    }
}

/// Which streams the network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSet {
    /// Spatial stream only.
    OneStream,
    TwoStream,
}

impl StreamSet {
    pub fn kinds(self) -> &'static [StreamKind] {
        match self {
            StreamSet::OneStream => &StreamKind::ALL[..1],
            StreamSet::TwoStream => &StreamKind::ALL,
        }
    }

    pub fn uses_flow(self) -> bool {
        self == StreamSet::TwoStream
    }
}

impl FromStr for StreamSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-stream" => Ok(StreamSet::OneStream),
            "two-stream" => Ok(StreamSet::TwoStream),
            _ => Err(Error::invalid(format!(
                "unknown stream set {s:?} (expected one-stream or two-stream)"
            ))),
        }
    }
}

/// Per-stream CNN widths: three 3x3 convolutions (2x2 max pool after the
/// second) and a fully connected layer to the stream feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub conv_channels: [usize; 3],
    pub feature_dim: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            conv_channels: [32, 64, 64],
            feature_dim: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PyramidConfig {
    pub levels: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

impl PyramidConfig {
    pub fn intervals(&self) -> usize {
        (1 << self.levels) - 1
    }

    pub fn min_frames(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// `[start, end)` frame ranges in level-major, ascending order.
    pub fn bounds(&self, num_frames: usize) -> Result<Vec<(usize, usize)>> {
        if self.levels == 0 {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        if num_frames < self.min_frames() {
            return Err(Error::invalid(format!(
                "temporal pyramid of level {} needs at least {} frames, got {num_frames}",
                self.levels,
                self.min_frames()
            )));
        }
        let mut out = Vec::with_capacity(self.intervals());
        for l in 0..self.levels {
            let parts = 1 << l;
            for j in 0..parts {
                out.push((num_frames * j / parts, num_frames * (j + 1) / parts));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub streams: StreamSet,
    pub stream: StreamConfig,
    pub pyramid: PyramidConfig,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            streams: StreamSet::TwoStream,
            stream: StreamConfig::default(),
            pyramid: PyramidConfig::default(),
            embed_dim: 8192,
            num_classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn frame_dim(&self) -> usize {
        self.stream.feature_dim * self.streams.kinds().len()
    }

    pub fn pooled_dim(&self) -> usize {
        self.frame_dim() * self.pyramid.intervals()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stream;
        if s.conv_channels.contains(&0) || s.feature_dim == 0 {
            return Err(Error::invalid("stream widths must be >= 1"));
        }
        if self.pyramid.levels == 0 || self.pyramid.levels > 8 {
            return Err(Error::invalid("pyramid levels must be in 1..=8"));
        }
        if self.embed_dim == 0 || self.num_classes < 2 {
            return Err(Error::invalid("embed_dim must be >= 1 and num_classes >= 2"));
        }
        Ok(())
    }

    /// Pooled spatial size after the stream's max pool.
    fn flat_dim(&self) -> usize {
        (LR_HEIGHT / 2) * (LR_WIDTH / 2) * self.stream.conv_channels[2]
    }
}

fn insert_layer(
    store: &mut ParamStore,
    name: &str,
    wshape: &[usize],
    fan_in: usize,
    seed: u64,
) -> Result<()> {
    let mut rng: ChaCha8Rng = substream(seed, &["init", name]);
    store.insert(&format!("{name}.w"), kaiming_uniform(wshape, fan_in, &mut rng))?;
    store.insert(&format!("{name}.b"), Tensor::zeros(&[*wshape.last().unwrap()]))?;
    Ok(())
}

fn init_stream(store: &mut ParamStore, cfg: &ModelConfig, kind: StreamKind, seed: u64) -> Result<()> {
    let [c1, c2, c3] = cfg.stream.conv_channels;
    let p = kind.name();
    let cin = kind.in_channels();
    insert_layer(store, &format!("{p}.conv1"), &[3, 3, cin, c1], 9 * cin, seed)?;
    insert_layer(store, &format!("{p}.conv2"), &[3, 3, c1, c2], 9 * c1, seed)?;
    insert_layer(store, &format!("{p}.conv3"), &[3, 3, c2, c3], 9 * c2, seed)?;
    let flat = cfg.flat_dim();
    insert_layer(store, &format!("{p}.fc"), &[flat, cfg.stream.feature_dim], flat, seed)
}

/// Kaiming-uniform weights, zero biases. Each tensor draws from its own
/// named substream of `seed`, so adding or dropping layers leaves the others
/// unchanged.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for &kind in cfg.streams.kinds() {
        init_stream(&mut store, cfg, kind, seed)?;
    }
    let (p, e) = (cfg.pooled_dim(), cfg.embed_dim);
    insert_layer(&mut store, "embed.fc1", &[p, e], p, seed)?;
    insert_layer(&mut store, "embed.fc2", &[e, e], e, seed)?;
    insert_layer(&mut store, "classifier", &[e, cfg.num_classes], e, seed)?;
    Ok(store)
}

pub fn stage1_head_name(kind: StreamKind) -> String {
    format!("stage1.{}.head", kind.name())
}

/// Adds (or replaces) the temporary per-frame classifier of one stream.
pub fn init_stage1_head(store: &mut ParamStore, cfg: &ModelConfig, kind: StreamKind, seed: u64) -> Result<()> {
    let name = stage1_head_name(kind);
    store.remove(&format!("{name}.w"));
    store.remove(&format!("{name}.b"));
    let d = cfg.stream.feature_dim;
    insert_layer(store, &name, &[d, cfg.num_classes], d, seed)
}

/// Removes every stage-1 head.
pub fn drop_stage1_heads<T: Element>(store: &mut ParamStore<T>) {
    for name in store.names() {
        if name.starts_with("stage1.") {
            store.remove(&name);
        }
    }
}

fn layer<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str) -> Result<(Var, Var)> {
    Ok((g.param(store, &format!("{name}.w"))?, g.param(store, &format!("{name}.b"))?))
}

fn check_frames<T: Element>(g: &Graph<T>, x: Var, channels: usize, what: &str) -> Result<usize> {
    match *g.shape(x) {
        [n, h, w, c] if h == LR_HEIGHT && w == LR_WIDTH && c == channels => Ok(n),
        ref s => Err(Error::shape(format!(
            "{what} must be [N, {LR_HEIGHT}, {LR_WIDTH}, {channels}], got {s:?}"
        ))),
    }
}

/// One stream over a batch of frames: `[N, 12, 16, C] -> [N, feature_dim]`.
pub fn stream_forward<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, kind: StreamKind, x: Var) -> Result<Var> {
    let n = check_frames(g, x, kind.in_channels(), &format!("{kind} stream input"))?;
    let p = kind.name();
    let (w, b) = layer(g, store, &format!("{p}.conv1"))?;
    let h = g.conv2d(x, w, b, 1, 1)?;
    let h = g.relu(h);
    let (w, b) = layer(g, store, &format!("{p}.conv2"))?;
    let h = g.conv2d(h, w, b, 1, 1)?;
    let h = g.relu(h);
    let h = g.max_pool2d(h, 2, 2)?;
    let (w, b) = layer(g, store, &format!("{p}.conv3"))?;
    let h = g.conv2d(h, w, b, 1, 1)?;
    let h = g.relu(h);
    let flat = g.value(h).len() / n;
    let h = g.reshape(h, &[n, flat])?;
    let (w, b) = layer(g, store, &format!("{p}.fc"))?;
    let h = g.linear(h, w, b)?;
    Ok(g.relu(h))
}

/// Per-frame features `[N, frame_dim]`: the spatial feature, followed by the
/// temporal feature for two-stream models. `flow` is ignored by one-stream
/// models and required by two-stream ones.
pub fn frame_features<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: Var,
    flow: Option<Var>,
) -> Result<Var> {
    let s = stream_forward(g, store, StreamKind::Spatial, rgb)?;
    if !cfg.streams.uses_flow() {
        return Ok(s);
    }
    let flow = flow.ok_or_else(|| Error::invalid("two-stream model needs flow stacks"))?;
    if g.shape(flow)[0] != g.shape(rgb)[0] {
        return Err(Error::shape(format!(
            "rgb and flow frame counts differ: {:?} vs {:?}",
            g.shape(rgb),
            g.shape(flow)
        )));
    }
    let t = stream_forward(g, store, StreamKind::Temporal, flow)?;
    g.concat(&[s, t], 1)
}

/// Temporal pyramid max pooling of `[T, D]` features to `[(2^L - 1) * D]`.
pub fn pyramid_pool<T: Element>(g: &mut Graph<T>, features: Var, pyramid: &PyramidConfig) -> Result<Var> {
    let &[frames, _] = g.shape(features) else {
        return Err(Error::shape(format!("pyramid input must be [T, D], got {:?}", g.shape(features))));
    };
    pyramid.bounds(frames)?;
    let rows: Vec<Var> = (0..frames).map(|t| g.select_row(features, t)).collect::<Result<_>>()?;
    pyramid_pool_rows(g, &rows, pyramid)
}

/// [`pyramid_pool`] over per-frame `[D]` nodes.
pub fn pyramid_pool_rows<T: Element>(g: &mut Graph<T>, rows: &[Var], pyramid: &PyramidConfig) -> Result<Var> {
    let bounds = pyramid.bounds(rows.len())?;
    let pooled: Vec<Var> = bounds
        .iter()
        .map(|&(a, b)| g.temporal_max(&rows[a..b]))
        .collect::<Result<_>>()?;
    g.concat(&pooled, 0)
}

/// Embedding head over pooled vectors, `[P]` or `[B, P]`.
pub fn embed_head<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, pooled: Var) -> Result<Var> {
    let (w, b) = layer(g, store, "embed.fc1")?;
    let h = g.linear(pooled, w, b)?;
    let h = g.relu(h);
    let (w, b) = layer(g, store, "embed.fc2")?;
    let h = g.linear(h, w, b)?;
    Ok(g.relu(h))
}

/// Video embedding from per-frame inputs `[T, 12, 16, 3]` and `[T, 12, 16, 20]`.
pub fn embed<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: Var,
    flow: Option<Var>,
) -> Result<Var> {
    let frames = check_frames(g, rgb, 3, "video frames")?;
    cfg.pyramid.bounds(frames)?;
    let h = frame_features(g, store, cfg, rgb, flow)?;
    let f = pyramid_pool(g, h, &cfg.pyramid)?;
    embed_head(g, store, f)
}

/// Class logits from embeddings `[E]` or `[B, E]`.
pub fn classify_logits<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, embedding: Var) -> Result<Var> {
    let (w, b) = layer(g, store, "classifier")?;
    g.linear(embedding, w, b)
}

/// Logits of the stage-1 per-frame head on one stream, `[N, C]`. Only the
/// selected stream's input is read.
pub fn per_frame_logits<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    kind: StreamKind,
    input: Var,
) -> Result<Var> {
    let h = stream_forward(g, store, kind, input)?;
    let (w, b) = layer(g, store, &stage1_head_name(kind))?;
    g.linear(h, w, b)
}

/// Row-wise softmax of `[C]` or `[N, C]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let classes = *logits.shape().last().expect("non-scalar logits");
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(classes) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// First index of the maximum.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-side wrapper around a configuration and its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            params: init_params(&cfg, seed)?,
            cfg,
        })
    }

    fn inputs(&self, g: &mut Graph, rgb: &Tensor, flow: Option<&Tensor>) -> Result<(Var, Option<Var>)> {
        let r = g.constant(rgb.clone());
        let f = match (self.cfg.streams.uses_flow(), flow) {
            (true, Some(f)) => Some(g.constant(f.clone())),
            (true, None) => return Err(Error::invalid("two-stream model needs flow stacks")),
            (false, _) => None,
        };
        Ok((r, f))
    }

    /// Per-frame features `[T, frame_dim]`.
    pub fn frame_features(&self, rgb: &Tensor, flow: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::inference();
        let (r, f) = self.inputs(&mut g, rgb, flow)?;
        let h = frame_features(&mut g, &self.params, &self.cfg, r, f)?;
        Ok(g.value(h).clone())
    }

    /// Embedding from precomputed per-frame features `[T, frame_dim]`.
    pub fn embed_features(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let h = g.constant(features.clone());
        let f = pyramid_pool(&mut g, h, &self.cfg.pyramid)?;
        let e = embed_head(&mut g, &self.params, f)?;
        Ok(g.value(e).clone())
    }

    pub fn embed(&self, rgb: &Tensor, flow: Option<&Tensor>) -> Result<Tensor> {
        self.embed_features(&self.frame_features(rgb, flow)?)
    }

    /// Class probabilities for an embedding.
    pub fn classify(&self, embedding: &Tensor) -> Result<Tensor> {
        if embedding.shape() != [self.cfg.embed_dim] {
            return Err(Error::shape(format!(
                "classifier expects a [{}] embedding, got {:?}",
                self.cfg.embed_dim,
                embedding.shape()
            )));
        }
        let mut g = Graph::inference();
        let e = g.constant(embedding.clone());
        let l = classify_logits(&mut g, &self.params, e)?;
        Ok(softmax(g.value(l)))
    }

    /// Stage-1 per-frame class probabilities `[N, C]` from one stream.
    pub fn per_frame_classify(&self, kind: StreamKind, rgb: &Tensor, flow: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let input = match kind {
            StreamKind::Spatial => g.constant(rgb.clone()),
            StreamKind::Temporal => g.constant(flow.clone()),
        };
        let l = per_frame_logits(&mut g, &self.params, kind, input)?;
        Ok(softmax(g.value(l)))
    }
}
