//! Low-resolution video generation: camera motion transforms followed by
//! blur, average downsampling and sensor noise.
//!
//! Frames are `[H, W, C]` tensors. "16x12" always means width 16, height 12,
//! so a low-resolution frame has shape `[12, 16, 3]`.

mod resample;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::{LR_HEIGHT, LR_WIDTH};

pub use resample::{
    apply_motion_transform, area_resize, average_downsample, center_crop_4_3, gaussian_blur,
};

/// One camera motion transform: translation in percent of frame size,
/// rotation in degrees about the frame center, uniform scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub tx_pct: f64,
    pub ty_pct: f64,
    pub rot_deg: f64,
    pub scale: f64,
}

impl TransformSpec {
    pub const IDENTITY: TransformSpec = TransformSpec {
        tx_pct: 0.0,
        ty_pct: 0.0,
        rot_deg: 0.0,
        scale: 1.0,
    };

    pub fn new(tx_pct: f64, ty_pct: f64, rot_deg: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("transform scale must be > 0, got {scale}")));
        }
        if ![tx_pct, ty_pct, rot_deg].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("transform parameters must be finite"));
        }
        Ok(Self {
            tx_pct,
            ty_pct,
            rot_deg,
            scale,
        })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// An ordered set of distinct transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    transforms: Vec<TransformSpec>,
}

impl TransformSet {
    pub fn new(transforms: Vec<TransformSpec>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::invalid("transform set is empty"));
        }
        for (i, a) in transforms.iter().enumerate() {
            if transforms[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate transform {a:?}")));
            }
        }
        Ok(Self { transforms })
    }

    pub fn n(&self) -> usize {
        self.transforms.len()
    }

    pub fn get(&self, k: usize) -> Option<&TransformSpec> {
        self.transforms.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransformSpec> {
        self.transforms.iter()
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.transforms.iter().position(|t| t.is_identity())
    }
}

/// Cartesian product of translations and rotations: tx outermost, then ty,
/// rotation innermost. Scale is fixed at 1.
pub fn build_transform_grid(tx_pct: &[f64], ty_pct: &[f64], rot_deg: &[f64]) -> Result<TransformSet> {
    if tx_pct.is_empty() || ty_pct.is_empty() || rot_deg.is_empty() {
        return Err(Error::invalid("transform grid lists must be non-empty"));
    }
    let mut out = Vec::with_capacity(tx_pct.len() * ty_pct.len() * rot_deg.len());
    for &tx in tx_pct {
        for &ty in ty_pct {
            for &r in rot_deg {
                out.push(TransformSpec::new(tx, ty, r, 1.0)?);
            }
        }
    }
    TransformSet::new(out)
}

/// The 5 x 3 x 5 grid: translations of {-5,-2.5,0,2.5,5}% in X and
/// {-5,0,5}% in Y, rotations of {-10,-5,0,5,10} degrees.
pub fn default_transform_grid() -> TransformSet {
    build_transform_grid(
        &[-5.0, -2.5, 0.0, 2.5, 5.0],
        &[-5.0, 0.0, 5.0],
        &[-10.0, -5.0, 0.0, 5.0, 10.0],
    )
    .expect("static grid is valid")
}

/// A high-resolution source video with frames in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct HrVideo {
    pub id: String,
    pub label: usize,
    pub frames: Vec<Tensor>,
}

impl HrVideo {
    pub fn new(id: impl Into<String>, label: usize, frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("video needs at least one frame"))?;
        if first.rank() != 3 || first.shape()[2] != 3 {
            return Err(Error::shape(format!("video frames must be HxWx3, got {:?}", first.shape())));
        }
        if frames.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::shape("video frames differ in shape"));
        }
        Ok(Self {
            id: id.into(),
            label,
            frames,
        })
    }

    /// Builds from a `[T, H, W, 3]` tensor.
    pub fn from_tensor(id: impl Into<String>, label: usize, t: &Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::shape(format!("expected TxHxWx3 video, got {:?}", t.shape())));
        }
        let frames = (0..t.shape()[0]).map(|i| t.index_axis0(i)).collect();
        Self::new(id, label, frames)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::stack(&self.frames).expect("frames share a shape")
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// A 16x12 video produced by one transform of one source video.
#[derive(Debug, Clone)]
pub struct LrVideo {
    pub source_id: String,
    pub transform_index: usize,
    pub label: usize,
    /// `[T, 12, 16, 3]`, values in `[0, 1]`.
    pub frames: Tensor,
    /// `[T, 12, 16, 20]` flow stacks, one per frame, once computed.
    pub flow: Option<Tensor>,
}

impl LrVideo {
    pub fn new(source_id: impl Into<String>, transform_index: usize, label: usize, frames: Tensor) -> Result<Self> {
        match frames.shape() {
            [_, h, w, 3] if *h == LR_HEIGHT && *w == LR_WIDTH => {}
            s => {
                return Err(Error::shape(format!(
                    "LR video must be Tx{LR_HEIGHT}x{LR_WIDTH}x3, got {s:?}"
                )))
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            transform_index,
            label,
            frames,
            flow: None,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame(&self, t: usize) -> Tensor {
        self.frames.index_axis0(t)
    }

    /// Stable identifier `<source>#<k>`.
    pub fn key(&self) -> String {
        format!("{}#{}", self.source_id, self.transform_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    /// Gaussian lens blur standard deviation in source pixels.
    pub blur_sigma: f64,
    /// Additive Gaussian noise standard deviation, in `[0, 1]` intensity units.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            noise_sigma: 0.01,
            rng_seed: 0,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("blur and noise sigmas must be >= 0"));
        }
        Ok(())
    }
}

/// Produces one LR video: per frame, 4:3 center crop, motion transform,
/// Gaussian blur, average downsample to 16x12, additive noise, clamp.
pub fn degrade(
    video: &HrVideo,
    spec: &TransformSpec,
    transform_index: usize,
    cfg: &DegradeConfig,
) -> Result<LrVideo> {
    cfg.validate()?;
    let k = transform_index.to_string();
    let mut rng = substream(cfg.rng_seed, &["degrade", &video.id, &k]);
    let mut out = Vec::with_capacity(video.frames.len() * LR_HEIGHT * LR_WIDTH * 3);
    for frame in &video.frames {
        let cropped = center_crop_4_3(frame);
        let (h, w) = (cropped.shape()[0], cropped.shape()[1]);
        if h < LR_HEIGHT || w < LR_WIDTH {
            return Err(Error::shape(format!(
                "frame {w}x{h} (after 4:3 crop) is smaller than {LR_WIDTH}x{LR_HEIGHT}"
            )));
        }
        let moved = if spec.is_identity() {
            cropped
        } else {
            apply_motion_transform(&cropped, spec)
        };
        let blurred = gaussian_blur(&moved, cfg.blur_sigma);
        let small = average_downsample(&blurred)?;
        for &v in small.data() {
            let noise = if cfg.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * cfg.noise_sigma
            } else {
                0.0
            };
            out.push(((v as f64 + noise).clamp(0.0, 1.0)) as f32);
        }
    }
    let frames = Tensor::new(vec![video.frames.len(), LR_HEIGHT, LR_WIDTH, 3], out)?;
    LrVideo::new(video.id.clone(), transform_index, video.label, frames)
}
