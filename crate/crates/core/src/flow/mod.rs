//! Optical-flow stacks for the temporal stream.
//!
//! A 16x12 video is grayscale-converted, bicubically upscaled to a working
//! resolution (256x256 by default), flow is estimated there, and the result
//! is area-averaged back to 16x12 with displacements rescaled to LR pixels.
//! Each frame `t` gets a 20-channel stack `[u_0, v_0, ..., u_9, v_9]` built
//! from the frame pairs `(t+d, t+d+1)`, `d = 0..9`, with the pair index
//! clamped to the last available pair.

mod horn_schunck;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transform::area_resize;
use crate::{LR_HEIGHT, LR_WIDTH};

pub use horn_schunck::HornSchunck;

/// Number of consecutive frame pairs per stack.
pub const STACK_PAIRS: usize = 10;
/// Channels per stack (u and v per pair).
pub const STACK_CHANNELS: usize = 2 * STACK_PAIRS;

/// Dense displacement field in pixels: `u` along X (width), `v` along Y.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Tensor,
    pub v: Tensor,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Tensor::zeros(&[h, w]),
            v: Tensor::zeros(&[h, w]),
        }
    }

    pub fn height(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.u.shape()[1]
    }
}

/// Pluggable dense flow estimator over `[H, W]` grayscale images in `[0, 1]`.
pub trait FlowProvider: Send + Sync {
    fn estimate(&self, prev: &Tensor, next: &Tensor) -> Result<FlowField>;

    /// Short identifier used to key cached stacks.
    fn tag(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Working resolution for flow estimation.
    pub work_width: usize,
    pub work_height: usize,
    /// Horn-Schunck smoothness weight (intensity scale 0..255).
    pub alpha: f32,
    /// Iterations per pyramid level.
    pub iterations: usize,
    /// Coarse-to-fine levels; 0 picks as many as keep the coarsest level at
    /// least 8 pixels on each side.
    pub pyramid_levels: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            work_width: 256,
            work_height: 256,
            alpha: 40.0,
            iterations: 100,
            pyramid_levels: 0,
        }
    }
}

impl FlowConfig {
    pub fn provider(&self) -> HornSchunck {
        HornSchunck {
            alpha: self.alpha,
            iterations: self.iterations,
            pyramid_levels: self.pyramid_levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.work_width < LR_WIDTH || self.work_height < LR_HEIGHT {
            return Err(Error::invalid("flow working resolution must be at least 16x12"));
        }
        if self.iterations == 0 || !(self.alpha > 0.0) {
            return Err(Error::invalid("flow needs iterations >= 1 and alpha > 0"));
        }
        Ok(())
    }
}

/// ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B.
pub fn grayscale(frame: &Tensor) -> Tensor {
    let s = frame.shape();
    assert!(s.len() == 3 && s[2] == 3, "grayscale expects HxWx3, got {s:?}");
    let d = frame.data();
    Tensor::from_fn(&[s[0], s[1]], |i| {
        0.299 * d[3 * i] + 0.587 * d[3 * i + 1] + 0.114 * d[3 * i + 2]
    })
}

fn catmull_rom(t: f64) -> [f64; 4] {
    // a = -0.5 cubic convolution weights for offsets -1, 0, 1, 2
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = (i as f64 + 0.5) * ratio - 0.5;
            let x0 = x.floor();
            let w = catmull_rom(x - x0);
            let idx = [-1, 0, 1, 2].map(|o| (x0 as isize + o).clamp(0, src as isize - 1) as usize);
            (idx, w)
        })
        .collect()
}

/// Catmull-Rom bicubic resize of an `[H, W]` or `[H, W, C]` tensor. With
/// `clamp_unit` the output is clamped to `[0, 1]`.
pub fn bicubic_resize(frame: &Tensor, out_h: usize, out_w: usize, clamp_unit: bool) -> Result<Tensor> {
    let (h, w, c) = match frame.shape() {
        &[h, w] => (h, w, 1),
        &[h, w, c] => (h, w, c),
        s => return Err(Error::shape(format!("bicubic_resize expects HxW[xC], got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic_resize target dims must be >= 1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(frame.clone());
    }
    let tx = cubic_taps(w, out_w);
    let ty = cubic_taps(h, out_h);
    let src = frame.data();
    let mut tmp = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (ox, (idx, wt)) in tx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * src[(y * w + idx[k]) * c + ch] as f64;
                }
                tmp[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for (idx, wt) in &ty {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * tmp[(idx[k] * out_w + ox) * c + ch];
                }
                if clamp_unit {
                    acc = acc.clamp(0.0, 1.0);
                }
                out.push(acc as f32);
            }
        }
    }
    let mut shape = vec![out_h, out_w];
    if frame.rank() == 3 {
        shape.push(c);
    }
    Tensor::new(shape, out)
}

/// Flow between two 16x12 RGB frames through the upscale / estimate /
/// downscale pipeline, in LR pixel units.
pub fn lr_pair_flow(
    prev: &Tensor,
    next: &Tensor,
    provider: &dyn FlowProvider,
    cfg: &FlowConfig,
) -> Result<FlowField> {
    let (h, w) = (prev.shape()[0], prev.shape()[1]);
    let up = |f: &Tensor| bicubic_resize(&grayscale(f), cfg.work_height, cfg.work_width, true);
    let flow = provider.estimate(&up(prev)?, &up(next)?)?;
    let sx = cfg.work_width as f32 / w as f32;
    let sy = cfg.work_height as f32 / h as f32;
    let down = |t: &Tensor, s: f32| -> Result<Tensor> {
        let t3 = t.clone().reshape(&[cfg.work_height, cfg.work_width, 1])?;
        Ok(area_resize(&t3, h, w)?.reshape(&[h, w])?.map(|x| x / s))
    };
    Ok(FlowField {
        u: down(&flow.u, sx)?,
        v: down(&flow.v, sy)?,
    })
}

fn check_video(frames: &Tensor) -> Result<usize> {
    match frames.shape() {
        [t, h, w, 3] if *h == LR_HEIGHT && *w == LR_WIDTH => {
            if *t < 2 {
                Err(Error::invalid(format!("flow stacks need at least 2 frames, got {t}")))
            } else {
                Ok(*t)
            }
        }
        s => Err(Error::shape(format!("expected Tx12x16x3 LR video, got {s:?}"))),
    }
}

/// Index of the frame pair used at offset `d` from frame `t`.
pub fn pair_index(t: usize, d: usize, num_frames: usize) -> usize {
    (t + d).min(num_frames - 2)
}

fn assemble(pairs: &[Option<FlowField>], t: usize, num_frames: usize) -> Tensor {
    let mut data = vec![0.0f32; LR_HEIGHT * LR_WIDTH * STACK_CHANNELS];
    for d in 0..STACK_PAIRS {
        let f = pairs[pair_index(t, d, num_frames)]
            .as_ref()
            .expect("pair computed");
        for p in 0..LR_HEIGHT * LR_WIDTH {
            data[p * STACK_CHANNELS + 2 * d] = f.u.data()[p];
            data[p * STACK_CHANNELS + 2 * d + 1] = f.v.data()[p];
        }
    }
    Tensor::new(vec![LR_HEIGHT, LR_WIDTH, STACK_CHANNELS], data).expect("stack shape")
}

/// The `[12, 16, 20]` flow stack anchored at frame `t` of a `[T, 12, 16, 3]` video.
pub fn flow_stack(
    frames: &Tensor,
    t: usize,
    provider: &dyn FlowProvider,
    cfg: &FlowConfig,
) -> Result<Tensor> {
    let n = check_video(frames)?;
    if t >= n {
        return Err(Error::invalid(format!("frame index {t} out of range for {n} frames")));
    }
    let mut pairs: Vec<Option<FlowField>> = vec![None; n - 1];
    for d in 0..STACK_PAIRS {
        let p = pair_index(t, d, n);
        if pairs[p].is_none() {
            pairs[p] = Some(lr_pair_flow(&frames.index_axis0(p), &frames.index_axis0(p + 1), provider, cfg)?);
        }
    }
    Ok(assemble(&pairs, t, n))
}

/// Flow stacks for every frame, `[T, 12, 16, 20]`. Each consecutive frame
/// pair is estimated once.
pub fn video_flow_stacks(frames: &Tensor, provider: &dyn FlowProvider, cfg: &FlowConfig) -> Result<Tensor> {
    let n = check_video(frames)?;
    let pairs: Vec<Option<FlowField>> = (0..n - 1)
        .map(|p| lr_pair_flow(&frames.index_axis0(p), &frames.index_axis0(p + 1), provider, cfg).map(Some))
        .collect::<Result<_>>()?;
    let stacks: Vec<Tensor> = (0..n).map(|t| assemble(&pairs, t, n)).collect();
    Tensor::stack(&stacks)
}
