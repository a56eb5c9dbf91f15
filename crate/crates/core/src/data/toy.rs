//! Synthetic motion-class videos: a textured square sprite moving over a
//! static textured background.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestKind, VideoEntry, MANIFEST_FILE};
use super::tensorfile::write_tensor;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::transform::HrVideo;
use crate::{LR_HEIGHT, LR_WIDTH};

pub const TOY_CLASSES: [&str; 10] = [
    "translate-left",
    "translate-right",
    "translate-up",
    "translate-down",
    "rotate-cw",
    "rotate-ccw",
    "grow",
    "shrink",
    "static",
    "oscillate-horizontal",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Sprite side length range in HR pixels.
    pub sprite_min: usize,
    pub sprite_max: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            videos_per_class: 20,
            frames: 16,
            width: 128,
            height: 96,
            sprite_min: 24,
            sprite_max: 36,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > TOY_CLASSES.len() {
            return Err(Error::invalid(format!(
                "num_classes must be in 1..={}, got {}",
                TOY_CLASSES.len(),
                self.num_classes
            )));
        }
        if self.videos_per_class == 0 {
            return Err(Error::invalid("videos_per_class must be >= 1"));
        }
        if self.frames < 16 {
            return Err(Error::invalid(format!("toy videos need at least 16 frames, got {}", self.frames)));
        }
        let (w, h) = (self.width, self.height);
        if w == 0 || w % LR_WIDTH != 0 || h % LR_HEIGHT != 0 || w / LR_WIDTH != h / LR_HEIGHT {
            return Err(Error::invalid(format!(
                "HR dims {w}x{h} must be a 4:3 integer multiple of {LR_WIDTH}x{LR_HEIGHT}"
            )));
        }
        if self.sprite_min < 4 || self.sprite_min > self.sprite_max || 2 * self.sprite_max > h {
            return Err(Error::invalid(format!(
                "sprite sizes {}..={} must satisfy 4 <= min <= max <= height/2",
                self.sprite_min, self.sprite_max
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        TOY_CLASSES[..self.num_classes].iter().map(|s| s.to_string()).collect()
    }
}

pub fn video_id(class: usize, index: usize) -> String {
    format!("c{class:02}-v{index:03}")
}

/// Smooth colored texture: a few random plane waves per channel.
struct Texture {
    waves: [Vec<(f64, f64, f64, f64)>; 3],
    base: [f64; 3],
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, freq: (f64, f64), base: (f64, f64), amp: f64) -> Self {
        let mut channel = || -> Vec<(f64, f64, f64, f64)> {
            (0..4)
                .map(|_| {
                    let f = rng.gen_range(freq.0..freq.1);
                    let theta = rng.gen_range(0.0..PI);
                    (f * theta.cos(), f * theta.sin(), rng.gen_range(0.0..TAU), rng.gen_range(0.3..1.0) * amp)
                })
                .collect()
        };
        let waves = [channel(), channel(), channel()];
        let base = [(); 3].map(|_| rng.gen_range(base.0..base.1));
        Self { waves, base }
    }

    fn at(&self, x: f64, y: f64, c: usize) -> f64 {
        self.base[c]
            + self.waves[c]
                .iter()
                .map(|(a, b, p, amp)| amp * (a * x + b * y + p).sin())
                .sum::<f64>()
    }
}

/// Sprite pose at one frame: center, rotation (radians, counter-clockwise in
/// image coordinates with y down) and side length.
#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    angle: f64,
    side: f64,
}

fn trajectory(class: usize, cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let t_last = (cfg.frames - 1) as f64;
    let side = rng.gen_range(cfg.sprite_min as f64..=cfg.sprite_max as f64);
    let half_diag = side * std::f64::consts::SQRT_2 / 2.0;
    let mut cx = rng.gen_range(half_diag..w - half_diag);
    let mut cy = rng.gen_range(half_diag..h - half_diag);
    let angle0 = rng.gen_range(-0.3..0.3);
    // per-frame motion magnitudes
    let speed = rng.gen_range(1.2..2.4);
    let spin = rng.gen_range(4.0..8.0f64).to_radians();
    let growth: f64 = rng.gen_range(0.03..0.045);
    let amp = rng.gen_range(8.0..14.0);
    let period = rng.gen_range(6.0..10.0);
    let phase = rng.gen_range(0.0..TAU);

    // keep the whole path inside the frame
    let travel = speed * t_last;
    let fit = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..hi) } else { (lo + hi) / 2.0 };
    match class {
        0 => cx = fit(side / 2.0 + travel, w - side / 2.0, rng),
        1 => cx = fit(side / 2.0, w - side / 2.0 - travel, rng),
        2 => cy = fit(side / 2.0 + travel, h - side / 2.0, rng),
        3 => cy = fit(side / 2.0, h - side / 2.0 - travel, rng),
        9 => cx = fit(side / 2.0 + amp, w - side / 2.0 - amp, rng),
        _ => {}
    }
    let (grow_start, shrink_start) = (side * 0.7, side * 1.3);
    if class == 6 || class == 7 {
        let big = side * 1.3 * (1.0 + growth).powf(t_last);
        cx = fit(big / 2.0, w - big / 2.0, rng);
        cy = fit(big / 2.0, h - big / 2.0, rng);
    }

    (0..cfg.frames)
        .map(|t| {
            let t = t as f64;
            let mut p = Pose {
                cx,
                cy,
                angle: angle0,
                side,
            };
            match class {
                0 => p.cx -= speed * t,
                1 => p.cx += speed * t,
                2 => p.cy -= speed * t,
                3 => p.cy += speed * t,
                4 => p.angle += spin * t,
                5 => p.angle -= spin * t,
                6 => p.side = grow_start * (1.0 + growth).powf(t),
                7 => p.side = shrink_start / (1.0 + growth).powf(t),
                8 => {}
                9 => p.cx += amp * (TAU * t / period + phase).sin(),
                _ => unreachable!("class index validated"),
            }
            p
        })
        .collect()
}

fn render(cfg: &ToyConfig, bg: &Texture, sprite: &Texture, pose: &Pose) -> Tensor {
    let (w, h) = (cfg.width, cfg.height);
    let (s, c) = pose.angle.sin_cos();
    let half = pose.side / 2.0;
    Tensor::from_fn(&[h, w, 3], |i| {
        let ch = i % 3;
        let px = (i / 3) % w;
        let py = i / (3 * w);
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let (dx, dy) = (x - pose.cx, y - pose.cy);
        // sprite-local coordinates, normalized to the side length
        let u = (c * dx + s * dy) / pose.side;
        let v = (-s * dx + c * dy) / pose.side;
        let val = if u.abs() * pose.side <= half && v.abs() * pose.side <= half {
            sprite.at(u * 32.0, v * 32.0, ch)
        } else {
            bg.at(x, y, ch)
        };
        val.clamp(0.0, 1.0) as f32
    })
}

/// Generates one video; deterministic in `(cfg.seed, class, index)`.
pub fn generate_video(cfg: &ToyConfig, class: usize, index: usize) -> Result<HrVideo> {
    let id = video_id(class, index);
    let mut rng = substream(cfg.seed, &["toy", &id]);
    let bg = Texture::new(&mut rng, (0.05, 0.25), (0.25, 0.45), 0.08);
    let sprite = Texture::new(&mut rng, (0.4, 1.2), (0.55, 0.8), 0.15);
    let poses = trajectory(class, cfg, &mut rng);
    let frames = poses.iter().map(|p| render(cfg, &bg, &sprite, p)).collect();
    HrVideo::new(id, class, frames)
}

/// All videos, class-major.
pub fn generate_toy(cfg: &ToyConfig) -> Result<Vec<HrVideo>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.num_classes * cfg.videos_per_class);
    for class in 0..cfg.num_classes {
        for i in 0..cfg.videos_per_class {
            out.push(generate_video(cfg, class, i)?);
        }
    }
    Ok(out)
}

/// Writes `hr/<id>.lrsv` per video and `manifest.txt` under `out`. Returns
/// the manifest path.
pub fn write_toy_dataset(cfg: &ToyConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let mut m = Manifest::new("toy", ManifestKind::Hr, cfg.class_names());
    m.root = out.to_path_buf();
    for class in 0..cfg.num_classes {
        for i in 0..cfg.videos_per_class {
            let v = generate_video(cfg, class, i)?;
            let rel = PathBuf::from("hr").join(format!("{}.lrsv", v.id));
            write_tensor(out.join(&rel), &v.to_tensor())?;
            m.videos.push(VideoEntry {
                id: v.id.clone(),
                path: rel,
                label: class,
                frames: cfg.frames,
                height: cfg.height,
                width: cfg.width,
                source_id: None,
                transform: None,
                flow: None,
            });
        }
    }
    let path = out.join(MANIFEST_FILE);
    m.save(&path)?;
    Ok(path)
}
