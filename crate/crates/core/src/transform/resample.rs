use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{LR_HEIGHT, LR_WIDTH};

use super::TransformSpec;

fn dims(frame: &Tensor) -> (usize, usize, usize) {
    let s = frame.shape();
    assert_eq!(s.len(), 3, "frame must be HxWxC, got {s:?}");
    (s[0], s[1], s[2])
}

/// Bilinear sample at continuous pixel coordinates with edge clamping.
fn sample_bilinear(data: &[f32], h: usize, w: usize, c: usize, x: f64, y: f64, out: &mut [f32]) {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    for ch in 0..c {
        let p = |yy: usize, xx: usize| data[(yy * w + xx) * c + ch] as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        out[ch] = (top * (1.0 - fy) + bottom * fy) as f32;
    }
}

/// Inverse-warps `frame` by the affine motion `spec`.
///
/// A source point `p` moves to `c + scale * R(rot) (p - c) + t`, where `c` is
/// the frame center and `t = (tx% * W, ty% * H)`. With the y axis pointing
/// down, positive angles turn the content clockwise on screen. Each output
/// pixel samples the source at the inverse location; out-of-frame samples
/// clamp to the nearest edge pixel.
pub fn apply_motion_transform(frame: &Tensor, spec: &TransformSpec) -> Tensor {
    let (h, w, c) = dims(frame);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = spec.tx_pct / 100.0 * w as f64;
    let ty = spec.ty_pct / 100.0 * h as f64;
    let theta = spec.rot_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_s = 1.0 / spec.scale;
    let src = frame.data();
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            // R(-theta) applied to (dx, dy)
            let sx = cx + inv_s * (cos * dx + sin * dy);
            let sy = cy + inv_s * (-sin * dx + cos * dy);
            let o = (y * w + x) * c;
            sample_bilinear(src, h, w, c, sx, sy, &mut out[o..o + c]);
        }
    }
    Tensor::new(vec![h, w, c], out).expect("same shape")
}

/// Per-axis area weights: for each output cell, the list of
/// (source index, weight) with weights summing to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            if src % dst == 0 {
                let k = src / dst;
                return (i * k..(i + 1) * k).map(|j| (j, 1.0 / k as f64)).collect();
            }
            let start = i as f64 * ratio;
            let end = (i + 1) as f64 * ratio;
            let mut ws = Vec::new();
            let mut j = start.floor() as usize;
            while (j as f64) < end && j < src {
                let lo = start.max(j as f64);
                let hi = end.min(j as f64 + 1.0);
                if hi > lo {
                    ws.push((j, (hi - lo) / ratio));
                }
                j += 1;
            }
            ws
        })
        .collect()
}

/// Area-weighted resize to `out_h x out_w` (downsampling only). Integer
/// ratios reduce to exact block means; fractional ratios weight each source
/// pixel by its overlap with the output cell.
pub fn area_resize(frame: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = dims(frame);
    if h < out_h || w < out_w || out_h == 0 || out_w == 0 {
        return Err(Error::shape(format!(
            "cannot area-downsample {w}x{h} to {out_w}x{out_h}"
        )));
    }
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    let src = frame.data();
    // horizontal pass
    let mut tmp = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (ox, ws) in wx.iter().enumerate() {
            for &(sx, wgt) in ws {
                for ch in 0..c {
                    tmp[(y * out_w + ox) * c + ch] += wgt * src[(y * w + sx) * c + ch] as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, wgt) in ws {
                    acc += wgt * tmp[(sy * out_w + ox) * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc as f32;
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Average downsampling to the 16x12 grid.
pub fn average_downsample(frame: &Tensor) -> Result<Tensor> {
    area_resize(frame, LR_HEIGHT, LR_WIDTH)
}

/// Largest centered region with a 4:3 (width:height) aspect ratio.
pub fn center_crop_4_3(frame: &Tensor) -> Tensor {
    let (h, w, c) = dims(frame);
    let (x0, y0, cw, ch) = if w * 3 == h * 4 {
        return frame.clone();
    } else if w * 3 > h * 4 {
        let cw = h * 4 / 3;
        ((w - cw) / 2, 0, cw, h)
    } else {
        let ch = w * 3 / 4;
        (0, (h - ch) / 2, w, ch)
    };
    let src = frame.data();
    let mut out = Vec::with_capacity(cw * ch * c);
    for y in y0..y0 + ch {
        let row = (y * w + x0) * c;
        out.extend_from_slice(&src[row..row + cw * c]);
    }
    Tensor::new(vec![ch, cw, c], out).expect("crop shape")
}

/// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized,
/// edge-clamped. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(frame: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let (h, w, c) = dims(frame);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let src = frame.data();
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[(y * w + sx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    Tensor::new(vec![h, w, c], out).expect("blur shape")
}
