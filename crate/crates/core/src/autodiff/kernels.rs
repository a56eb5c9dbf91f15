//! Raw forward/backward loops behind the graph ops.

use crate::tensor::{gemm, Element, Layout};

/// Geometry of a batched NHWC convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

pub fn im2col<T: Element>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for b in 0..g.n {
        let img = &input[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((iy as usize) * g.w + ix as usize) * g.cin;
                        let d = (ky * g.kw + kx) * g.cin;
                        dst[d..d + g.cin].copy_from_slice(&img[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

pub fn col2im_add<T: Element>(dcols: &[T], g: &ConvGeom, dinput: &mut [T]) {
    let patch = g.patch();
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut dinput[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &dcols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((iy as usize) * g.w + ix as usize) * g.cin;
                        let s = (ky * g.kw + kx) * g.cin;
                        for c in 0..g.cin {
                            img[dst + c] = img[dst + c] + src[s + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution. Returns the output buffer and the im2col matrix.
pub fn conv2d_forward<T: Element>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let cols = im2col(input, g);
    let rows = g.rows();
    let mut out = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(
        rows,
        g.patch(),
        g.cout,
        &cols,
        Layout::Normal,
        kernel,
        Layout::Normal,
        T::one(),
        &mut out,
    );
    (out, cols)
}

/// Max pooling over NHWC without padding. Returns output and the flat input
/// index of each output's maximum (first occurrence in window scan order).
#[allow(clippy::too_many_arguments)]
pub fn max_pool_forward<T: Element>(
    input: &[T],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = usize::MAX;
                    let mut best = T::neg_infinity();
                    for ky in 0..window {
                        for kx in 0..window {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            let idx = ((b * h + iy) * w + ix) * c + ch;
                            let v = input[idx];
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg, oh, ow)
}

/// Row-wise log-softmax cross entropy. Returns per-row losses (f64) and the
/// softmax probabilities.
pub fn softmax_ce_forward<T: Element>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
) -> (Vec<f64>, Vec<T>) {
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row
            .iter()
            .map(|x| x.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|x| (x.as_f64() - max).exp()).sum();
        let log_denom = denom.ln();
        losses.push(-(row[label].as_f64() - max - log_denom));
        probs.extend(
            row.iter()
                .map(|x| T::from_f64((x.as_f64() - max - log_denom).exp())),
        );
    }
    (losses, probs)
}
