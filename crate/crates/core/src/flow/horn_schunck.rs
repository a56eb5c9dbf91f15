//! Coarse-to-fine Horn-Schunck optical flow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{FlowField, FlowProvider};

/// Horn-Schunck with a Gaussian-free 2x image pyramid and per-level warping.
///
/// Intensities are scaled to 0..255 internally so that `alpha` has its
/// customary magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HornSchunck {
    pub alpha: f32,
    pub iterations: usize,
    /// 0 = automatic.
    pub pyramid_levels: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        Self {
            alpha: 40.0,
            iterations: 100,
            pyramid_levels: 0,
        }
    }
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    d: Vec<f32>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.d[y * self.w + x]
    }

    fn bilinear(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.at(yi, xi) * (1.0 - fx) + self.at(yi, xi + 1) * fx;
        let b = self.at(yi + 1, xi) * (1.0 - fx) + self.at(yi + 1, xi + 1) * fx;
        a * (1.0 - fy) + b * fy
    }

    /// 2x2 box reduction (odd trailing row/column folded by clamping).
    fn halve(&self) -> Plane {
        let h = self.h.div_ceil(2);
        let w = self.w.div_ceil(2);
        let mut d = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (2 * y as isize, 2 * x as isize);
                d.push(
                    0.25 * (self.at(sy, sx) + self.at(sy, sx + 1) + self.at(sy + 1, sx) + self.at(sy + 1, sx + 1)),
                );
            }
        }
        Plane { h, w, d }
    }

    /// Bilinear resample to `h x w` with pixel-center alignment.
    fn resize(&self, h: usize, w: usize) -> Plane {
        let ry = self.h as f32 / h as f32;
        let rx = self.w as f32 / w as f32;
        let mut d = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                d.push(self.bilinear((x as f32 + 0.5) * rx - 0.5, (y as f32 + 0.5) * ry - 0.5));
            }
        }
        Plane { h, w, d }
    }
}

fn neighborhood_mean(p: &[f32], h: usize, w: usize, y: usize, x: usize) -> f32 {
    // 1/6 on edge neighbours, 1/12 on diagonals
    let at = |dy: isize, dx: isize| {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        p[yy * w + xx]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(-1, 1) + at(1, -1) + at(1, 1)) / 12.0
}

impl HornSchunck {
    fn levels_for(&self, h: usize, w: usize) -> usize {
        if self.pyramid_levels > 0 {
            return self.pyramid_levels;
        }
        let mut levels = 1;
        let (mut hh, mut ww) = (h, w);
        while hh / 2 >= 8 && ww / 2 >= 8 {
            hh /= 2;
            ww /= 2;
            levels += 1;
        }
        levels
    }

    /// Refines `(u, v)` at one level, linearizing around the current flow.
    fn refine(&self, prev: &Plane, next: &Plane, u: &mut [f32], v: &mut [f32]) {
        let (h, w) = (prev.h, prev.w);
        let n = h * w;
        let mut warped = vec![0.0f32; n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                warped[i] = next.bilinear(x as f32 + u[i], y as f32 + v[i]);
            }
        }
        let wp = Plane { h, w, d: warped };
        let mut ix = vec![0.0f32; n];
        let mut iy = vec![0.0f32; n];
        let mut it = vec![0.0f32; n];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                let gx = 0.5 * (prev.at(y, x + 1) - prev.at(y, x - 1)) + 0.5 * (wp.at(y, x + 1) - wp.at(y, x - 1));
                let gy = 0.5 * (prev.at(y + 1, x) - prev.at(y - 1, x)) + 0.5 * (wp.at(y + 1, x) - wp.at(y - 1, x));
                ix[i] = 0.5 * gx;
                iy[i] = 0.5 * gy;
                it[i] = wp.d[i] - prev.d[i];
            }
        }
        let u0 = u.to_vec();
        let v0 = v.to_vec();
        let a2 = self.alpha * self.alpha;
        let mut un = vec![0.0f32; n];
        let mut vn = vec![0.0f32; n];
        for _ in 0..self.iterations {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let ub = neighborhood_mean(u, h, w, y, x);
                    let vb = neighborhood_mean(v, h, w, y, x);
                    let r = (ix[i] * (ub - u0[i]) + iy[i] * (vb - v0[i]) + it[i])
                        / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                    un[i] = ub - ix[i] * r;
                    vn[i] = vb - iy[i] * r;
                }
            }
            u.copy_from_slice(&un);
            v.copy_from_slice(&vn);
        }
    }
}

impl FlowProvider for HornSchunck {
    fn estimate(&self, prev: &Tensor, next: &Tensor) -> Result<FlowField> {
        if prev.shape() != next.shape() || prev.rank() != 2 {
            return Err(Error::shape(format!(
                "flow inputs must be equal HxW images, got {:?} and {:?}",
                prev.shape(),
                next.shape()
            )));
        }
        if self.iterations == 0 || !(self.alpha > 0.0) {
            return Err(Error::invalid("Horn-Schunck needs iterations >= 1 and alpha > 0"));
        }
        let (h, w) = (prev.shape()[0], prev.shape()[1]);
        let to_plane = |t: &Tensor| Plane {
            h,
            w,
            d: t.data().iter().map(|&x| 255.0 * x).collect(),
        };
        let mut p_pyr = vec![to_plane(prev)];
        let mut n_pyr = vec![to_plane(next)];
        for _ in 1..self.levels_for(h, w) {
            let p = p_pyr.last().unwrap().halve();
            let q = n_pyr.last().unwrap().halve();
            p_pyr.push(p);
            n_pyr.push(q);
        }
        let coarsest = p_pyr.last().unwrap();
        let mut u = Plane {
            h: coarsest.h,
            w: coarsest.w,
            d: vec![0.0; coarsest.h * coarsest.w],
        };
        let mut v = u.clone();
        for level in (0..p_pyr.len()).rev() {
            let (p, q) = (&p_pyr[level], &n_pyr[level]);
            if u.h != p.h || u.w != p.w {
                let (sy, sx) = (p.h as f32 / u.h as f32, p.w as f32 / u.w as f32);
                u = u.resize(p.h, p.w);
                v = v.resize(p.h, p.w);
                u.d.iter_mut().for_each(|x| *x *= sx);
                v.d.iter_mut().for_each(|x| *x *= sy);
            }
            self.refine(p, q, &mut u.d, &mut v.d);
        }
        Ok(FlowField {
            u: Tensor::new(vec![h, w], u.d)?,
            v: Tensor::new(vec![h, w], v.d)?,
        })
    }

    fn tag(&self) -> String {
        format!("hs-a{}-i{}-l{}", self.alpha, self.iterations, self.pyramid_levels)
    }
}
