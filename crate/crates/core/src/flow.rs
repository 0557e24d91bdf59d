//! Dense single-level Lucas-Kanade flow and its frame-level summary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gaussian_kernel, reflect};
use crate::tensorio::{Frame, VideoFrames};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Half-width of the square aggregation window (2 gives 5x5).
    pub window_radius: usize,
    /// Gaussian presmoothing applied before differentiation; 0 disables it.
    pub presmooth_sigma: f64,
    /// Added to the diagonal of the 2x2 normal matrix.
    pub eps: f64,
    /// Integer block-average factor applied before estimation.
    pub downscale: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            window_radius: 2,
            presmooth_sigma: 1.0,
            eps: 1e-6,
            downscale: 1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::invalid("window_radius must be >= 1"));
        }
        if !self.presmooth_sigma.is_finite() || self.presmooth_sigma < 0.0 {
            return Err(Error::invalid(
                "presmooth_sigma must be a finite value >= 0",
            ));
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::invalid("eps must be a finite value > 0"));
        }
        if self.downscale < 1 {
            return Err(Error::invalid("downscale must be >= 1"));
        }
        Ok(())
    }
}

/// Per-pixel displacement from frame `a` to frame `b`, in source pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }
}

/// A downscaled, presmoothed copy of one frame.
struct Plane {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

fn prepare(frame: &Frame, p: &FlowParams) -> Plane {
    let k = p.downscale;
    let (h, w) = (frame.height / k, frame.width / k);
    let mut px = vec![0.0f64; h * w];
    if k == 1 {
        px.iter_mut()
            .zip(&frame.gray)
            .for_each(|(d, &s)| *d = s as f64);
    } else {
        let norm = 1.0 / (k * k) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0u32;
                for dy in 0..k {
                    let row = (y * k + dy) * frame.width + x * k;
                    acc += frame.gray[row..row + k]
                        .iter()
                        .map(|&v| v as u32)
                        .sum::<u32>();
                }
                px[y * w + x] = acc as f64 * norm;
            }
        }
    }
    if p.presmooth_sigma > 0.0 {
        px = smooth_2d(&px, h, w, &gaussian_kernel(p.presmooth_sigma));
    }
    Plane { h, w, px }
}

fn smooth_2d(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * row[reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Sum over the `(2r+1)^2` window around each pixel, with reflected borders.
fn box_sum(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let ri = r as isize;
    let span = 2 * r + 1;
    let mut horiz = vec![0.0; h * w];
    let mut prefix = vec![0.0; w + span];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for i in 0..w + 2 * r {
            prefix[i + 1] = prefix[i] + row[reflect(i as isize - ri, w)];
        }
        for x in 0..w {
            horiz[y * w + x] = prefix[x + span] - prefix[x];
        }
    }
    let mut out = vec![0.0; h * w];
    let mut prefix = vec![0.0; h + span];
    for x in 0..w {
        for i in 0..h + 2 * r {
            prefix[i + 1] = prefix[i] + horiz[reflect(i as isize - ri, h) * w + x];
        }
        for y in 0..h {
            out[y * w + x] = prefix[y + span] - prefix[y];
        }
    }
    out
}

fn check_pair(a: &Frame, b: &Frame, p: &FlowParams) -> Result<()> {
    p.validate()?;
    if a.height != b.height || a.width != b.width {
        return Err(Error::dims(format!(
            "frames are {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let side = 2 * p.window_radius + 1;
    let (h, w) = (a.height / p.downscale, a.width / p.downscale);
    if h < side || w < side {
        return Err(Error::dims(format!(
            "frame {}x{} (downscaled {h}x{w}) is smaller than the {side}x{side} window",
            a.height, a.width
        )));
    }
    Ok(())
}

fn flow_between(a: &Plane, b: &Plane, p: &FlowParams, out_h: usize, out_w: usize) -> FlowField {
    let (h, w) = (a.h, a.w);
    let n = h * w;
    let mut ixx = vec![0.0; n];
    let mut ixy = vec![0.0; n];
    let mut iyy = vec![0.0; n];
    let mut ixt = vec![0.0; n];
    let mut iyt = vec![0.0; n];
    // Derivatives on the 2x2x2 cube spanning (y..=y+1, x..=x+1, a..=b).
    let (pa, pb) = (&a.px, &b.px);
    for y in 0..h {
        let y1 = reflect(y as isize + 1, h);
        for x in 0..w {
            let x1 = reflect(x as isize + 1, w);
            let (a00, a01, a10, a11) = (
                pa[y * w + x],
                pa[y * w + x1],
                pa[y1 * w + x],
                pa[y1 * w + x1],
            );
            let (b00, b01, b10, b11) = (
                pb[y * w + x],
                pb[y * w + x1],
                pb[y1 * w + x],
                pb[y1 * w + x1],
            );
            let gx = 0.25 * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
            let gy = 0.25 * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
            let gt = 0.25 * ((b00 - a00) + (b01 - a01) + (b10 - a10) + (b11 - a11));
            let i = y * w + x;
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
            ixt[i] = gx * gt;
            iyt[i] = gy * gt;
        }
    }
    let r = p.window_radius;
    let (sxx, sxy, syy) = (
        box_sum(&ixx, h, w, r),
        box_sum(&ixy, h, w, r),
        box_sum(&iyy, h, w, r),
    );
    let (sxt, syt) = (box_sum(&ixt, h, w, r), box_sum(&iyt, h, w, r));

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        let (m00, m01, m11) = (sxx[i] + p.eps, sxy[i], syy[i] + p.eps);
        let (r0, r1) = (-sxt[i], -syt[i]);
        let det = m00 * m11 - m01 * m01;
        u[i] = (m11 * r0 - m01 * r1) / det;
        v[i] = (m00 * r1 - m01 * r0) / det;
    }

    let k = p.downscale;
    if k == 1 {
        return FlowField {
            height: out_h,
            width: out_w,
            u,
            v,
        };
    }
    let scale = k as f64;
    let mut field = FlowField::zeros(out_h, out_w);
    for y in 0..out_h {
        let sy = (y / k).min(h - 1);
        for x in 0..out_w {
            let sx = (x / k).min(w - 1);
            field.u[y * out_w + x] = u[sy * w + sx] * scale;
            field.v[y * out_w + x] = v[sy * w + sx] * scale;
        }
    }
    field
}

/// Estimates dense flow from `a` to `b`.
pub fn lucas_kanade(a: &Frame, b: &Frame, p: &FlowParams) -> Result<FlowField> {
    check_pair(a, b, p)?;
    if a.gray == b.gray {
        return Ok(FlowField::zeros(a.height, a.width));
    }
    let (pa, pb) = (prepare(a, p), prepare(b, p));
    Ok(flow_between(&pa, &pb, p, a.height, a.width))
}

/// Mean per-pixel flow magnitude `sqrt(u^2 + v^2)`.
pub fn flow_summary(f: &FlowField) -> f64 {
    if f.u.is_empty() {
        return 0.0;
    }
    let total: f64 = f.u.iter().zip(&f.v).map(|(u, v)| u.hypot(*v)).sum();
    total / f.u.len() as f64
}

/// Frame-level flow magnitude for each adjacent pair; length `T - 1`.
pub fn compute_flow_curve(video: &VideoFrames, p: &FlowParams) -> Result<Vec<f64>> {
    let frames = video.frames();
    if frames.len() < 2 {
        return Err(Error::invalid(format!(
            "a flow curve needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    check_pair(&frames[0], &frames[1], p)?;
    frames
        .par_windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            if a.gray == b.gray {
                return Ok(0.0);
            }
            let (pa, pb) = (prepare(a, p), prepare(b, p));
            Ok(flow_summary(&flow_between(&pa, &pb, p, a.height, a.width)))
        })
        .collect()
}
