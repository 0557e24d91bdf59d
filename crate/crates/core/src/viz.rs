//! Heatmap overlays and flow-curve plots.

use std::fmt::Write as _;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::sampler::{EventWindow, FlowCurve};
use crate::tensorio::{Tensor, VideoFrames};

/// One rendered image and its suggested file name.
pub struct Rendered {
    pub name: String,
    pub image: GrayImage,
}

impl Rendered {
    pub fn png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.image
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::invalid(format!("{}: {e}", self.name)))?;
        Ok(buf.into_inner())
    }
}

/// Min-max normalizes the whole `[N, G, G]` volume to `0..=255`; a constant
/// volume maps to 128 everywhere.
pub fn normalize_heatmap(heatmap: &Tensor) -> Vec<u8> {
    let data = heatmap.data();
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![128; data.len()];
    }
    let range = (hi - lo) as f64;
    data.iter()
        .map(|&v| {
            (((v - lo) as f64 / range) * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// For each sampled frame (`indices` from a sampling plan): the frame itself,
/// its heatmap upscaled with nearest-neighbour to the frame size, and a 50/50
/// blend of the two.
pub fn render_overlay(
    frames: &VideoFrames,
    heatmap: &Tensor,
    indices: &[usize],
) -> Result<Vec<Rendered>> {
    let &[n, g, g2] = heatmap.dims() else {
        return Err(Error::dims(format!(
            "heatmap must be [N, G, G], got {:?}",
            heatmap.dims()
        )));
    };
    if g != g2 {
        return Err(Error::dims("heatmap must be square"));
    }
    if n != indices.len() {
        return Err(Error::dims(format!(
            "heatmap has {n} frames but the plan samples {}",
            indices.len()
        )));
    }
    let (h, w) = (frames.height(), frames.width());
    let norm = normalize_heatmap(heatmap);
    let mut out = Vec::with_capacity(3 * n);
    for (slot, &fi) in indices.iter().enumerate() {
        let frame = frames
            .frames()
            .get(fi)
            .ok_or_else(|| Error::invalid(format!("plan index {fi} outside the video")))?;
        let cells = &norm[slot * g * g..(slot + 1) * g * g];
        let mut heat = GrayImage::new(w as u32, h as u32);
        let mut blend = GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            let cy = y * g / h;
            for x in 0..w {
                let cx = x * g / w;
                let hv = cells[cy * g + cx];
                let fv = frame.gray_at(y, x);
                heat.put_pixel(x as u32, y as u32, image::Luma([hv]));
                let mixed = (fv as u16 + hv as u16).div_ceil(2);
                blend.put_pixel(x as u32, y as u32, image::Luma([mixed as u8]));
            }
        }
        let orig = GrayImage::from_raw(w as u32, h as u32, frame.gray.clone())
            .ok_or_else(|| Error::invalid("frame buffer does not match its dimensions"))?;
        out.push(Rendered {
            name: format!("frame{slot:02}_orig.png"),
            image: orig,
        });
        out.push(Rendered {
            name: format!("frame{slot:02}_heat.png"),
            image: heat,
        });
        out.push(Rendered {
            name: format!("frame{slot:02}_blend.png"),
            image: blend,
        });
    }
    Ok(out)
}

fn in_any_window(e: usize, windows: &[EventWindow]) -> bool {
    windows.iter().any(|w| w.contains(e))
}

/// `index,raw,smoothed,is_peak,in_window`, one row per curve sample.
pub fn curve_csv(curve: &FlowCurve, peaks: &[usize], windows: &[EventWindow]) -> String {
    let mut out = String::from("index,raw,smoothed,is_peak,in_window\n");
    for (i, (r, s)) in curve.raw.iter().zip(&curve.smoothed).enumerate() {
        let _ = writeln!(
            out,
            "{i},{r},{s},{},{}",
            peaks.contains(&i),
            in_any_window(i, windows)
        );
    }
    out
}

/// Raw and smoothed polylines with circles on the peaks and shaded windows.
pub fn curve_svg(curve: &FlowCurve, peaks: &[usize], windows: &[EventWindow]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 240.0;
    const PAD: f64 = 20.0;
    let n = curve.raw.len();
    let ymax = curve
        .raw
        .iter()
        .chain(&curve.smoothed)
        .fold(0.0f64, |m, &v| m.max(v))
        .max(f64::MIN_POSITIVE);
    let sx = |i: f64| PAD + if n > 1 { i / (n - 1) as f64 } else { 0.5 } * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - v / ymax * (H - 2.0 * PAD);
    let points = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64), sy(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    for w in windows {
        let x0 = sx(w.lo as f64);
        let x1 = sx(w.hi.min(n.saturating_sub(1)) as f64);
        let _ = writeln!(
            svg,
            "  <rect x=\"{x0:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{}\" fill=\"#fde68a\" fill-opacity=\"0.5\"/>",
            (x1 - x0).max(1.0),
            H - 2.0 * PAD
        );
    }
    let _ = writeln!(
        svg,
        "  <polyline fill=\"none\" stroke=\"#9ca3af\" stroke-width=\"1\" points=\"{}\"/>",
        points(&curve.raw)
    );
    let _ = writeln!(
        svg,
        "  <polyline fill=\"none\" stroke=\"#2563eb\" stroke-width=\"2\" points=\"{}\"/>",
        points(&curve.smoothed)
    );
    for &p in peaks {
        if let Some(&v) = curve.smoothed.get(p) {
            let _ = writeln!(
                svg,
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#dc2626\"/>",
                sx(p as f64),
                sy(v)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
