//! Independent oracles and synthetic inputs shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stimusel::tensorio::{Frame, VideoFrames};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random bytes.
pub fn noise(h: usize, w: usize, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    (0..h * w).map(|_| r.gen()).collect()
}

/// Crops a `h x w` window at horizontal offset `dx` from a wider texture.
pub fn crop(tex: &[u8], tex_w: usize, h: usize, w: usize, dx: usize) -> Frame {
    let g = (0..h)
        .flat_map(|y| (0..w).map(move |x| tex[y * tex_w + x + dx]))
        .collect();
    Frame::from_gray(h, w, g).unwrap()
}

/// A static textured video whose frames `start..start + width` each pan
/// `step` pixels further than the previous one.
pub fn burst_video(
    t: usize,
    h: usize,
    w: usize,
    start: usize,
    width: usize,
    step: usize,
    seed: u64,
) -> VideoFrames {
    let tex_w = w + width * step;
    let tex = noise(h, tex_w, seed);
    let mut dx = 0;
    let frames = (0..t)
        .map(|i| {
            if (start..start + width).contains(&i) {
                dx += step;
            }
            crop(&tex, tex_w, h, w, dx)
        })
        .collect();
    VideoFrames::new(frames, format!("burst-{seed}")).unwrap()
}

/// Folds any integer offset back into `0..n` by mirroring about the edges,
/// repeating the edge sample (`b a | a b c | c b`).
pub fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Gaussian smoothing by direct summation over an explicitly padded copy.
pub fn smooth_oracle(raw: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return raw.to_vec();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let n = raw.len();
    let padded: Vec<f64> = (-r..n as i64 + r).map(|i| raw[mirror(i, n)]).collect();
    let w: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    (0..n)
        .map(|t| {
            w.iter()
                .enumerate()
                .map(|(i, wi)| wi * padded[t + i])
                .sum::<f64>()
                / z
        })
        .collect()
}

/// Peaks by exhaustive search: every strict local maximum (plateaus count once
/// at their left end), its prominence from the two bases, then repeated
/// "take the best remaining, drop everything too close".
pub fn peaks_oracle(x: &[f64], min_distance: usize, prominence_min: f64) -> Vec<usize> {
    let n = x.len();
    let mut cands = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if x[i - 1] >= x[i] {
            continue;
        }
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n || x[j + 1] > x[i] {
            continue;
        }
        let mut lmin = x[i];
        let mut a = i;
        while a > 0 && x[a - 1] <= x[i] {
            a -= 1;
            lmin = lmin.min(x[a]);
        }
        let mut rmin = x[i];
        let mut b = i;
        while b + 1 < n && x[b + 1] <= x[i] {
            b += 1;
            rmin = rmin.min(x[b]);
        }
        if x[i] - lmin.max(rmin) >= prominence_min {
            cands.push(i);
        }
    }
    let mut alive = cands.clone();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &c in &alive {
            if x[c] > x[best] || (x[c] == x[best] && c < best) {
                best = c;
            }
        }
        kept.push(best);
        alive.retain(|&c| c.abs_diff(best) >= min_distance);
    }
    kept
}

/// Indices of the `k` largest values, ties to the smaller index, via a full sort.
pub fn topk_oracle(scores: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Straight-loop two-layer perceptron over row-major `tokens [M, C]`.
pub fn mlp_oracle(
    tokens: &[f32],
    c: usize,
    w1: &[f32],
    b1: &[f32],
    w2: &[f32],
    b2: f32,
) -> Vec<f64> {
    let h = b1.len();
    let m = tokens.len() / c;
    let mut out = vec![0.0; m];
    for r in 0..m {
        let mut s = b2 as f64;
        for j in 0..h {
            let mut z = b1[j] as f64;
            for i in 0..c {
                z += w1[j * c + i] as f64 * tokens[r * c + i] as f64;
            }
            s += w2[j] as f64 * gelu_tanh(z);
        }
        out[r] = s;
    }
    out
}

/// Mean of each non-overlapping `t x h x w` block of an `[N, G, G]` volume.
pub fn tube_means_oracle(vol: &[f32], n: usize, g: usize, shape: [usize; 3]) -> Vec<f64> {
    let [t, h, w] = shape;
    let mut out = Vec::new();
    for i in 0..n / t {
        for j in 0..g / h {
            for k in 0..g / w {
                let mut s = 0.0;
                for f in 0..t {
                    for y in 0..h {
                        for x in 0..w {
                            s += vol[((i * t + f) * g + j * h + y) * g + k * w + x] as f64;
                        }
                    }
                }
                out.push(s / (t * h * w) as f64);
            }
        }
    }
    out
}
