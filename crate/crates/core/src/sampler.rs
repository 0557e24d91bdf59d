//! Event-driven frame sampling.
//!
//! The raw flow curve is Gaussian-smoothed, its highest prominent peaks become
//! event centers, each event claims a window of frames around its peak, and the
//! frame budget `N` is split evenly between the event windows and the single
//! remaining "non-event" set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{compute_flow_curve, FlowParams};
use crate::kernel::{gaussian_kernel, reflect};
use crate::tensorio::VideoFrames;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Frame budget.
    pub n: usize,
    /// Maximum number of event peaks.
    pub p: usize,
    /// Half-width of an event window, in frames.
    pub d: usize,
    /// Gaussian sigma applied to the flow curve, in frames.
    pub sigma: f64,
    /// Minimum peak separation; `None` means `2d + 1`.
    pub min_distance: Option<usize>,
    /// Prominence threshold as a fraction of the smoothed curve's range.
    pub prominence_frac: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n: 6,
            p: 2,
            d: 5,
            sigma: 2.0,
            min_distance: None,
            prominence_frac: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn effective_min_distance(&self) -> usize {
        self.min_distance.unwrap_or(2 * self.d + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid("sigma must be a finite value >= 0"));
        }
        if self.effective_min_distance() < 1 {
            return Err(Error::invalid("min_distance must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.prominence_frac) {
            return Err(Error::invalid("prominence_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCurve {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub sigma: f64,
}

impl FlowCurve {
    pub fn from_raw(raw: Vec<f64>, sigma: f64) -> Result<Self> {
        let smoothed = gaussian_smooth(&raw, sigma)?;
        Ok(Self {
            raw,
            smoothed,
            sigma,
        })
    }
}

/// Convolves `raw` with a normalized Gaussian (radius `ceil(3 sigma)`,
/// reflected borders). `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth(raw: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot smooth an empty curve"));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(raw.to_vec());
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let n = raw.len();
    Ok((0..n as isize)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(i, g)| g * raw[reflect(t + r - i as isize, n)])
                .sum()
        })
        .collect())
}

/// Local maxima (plateaus report their leftmost index).
fn local_maxima(curve: &[f64]) -> Vec<usize> {
    let n = curve.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if curve[i - 1] < curve[i] {
            let mut j = i;
            while j + 1 < n && curve[j + 1] == curve[i] {
                j += 1;
            }
            if j + 1 < n && curve[j + 1] < curve[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Topographic prominence of the peak at `i`: its height above the higher of
/// the two lowest points reached before climbing above it (or hitting the
/// curve's end) on either side.
pub fn prominence(curve: &[f64], i: usize) -> f64 {
    let h = curve[i];
    let mut left_min = h;
    for &v in curve[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &curve[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Peak indices sorted by descending height (ties: lower index first) after
/// prominence filtering and greedy minimum-distance suppression.
pub fn find_peaks(curve: &[f64], min_distance: usize, prominence_min: f64) -> Vec<usize> {
    let mut candidates: Vec<usize> = local_maxima(curve)
        .into_iter()
        .filter(|&i| prominence(curve, i) >= prominence_min)
        .collect();
    candidates.sort_by(|&a, &b| curve[b].total_cmp(&curve[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    /// Curve index of the (highest) peak; it spans frames `center` and `center + 1`.
    pub center: usize,
    pub lo: usize,
    pub hi: usize,
    pub peak_height: f64,
}

impl EventWindow {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.lo..=self.hi).contains(&frame)
    }
}

/// Event windows (ordered by descending peak height) and the leftover frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPartition {
    pub windows: Vec<EventWindow>,
    pub non_event: Vec<usize>,
    pub frame_count: usize,
    pub p_effective: usize,
}

/// Turns up to `p` peaks (highest first) into merged event windows.
///
/// Curve index `e` maps to frames `[e - d, e + d + 1]`, clipped to the video.
pub fn build_partition(
    peaks: &[usize],
    curve: &[f64],
    frame_count: usize,
    p: usize,
    d: usize,
) -> Result<EventPartition> {
    if frame_count != curve.len() + 1 {
        return Err(Error::invalid(format!(
            "frame count {frame_count} does not match curve length {}",
            curve.len()
        )));
    }
    if let Some(&bad) = peaks.iter().find(|&&e| e >= curve.len()) {
        return Err(Error::invalid(format!(
            "peak index {bad} outside the curve"
        )));
    }
    let mut windows: Vec<EventWindow> = Vec::new();
    for &e in peaks.iter().take(p) {
        let mut w = EventWindow {
            center: e,
            lo: e.saturating_sub(d),
            hi: (e + d + 1).min(frame_count - 1),
            peak_height: curve[e],
        };
        // absorb every existing window it overlaps; the higher peak keeps the center
        while let Some(pos) = windows.iter().position(|o| o.lo <= w.hi && w.lo <= o.hi) {
            let o = windows.remove(pos);
            let (center, peak_height) = if o.peak_height >= w.peak_height {
                (o.center, o.peak_height)
            } else {
                (w.center, w.peak_height)
            };
            w = EventWindow {
                center,
                lo: o.lo.min(w.lo),
                hi: o.hi.max(w.hi),
                peak_height,
            };
        }
        windows.push(w);
    }
    windows.sort_by(|a, b| {
        b.peak_height
            .total_cmp(&a.peak_height)
            .then(a.center.cmp(&b.center))
    });
    let non_event = (0..frame_count)
        .filter(|f| !windows.iter().any(|w| w.contains(*f)))
        .collect();
    let p_effective = windows.len();
    Ok(EventPartition {
        windows,
        non_event,
        frame_count,
        p_effective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub indices: Vec<usize>,
    /// Quota per set: non-event first, then windows in partition order.
    pub per_event_quota: Vec<usize>,
    pub partition: EventPartition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<SamplerConfig>,
}

/// `q` positions spread evenly over `0..m` by `round(j (m - 1) / (q - 1))`.
fn spread(m: usize, q: usize) -> Vec<usize> {
    match q {
        0 => Vec::new(),
        1 => vec![(m - 1) / 2],
        _ => (0..q)
            .map(|j| {
                let num = 2 * j * (m - 1) + (q - 1);
                num / (2 * (q - 1))
            })
            .collect(),
    }
}

/// Splits the budget `n` over the partition's sets and samples each set.
pub fn allocate_and_sample(part: &EventPartition, n: usize) -> Result<SamplingPlan> {
    let t = part.frame_count;
    if n == 0 {
        return Err(Error::invalid("frame budget must be >= 1"));
    }
    if n > t {
        return Err(Error::invalid(format!(
            "frame budget {n} exceeds the {t} available frames"
        )));
    }
    let sets = part.windows.len() + 1;
    let base = n / sets;
    let remainder = n % sets;
    // set 0 is non-event, sets 1.. follow the windows' height order
    let mut quota: Vec<usize> = (0..sets)
        .map(|s| base + usize::from(s < remainder))
        .collect();
    let sizes: Vec<usize> = std::iter::once(part.non_event.len())
        .chain(part.windows.iter().map(EventWindow::len))
        .collect();

    let mut surplus = 0usize;
    for s in 1..sets {
        if quota[s] > sizes[s] {
            surplus += quota[s] - sizes[s];
            quota[s] = sizes[s];
        }
    }
    quota[0] += surplus;
    // non-event may itself be too small (windows cover almost everything)
    if quota[0] > sizes[0] {
        let mut extra = quota[0] - sizes[0];
        quota[0] = sizes[0];
        for s in 1..sets {
            let room = sizes[s] - quota[s];
            let take = room.min(extra);
            quota[s] += take;
            extra -= take;
        }
        debug_assert_eq!(extra, 0);
    }

    let mut indices = Vec::with_capacity(n);
    indices.extend(
        spread(sizes[0], quota[0])
            .into_iter()
            .map(|k| part.non_event[k]),
    );
    for (w, &q) in part.windows.iter().zip(&quota[1..]) {
        if q == 1 {
            // a single pick is the peak frame itself
            indices.push(w.center.clamp(w.lo, w.hi));
        } else {
            indices.extend(spread(w.len(), q).into_iter().map(|k| w.lo + k));
        }
    }
    indices.sort_unstable();
    debug_assert!(indices.windows(2).all(|p| p[0] < p[1]));
    Ok(SamplingPlan {
        indices,
        per_event_quota: quota,
        partition: part.clone(),
        config: None,
    })
}

/// Runs the full sampler on a raw flow curve.
pub fn plan_from_curve(
    raw: Vec<f64>,
    cfg: &SamplerConfig,
) -> Result<(FlowCurve, Vec<usize>, SamplingPlan)> {
    cfg.validate()?;
    let curve = FlowCurve::from_raw(raw, cfg.sigma)?;
    let (lo, hi) = curve
        .smoothed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let prominence_min = cfg.prominence_frac * (hi - lo);
    let peaks = find_peaks(
        &curve.smoothed,
        cfg.effective_min_distance(),
        prominence_min,
    );
    let part = build_partition(&peaks, &curve.smoothed, curve.raw.len() + 1, cfg.p, cfg.d)?;
    let mut plan = allocate_and_sample(&part, cfg.n)?;
    plan.config = Some(*cfg);
    Ok((curve, peaks, plan))
}

/// Flow curve, smoothing, peak picking, partition and budgeted sampling.
pub fn sample_frames(
    video: &VideoFrames,
    cfg: &SamplerConfig,
    fp: &FlowParams,
) -> Result<SamplingPlan> {
    cfg.validate()?;
    if cfg.n > video.frame_count() {
        return Err(Error::invalid(format!(
            "frame budget {} exceeds the {} available frames",
            cfg.n,
            video.frame_count()
        )));
    }
    let raw = compute_flow_curve(video, fp)?;
    plan_from_curve(raw, cfg).map(|(_, _, plan)| plan)
}

/// Deterministic uniform sampling: `round(j (T - 1) / (N - 1))`.
pub fn uniform_indices(frame_count: usize, n: usize) -> Vec<usize> {
    spread(frame_count, n)
}
