//! Emotion-triggered tube selection over projected patch tokens.
//!
//! A two-layer perceptron scores every patch token, the `[N, L]` scores are laid
//! out on the `[N, G, G]` patch grid, averaged over `t x h x w` tubes, and the
//! Top-K tubes supply the spatial tokens. CLS tokens pass through untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{Tensor, WeightBundle};

/// Patch tokens `[N, L, C]` plus optional per-frame CLS tokens `[N, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    patch: Tensor,
    cls: Option<Tensor>,
    side: usize,
}

impl TokenGrid {
    pub fn new(patch: Tensor, cls: Option<Tensor>) -> Result<Self> {
        let &[n, l, c] = patch.dims() else {
            return Err(Error::dims(format!(
                "patch tokens must be [N, L, C], got {:?}",
                patch.dims()
            )));
        };
        let side = grid_side(l)?;
        if let Some(cls) = &cls {
            if cls.dims() != [n, c] {
                return Err(Error::dims(format!(
                    "cls tokens must be [{n}, {c}], got {:?}",
                    cls.dims()
                )));
            }
        }
        Ok(Self { patch, cls, side })
    }

    pub fn frames(&self) -> usize {
        self.patch.dims()[0]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.patch.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.patch.dims()[2]
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn patch(&self) -> &Tensor {
        &self.patch
    }

    pub fn cls(&self) -> Option<&Tensor> {
        self.cls.as_ref()
    }

    fn token(&self, frame: usize, pos: usize) -> &[f32] {
        let c = self.channels();
        let start = (frame * self.tokens_per_frame() + pos) * c;
        &self.patch.data()[start..start + c]
    }
}

/// Square-root of `l` if it is a perfect square.
pub fn grid_side(l: usize) -> Result<usize> {
    let s = (l as f64).sqrt().round() as usize;
    if s * s == l && s > 0 {
        Ok(s)
    } else {
        Err(Error::dims(format!(
            "{l} tokens per frame is not a perfect square"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const GELU_K: f64 = 0.044_715;

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Gelu => 0.5 * x * (1.0 + (Self::GELU_C * (x + Self::GELU_K * x * x * x)).tanh()),
            Self::Relu => x.max(0.0),
            Self::Identity => x,
        }
    }

    fn code(self) -> f32 {
        match self {
            Self::Gelu => 0.0,
            Self::Relu => 1.0,
            Self::Identity => 2.0,
        }
    }

    fn from_code(v: f32) -> Result<Self> {
        match v {
            0.0 => Ok(Self::Gelu),
            1.0 => Ok(Self::Relu),
            2.0 => Ok(Self::Identity),
            other => Err(Error::format(format!("unknown activation code {other}"))),
        }
    }
}

/// Parameters of the token scorer `C -> H -> 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl ScorerWeights {
    pub fn new(
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        let &[h, _c] = w1.dims() else {
            return Err(Error::dims(format!(
                "w1 must be [H, C], got {:?}",
                w1.dims()
            )));
        };
        if b1.dims() != [h] {
            return Err(Error::dims(format!(
                "b1 must be [{h}], got {:?}",
                b1.dims()
            )));
        }
        if w2.dims() != [1, h] {
            return Err(Error::dims(format!(
                "w2 must be [1, {h}], got {:?}",
                w2.dims()
            )));
        }
        if b2.dims() != [1] {
            return Err(Error::dims(format!("b2 must be [1], got {:?}", b2.dims())));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w1.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.w1.dims()[1]
    }

    /// Default hidden width: `ceil(C / 4)`.
    pub fn default_hidden(channels: usize) -> usize {
        channels.div_ceil(4).max(1)
    }

    /// Seeded uniform init in `+-1/sqrt(fan_in)`; for tests and dry runs only.
    pub fn random(channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f32> {
            let bound = 1.0 / (fan_in as f32).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let w1 = Tensor::new(vec![hidden, channels], draw(hidden * channels, channels))?;
        let b1 = Tensor::new(vec![hidden], draw(hidden, channels))?;
        let w2 = Tensor::new(vec![1, hidden], draw(hidden, hidden))?;
        let b2 = Tensor::new(vec![1], draw(1, hidden))?;
        Self::new(w1, b1, w2, b2, Activation::Gelu)
    }

    /// Reads `w1`, `b1`, `w2`, `b2` and the optional one-element `activation`
    /// code (0 gelu, 1 relu, 2 identity; gelu when absent).
    pub fn from_bundle(b: &WeightBundle) -> Result<Self> {
        let get = |name: &str| {
            b.get(name)
                .cloned()
                .ok_or_else(|| Error::format(format!("weight bundle is missing {name:?}")))
        };
        let activation = match b.get("activation") {
            None => Activation::Gelu,
            Some(t) if t.numel() == 1 => Activation::from_code(t.data()[0])?,
            Some(t) => {
                return Err(Error::format(format!(
                    "activation entry has {} values",
                    t.numel()
                )))
            }
        };
        Self::new(get("w1")?, get("b1")?, get("w2")?, get("b2")?, activation)
    }

    pub fn to_bundle(&self) -> Result<WeightBundle> {
        let mut b = WeightBundle::new();
        b.insert("w1", self.w1.clone())?;
        b.insert("b1", self.b1.clone())?;
        b.insert("w2", self.w2.clone())?;
        b.insert("b2", self.b2.clone())?;
        b.insert(
            "activation",
            Tensor::new(vec![1], vec![self.activation.code()])?,
        )?;
        Ok(b)
    }
}

/// Tube extents and strides, ordered (time, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeGeometry {
    pub shape: [usize; 3],
    pub stride: [usize; 3],
}

impl Default for TubeGeometry {
    fn default() -> Self {
        Self {
            shape: [2, 4, 4],
            stride: [2, 4, 4],
        }
    }
}

impl TubeGeometry {
    pub fn with_shape(shape: [usize; 3]) -> Self {
        Self {
            shape,
            stride: shape,
        }
    }

    pub fn tube_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Tube counts `floor((extent - size) / stride) + 1` along each axis of an
    /// `[n, side, side]` volume.
    pub fn counts(&self, n: usize, side: usize) -> Result<[usize; 3]> {
        let extents = [n, side, side];
        let mut out = [0; 3];
        for axis in 0..3 {
            let (size, stride, ext) = (self.shape[axis], self.stride[axis], extents[axis]);
            if size == 0 || stride == 0 {
                return Err(Error::invalid("tube shape and stride must be >= 1"));
            }
            if size > ext {
                return Err(Error::dims(format!(
                    "tube shape {:?} exceeds volume [{n}, {side}, {side}]",
                    self.shape
                )));
            }
            out[axis] = (ext - size) / stride + 1;
        }
        Ok(out)
    }
}

/// Token scores `[N, L]`: `w2 . act(w1 . token + b1) + b2`.
pub fn score_tokens(grid: &TokenGrid, s: &ScorerWeights) -> Result<Tensor> {
    let c = grid.channels();
    if s.channels() != c {
        return Err(Error::dims(format!(
            "tokens have {c} channels but the scorer expects {}",
            s.channels()
        )));
    }
    let (n, l, h) = (grid.frames(), grid.tokens_per_frame(), s.hidden());
    let (w1, b1, w2, b2) = (s.w1.data(), s.b1.data(), s.w2.data(), s.b2.data()[0] as f64);
    let mut out = Vec::with_capacity(n * l);
    for tok in grid.patch.data().chunks_exact(c) {
        let mut acc = b2;
        for j in 0..h {
            let row = &w1[j * c..(j + 1) * c];
            let pre: f64 = b1[j] as f64
                + row
                    .iter()
                    .zip(tok)
                    .map(|(&w, &x)| w as f64 * x as f64)
                    .sum::<f64>();
            acc += w2[j] as f64 * s.activation.apply(pre);
        }
        out.push(acc as f32);
    }
    Tensor::new(vec![n, l], out)
}

/// `[N, L] -> [N, G, G]`, element `(n, y, x) = c[n, y G + x]`.
pub fn reshape_scores(c: &Tensor) -> Result<Tensor> {
    let &[n, l] = c.dims() else {
        return Err(Error::dims(format!(
            "scores must be [N, L], got {:?}",
            c.dims()
        )));
    };
    let g = grid_side(l)?;
    c.clone().reshape(vec![n, g, g])
}

/// Mean score of every tube, `[n_t, n_h, n_w]`.
pub fn partition_tubes(vol: &Tensor, geo: &TubeGeometry) -> Result<Tensor> {
    let &[n, gh, gw] = vol.dims() else {
        return Err(Error::dims(format!(
            "score volume must be [N, G, G], got {:?}",
            vol.dims()
        )));
    };
    if gh != gw {
        return Err(Error::dims(format!(
            "score volume must be square, got {gh}x{gw}"
        )));
    }
    let g = gh;
    let [nt, nh, nw] = geo.counts(n, g)?;
    let [t, h, w] = geo.shape;
    let [dt, dh, dw] = geo.stride;
    let data = vol.data();
    let denom = geo.tube_len() as f64;
    let mut scores = Vec::with_capacity(nt * nh * nw);
    for i in 0..nt {
        for j in 0..nh {
            for k in 0..nw {
                let mut acc = 0.0f64;
                for f in i * dt..i * dt + t {
                    for y in j * dh..j * dh + h {
                        let row = (f * g + y) * g;
                        acc += data[row + k * dw..row + k * dw + w]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                }
                scores.push((acc / denom) as f32);
            }
        }
    }
    Tensor::new(vec![nt, nh, nw], scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSelection {
    /// Tube grid extents `[n_t, n_h, n_w]`.
    pub counts: [usize; 3],
    /// All tube scores, t-major.
    pub tube_scores: Vec<f32>,
    /// Selected tube coordinates, best first.
    pub selected: Vec<[usize; 3]>,
}

impl TubeSelection {
    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn selected_scores(&self) -> Vec<f32> {
        let [_, nh, nw] = self.counts;
        self.selected
            .iter()
            .map(|&[i, j, k]| self.tube_scores[(i * nh + j) * nw + k])
            .collect()
    }
}

/// The `k` highest tubes, ties broken by smaller linear index.
pub fn select_top_k(tube_scores: &Tensor, k: usize) -> Result<TubeSelection> {
    let &[nt, nh, nw] = tube_scores.dims() else {
        return Err(Error::dims(format!(
            "tube scores must be 3-D, got {:?}",
            tube_scores.dims()
        )));
    };
    let total = nt * nh * nw;
    if k < 1 || k > total {
        return Err(Error::invalid(format!("k = {k} outside 1..={total}")));
    }
    let scores = tube_scores.data();
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("tube {i} has a non-finite score")));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < total {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    let selected = order
        .into_iter()
        .map(|lin| [lin / (nh * nw), (lin / nw) % nh, lin % nw])
        .collect();
    Ok(TubeSelection {
        counts: [nt, nh, nw],
        tube_scores: scores.to_vec(),
        selected,
    })
}

/// Spatial tokens `[K t h w, C]` in selection order, plus the CLS tokens.
pub fn gather_tokens(
    grid: &TokenGrid,
    sel: &TubeSelection,
    geo: &TubeGeometry,
) -> Result<(Tensor, Option<Tensor>)> {
    let g = grid.side();
    let counts = geo.counts(grid.frames(), g)?;
    if counts != sel.counts {
        return Err(Error::dims(format!(
            "selection was made on a {:?} tube grid, geometry gives {counts:?}",
            sel.counts
        )));
    }
    let [t, h, w] = geo.shape;
    let [dt, dh, dw] = geo.stride;
    let c = grid.channels();
    let mut data = Vec::with_capacity(sel.k() * geo.tube_len() * c);
    for &[i, j, k] in &sel.selected {
        if i >= counts[0] || j >= counts[1] || k >= counts[2] {
            return Err(Error::dims(format!(
                "tube ({i}, {j}, {k}) outside {counts:?}"
            )));
        }
        for f in i * dt..i * dt + t {
            for y in j * dh..j * dh + h {
                for x in k * dw..k * dw + w {
                    data.extend_from_slice(grid.token(f, y * g + x));
                }
            }
        }
    }
    let spatial = Tensor::new(vec![sel.k() * geo.tube_len(), c], data)?;
    Ok((spatial, grid.cls().cloned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeOutput {
    pub selection: TubeSelection,
    pub spatial: Tensor,
    pub temporal: Option<Tensor>,
    /// Token scores laid out as `[N, G, G]`.
    pub heatmap: Tensor,
}

pub fn select_pipeline(
    grid: &TokenGrid,
    s: &ScorerWeights,
    geo: &TubeGeometry,
    k: usize,
) -> Result<TubeOutput> {
    let scores = score_tokens(grid, s)?;
    let heatmap = reshape_scores(&scores)?;
    let tubes = partition_tubes(&heatmap, geo)?;
    let selection = select_top_k(&tubes, k)?;
    let (spatial, temporal) = gather_tokens(grid, &selection, geo)?;
    Ok(TubeOutput {
        selection,
        spatial,
        temporal,
        heatmap,
    })
}
