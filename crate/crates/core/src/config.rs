//! Flat `key = value` run settings shared by every command.
//!
//! A settings file is TOML with top-level keys only. A JSON artifact written by
//! an earlier run is accepted too; its `config` object is read back, so the
//! emitted config reproduces the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::sampler::SamplerConfig;
use crate::tubes::TubeGeometry;

/// Version stamped into every artifact.
pub const SCHEMA_VERSION: &str = "1";

/// Every tunable, all optional so layers can be stacked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prominence_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub presmooth_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downscale: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    /// Hidden width of the seeded random scorer used when no weights are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Eval: predictions counted for Top-k accuracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("config: {}", e.message())))
    }

    /// Reads the `config` object of a JSON artifact.
    pub fn from_artifact_json(text: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        let cfg = v
            .get("config")
            .ok_or_else(|| Error::format("config: JSON artifact has no `config` object"))?;
        serde_json::from_value(cfg.clone()).map_err(|e| Error::format(format!("config: {e}")))
    }

    /// JSON if the first non-blank byte is `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_artifact_json(text)
        } else {
            Self::from_toml(text)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// Values set in `top` win over values in `self`.
    pub fn overlay(mut self, top: &Settings) -> Self {
        overlay!(
            self,
            top,
            n,
            p,
            d,
            sigma,
            min_distance,
            prominence_frac,
            window_radius,
            presmooth_sigma,
            eps,
            downscale,
            tube,
            stride,
            topk,
            hidden,
            k,
            seed
        );
        self
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let def = SamplerConfig::default();
        let cfg = SamplerConfig {
            n: self.n.unwrap_or(def.n),
            p: self.p.unwrap_or(def.p),
            d: self.d.unwrap_or(def.d),
            sigma: self.sigma.unwrap_or(def.sigma),
            min_distance: self.min_distance.or(def.min_distance),
            prominence_frac: self.prominence_frac.unwrap_or(def.prominence_frac),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn flow(&self) -> Result<FlowParams> {
        let def = FlowParams::default();
        let fp = FlowParams {
            window_radius: self.window_radius.unwrap_or(def.window_radius),
            presmooth_sigma: self.presmooth_sigma.unwrap_or(def.presmooth_sigma),
            eps: self.eps.unwrap_or(def.eps),
            downscale: self.downscale.unwrap_or(def.downscale),
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn geometry(&self) -> TubeGeometry {
        let shape = self.tube.unwrap_or(TubeGeometry::default().shape);
        TubeGeometry {
            shape,
            stride: self.stride.unwrap_or(shape),
        }
    }

    pub fn topk(&self) -> usize {
        self.topk.unwrap_or(4)
    }

    pub fn eval_k(&self) -> usize {
        self.k.unwrap_or(3)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Fully resolved sampling and flow keys.
    pub fn effective_sampling(&self) -> Result<Settings> {
        let s = self.sampler()?;
        let f = self.flow()?;
        Ok(Settings {
            n: Some(s.n),
            p: Some(s.p),
            d: Some(s.d),
            sigma: Some(s.sigma),
            min_distance: Some(s.effective_min_distance()),
            prominence_frac: Some(s.prominence_frac),
            window_radius: Some(f.window_radius),
            presmooth_sigma: Some(f.presmooth_sigma),
            eps: Some(f.eps),
            downscale: Some(f.downscale),
            ..Settings::default()
        })
    }

    pub fn effective_tubes(&self) -> Settings {
        let g = self.geometry();
        Settings {
            tube: Some(g.shape),
            stride: Some(g.stride),
            topk: Some(self.topk()),
            seed: Some(self.seed()),
            ..Settings::default()
        }
    }

    pub fn effective_eval(&self) -> Settings {
        Settings {
            k: Some(self.eval_k()),
            ..Settings::default()
        }
    }
}
