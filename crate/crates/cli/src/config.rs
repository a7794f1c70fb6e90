use std::collections::BTreeMap;
use std::path::Path;

use hgmt::cloud::{CloudKind, GenParams};
use hgmt::graphify::GraphOptions;
use hgmt::param::ParamOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Audit thresholds recognized under `[tolerances]`.
pub const TOLERANCE_KEYS: [&str; 4] = ["coverage", "graph_lipschitz", "projection_ratio", "carleson_slack"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "K")]
    pub enlargement: f64,
    #[serde(rename = "K0")]
    pub window: f64,
    pub c1: Option<f64>,
    pub tau: f64,
    #[serde(rename = "M")]
    pub max_depth: usize,
    pub eta: f64,
    pub scales_per_octave: usize,
    pub seed: u64,
    pub thread_count: Option<usize>,
    pub tolerances: BTreeMap<String, f64>,
    pub cloud: CloudSection,
    pub audit: AuditSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub kind: CloudKind,
    pub resolution: f64,
    pub side: f64,
    pub amplitude: f64,
    pub wavelength: Option<f64>,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Random probes per graph audit.
    pub probes: usize,
    /// Point pairs sampled by the big-piece audit.
    pub pairs: usize,
    /// Centers evaluated by the Carleson sum; all when zero.
    pub carleson_centers: usize,
    /// Grid points per axis in the graph sampling.
    pub samples_per_axis: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 1,
            k: 1,
            alpha: 2.0,
            eps: 0.05,
            delta: 0.1,
            enlargement: 20.0,
            window: 10.0,
            c1: None,
            tau: 0.05,
            max_depth: 6,
            eta: 0.5,
            scales_per_octave: 2,
            seed: 0,
            thread_count: None,
            tolerances: BTreeMap::new(),
            cloud: CloudSection::default(),
            audit: AuditSection::default(),
        }
    }
}

impl Default for CloudSection {
    fn default() -> Self {
        CloudSection {
            kind: CloudKind::Plane,
            resolution: 0.02,
            side: 1.0,
            amplitude: 0.0,
            wavelength: None,
            angle: 2.0,
        }
    }
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            probes: 2000,
            pairs: 10_000,
            carleson_centers: 256,
            samples_per_axis: 33,
        }
    }
}

fn bad(msg: String) -> CliError {
    CliError::Config(msg)
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bad(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks ranges in the order the constants are fixed: `K₀`, `δ`, `K`, `ε`, then the rest.
    pub fn validate(&self) -> Result<(), CliError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(bad(format!("{name} must be finite")))
            }
        };
        finite("K0", self.window)?;
        if self.window < 1.0 {
            return Err(bad(format!("K0 must be at least 1, got {}", self.window)));
        }
        finite("delta", self.delta)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(bad(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        finite("K", self.enlargement)?;
        if self.enlargement < self.window {
            return Err(bad(format!("K = {} must be at least K0 = {}", self.enlargement, self.window)));
        }
        finite("eps", self.eps)?;
        if !(self.eps > 0.0 && self.eps <= self.delta) {
            return Err(bad(format!("eps must lie in (0, delta], got {}", self.eps)));
        }
        if self.n == 0 || self.k == 0 || self.k > self.n {
            return Err(bad(format!("need 1 <= k <= n, got n = {}, k = {}", self.n, self.k)));
        }
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(bad(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if let Some(c1) = self.c1 {
            if !(c1 > 0.0 && c1 < 1.0) {
                return Err(bad(format!("c1 must lie in (0,1), got {c1}")));
            }
        }
        if !(self.tau >= 0.0 && self.tau < 0.5) {
            return Err(bad(format!("tau must lie in [0, 0.5), got {}", self.tau)));
        }
        if self.max_depth == 0 {
            return Err(bad("M must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(bad(format!("eta must lie in (0,1], got {}", self.eta)));
        }
        if self.scales_per_octave == 0 {
            return Err(bad("scales_per_octave must be at least 1".into()));
        }
        if self.thread_count == Some(0) {
            return Err(bad("thread_count must be at least 1".into()));
        }
        for (key, v) in &self.tolerances {
            if !TOLERANCE_KEYS.contains(&key.as_str()) {
                return Err(bad(format!("unknown tolerance '{key}'; expected one of {TOLERANCE_KEYS:?}")));
            }
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(bad(format!("tolerance '{key}' must be a nonnegative number")));
            }
        }
        let c = &self.cloud;
        if !(c.resolution > 0.0) || !(c.side > c.resolution) {
            return Err(bad(format!("cloud needs 0 < resolution < side, got {} and {}", c.resolution, c.side)));
        }
        if self.audit.samples_per_axis < 2 {
            return Err(bad("audit.samples_per_axis must be at least 2".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        if let Some(v) = self.tolerances.get(key) {
            return *v;
        }
        match key {
            "coverage" => self.eta,
            "graph_lipschitz" => 0.5,
            "projection_ratio" => 1.0 + 3.0 * self.delta,
            _ => 0.0,
        }
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams {
            kind: self.cloud.kind,
            n: self.n,
            k: self.k,
            resolution: self.cloud.resolution,
            side: self.cloud.side,
            amplitude: self.cloud.amplitude,
            wavelength: self.cloud.wavelength,
            angle: self.cloud.angle,
            plane: None,
        }
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            k0: self.window,
            eps: self.eps,
            delta: self.delta,
            ..GraphOptions::default()
        }
    }

    pub fn param_options(&self) -> ParamOptions {
        ParamOptions {
            c1: self.c1,
            tau: self.tau,
            max_depth: self.max_depth,
            k0: self.window,
            eta: self.eta,
        }
    }
}
