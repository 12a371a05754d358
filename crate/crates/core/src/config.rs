//! Run configuration: every tunable with its default, loaded from JSON or
//! TOML and echoed verbatim into each output file.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpp::SelectParams;
use crate::episode::RewardConfig;
use crate::geometry::GeometryParams;
use crate::grounding::GroundingParams;
use crate::{Error, Result};

/// BEV cell size: derived from the scene extent or fixed in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CellSizeRepr", into = "CellSizeRepr")]
pub enum CellSize {
    #[default]
    Auto,
    Meters(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CellSizeRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<CellSizeRepr> for CellSize {
    type Error = String;

    fn try_from(r: CellSizeRepr) -> std::result::Result<Self, String> {
        match r {
            CellSizeRepr::Number(v) => Ok(CellSize::Meters(v)),
            CellSizeRepr::Text(s) if s == "auto" => Ok(CellSize::Auto),
            CellSizeRepr::Text(s) => Err(format!("cell_size must be \"auto\" or a number, got {s:?}")),
        }
    }
}

impl From<CellSize> for CellSizeRepr {
    fn from(c: CellSize) -> Self {
        match c {
            CellSize::Auto => CellSizeRepr::Text("auto".into()),
            CellSize::Meters(v) => CellSizeRepr::Number(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sigma_t: f64,
    pub beta: f64,
    /// Temporal band half-width of the view graph.
    pub b: usize,
    pub tau: f64,
    /// Softmax temperature of score calibration.
    pub t: f64,
    pub alpha: f64,
    pub k: usize,

    pub sigma_p: f64,
    pub tau_s: f64,
    /// Reward threshold; follows `tau_s` when unset.
    pub theta_sim: Option<f64>,
    pub alpha_s: f64,
    pub lambda_tool: f64,
    pub lambda_spatial: f64,
    pub t_max: usize,

    pub ridge: f64,
    pub trunc_eps: f64,
    pub cell_size: CellSize,
    pub stride: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            sigma_t: 1.0,
            beta: 2.0,
            b: 24,
            tau: 2.0,
            t: 1.0,
            alpha: 0.5,
            k: 32,
            sigma_p: 1.0,
            tau_s: 0.5,
            theta_sim: None,
            alpha_s: 0.5,
            lambda_tool: 1.0,
            lambda_spatial: 1.0,
            t_max: 6,
            ridge: 1e-9,
            trunc_eps: 0.0,
            cell_size: CellSize::Auto,
            stride: 8,
        }
    }
}

fn check(ok: bool, what: impl fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::input(format!("config: {what}")))
    }
}

impl Config {
    /// Reads a config file; `.toml` files are parsed as TOML, anything else
    /// as JSON. Keys left out keep their defaults, unknown keys are errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    /// Fills derived defaults so the echoed config is fully explicit.
    pub fn resolved(mut self) -> Self {
        self.theta_sim.get_or_insert(self.tau_s);
        self
    }

    pub fn theta_sim(&self) -> f64 {
        self.theta_sim.unwrap_or(self.tau_s)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        check(pos(self.sigma_t), format_args!("sigma_t must be > 0, got {}", self.sigma_t))?;
        check(nonneg(self.beta), format_args!("beta must be >= 0, got {}", self.beta))?;
        check(self.b >= 1, "b must be >= 1")?;
        check(nonneg(self.tau), format_args!("tau must be >= 0, got {}", self.tau))?;
        check(pos(self.t), format_args!("t must be > 0, got {}", self.t))?;
        check((0.0..=1.0).contains(&self.alpha), format_args!("alpha must be in [0, 1], got {}", self.alpha))?;
        check(self.k >= 1, "k must be >= 1")?;
        check(pos(self.sigma_p), format_args!("sigma_p must be > 0, got {}", self.sigma_p))?;
        check(self.tau_s > 0.0 && self.tau_s <= 1.0, format_args!("tau_s must be in (0, 1], got {}", self.tau_s))?;
        let theta = self.theta_sim();
        check((0.0..=1.0).contains(&theta), format_args!("theta_sim must be in [0, 1], got {theta}"))?;
        check(pos(self.alpha_s), format_args!("alpha_s must be > 0, got {}", self.alpha_s))?;
        check(nonneg(self.lambda_tool), format_args!("lambda_tool must be >= 0, got {}", self.lambda_tool))?;
        check(nonneg(self.lambda_spatial), format_args!("lambda_spatial must be >= 0, got {}", self.lambda_spatial))?;
        check(self.t_max >= 1, "t_max must be >= 1")?;
        check(nonneg(self.ridge), format_args!("ridge must be >= 0, got {}", self.ridge))?;
        check(nonneg(self.trunc_eps), format_args!("trunc_eps must be >= 0, got {}", self.trunc_eps))?;
        if let CellSize::Meters(cs) = self.cell_size {
            check(pos(cs), format_args!("cell_size must be > 0, got {cs}"))?;
        }
        check(self.stride >= 1, "stride must be >= 1")
    }

    pub fn geometry(&self) -> GeometryParams {
        GeometryParams {
            sigma_t: self.sigma_t,
            beta: self.beta,
        }
    }

    pub fn select_params(&self) -> SelectParams {
        SelectParams {
            geometry: self.geometry(),
            bandwidth: self.b,
            tau: self.tau,
            trunc_eps: self.trunc_eps,
            temperature: self.t,
            alpha: self.alpha,
            k: self.k,
            ridge: self.ridge,
        }
    }

    pub fn grounding_params(&self) -> GroundingParams {
        GroundingParams {
            sigma_p: self.sigma_p,
            beta: self.beta,
            tau_s: self.tau_s,
            t_max: self.t_max,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda_tool: self.lambda_tool,
            lambda_spatial: self.lambda_spatial,
            alpha_s: self.alpha_s,
            theta_sim: self.theta_sim(),
        }
    }
}
