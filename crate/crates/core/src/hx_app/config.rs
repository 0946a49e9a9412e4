use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::AdvectionSign;
use crate::optimizer::OptimizerConfig;

/// Which ports serve as inlets and outlets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Configuration {
    Parallel,
    Counter,
    UFlow,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [
        Configuration::Parallel,
        Configuration::Counter,
        Configuration::UFlow,
    ];

    /// Port numbers of `(cold inlet, hot inlet, cold outlet, hot outlet)`.
    pub fn roles(self) -> [u8; 4] {
        match self {
            Configuration::Parallel => [1, 2, 4, 3],
            Configuration::Counter => [4, 2, 1, 3],
            Configuration::UFlow => [3, 2, 4, 1],
        }
    }
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Configuration::Parallel => "parallel",
            Configuration::Counter => "counter",
            Configuration::UFlow => "u-flow",
        })
    }
}

/// Everything needed to set up and optimize one heat exchanger. Field
/// names are the keys of the TOML configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub configuration: Configuration,
    pub re: f64,
    pub pe: f64,
    pub da: f64,
    pub p_drop: f64,
    pub beta_gls: f64,
    pub gamma: f64,
    pub c1: f64,
    /// Hamilton-Jacobi Peclet number; 50 times the cells along x if absent.
    pub pe_hj: Option<f64>,
    /// Cells of the design region per axis (2 or 3 entries).
    pub resolution: Vec<usize>,
    /// Size of the design region per axis.
    pub extent: Vec<f64>,
    pub v_max: f64,
    /// Port strip width as a fraction of the edge.
    pub port_width: f64,
    /// Centers of the lower and upper port strips as fractions of the height.
    pub port_centers: [f64; 2],
    /// Length of the fixed inlet/outlet channels outside the design region.
    pub buffer_length: f64,
    /// Initial design `sin(kπy)cos(kπx)[sin(kπz)] + offset`.
    pub initial_frequency: f64,
    pub initial_offset: f64,
    pub alpha_j: f64,
    pub alpha_c: f64,
    pub t_hat: f64,
    pub max_trials: usize,
    pub d_max: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub activity: f64,
    pub tighten_factor: f64,
    pub advection_sign: AdvectionSign,
    /// Write a VTK snapshot every this many iterations (0: only first and last).
    pub snapshot_every: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        ProblemConfig {
            configuration: Configuration::Parallel,
            re: 10.0,
            pe: 5e3,
            da: 1e-5,
            p_drop: 2.0,
            beta_gls: 0.9,
            gamma: 0.4,
            c1: 1e4,
            pe_hj: None,
            resolution: vec![64, 64],
            extent: vec![1.0, 1.0],
            v_max: 1.0,
            port_width: 0.2,
            port_centers: [0.25, 0.75],
            buffer_length: 0.03125,
            initial_frequency: 4.0,
            initial_offset: -0.2,
            alpha_j: opt.alpha_j,
            alpha_c: opt.alpha_c,
            t_hat: opt.t_hat,
            max_trials: opt.max_trials,
            d_max: opt.d_max,
            max_iter: opt.max_iter,
            tol: opt.tol,
            activity: opt.activity,
            tighten_factor: opt.tighten_factor,
            advection_sign: AdvectionSign::default(),
            snapshot_every: 10,
        }
    }
}

impl ProblemConfig {
    /// Defaults with the lower Peclet number that coarse desk meshes resolve.
    pub fn desk(configuration: Configuration) -> Self {
        ProblemConfig {
            configuration,
            pe: 1e3,
            ..ProblemConfig::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            alpha_j: self.alpha_j,
            alpha_c: self.alpha_c,
            t_hat: self.t_hat,
            max_trials: self.max_trials,
            d_max: self.d_max,
            max_iter: self.max_iter,
            tol: self.tol,
            p_drop: self.p_drop,
            activity: self.activity,
            tighten_factor: self.tighten_factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("re", self.re),
            ("pe", self.pe),
            ("p_drop", self.p_drop),
            ("gamma", self.gamma),
            ("port_width", self.port_width),
            ("buffer_length", self.buffer_length),
            ("t_hat", self.t_hat),
            ("d_max", self.d_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((key, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.da > 0.0 && self.da < 1.0) {
            return Err(("da", format!("must lie in (0, 1), got {}", self.da)));
        }
        if !(self.beta_gls > 0.0 && self.beta_gls <= 2.0) {
            return Err((
                "beta_gls",
                format!("must lie in (0, 2], got {}", self.beta_gls),
            ));
        }
        if !(self.c1 >= 0.0) {
            return Err(("c1", format!("must be non-negative, got {}", self.c1)));
        }
        if let Some(p) = self.pe_hj {
            if !(p > 0.0) {
                return Err(("pe_hj", format!("must be positive, got {p}")));
            }
        }
        if !(2..=3).contains(&self.resolution.len()) || self.resolution.iter().any(|&n| n < 2) {
            return Err((
                "resolution",
                "needs 2 or 3 entries of at least 2 cells".into(),
            ));
        }
        if self.extent.len() != self.resolution.len() || self.extent.iter().any(|&e| !(e > 0.0)) {
            return Err((
                "extent",
                "needs one positive length per resolution entry".into(),
            ));
        }
        if !self.v_max.is_finite() {
            return Err(("v_max", "must be finite".into()));
        }
        let [lo, hi] = self.port_centers;
        let w = self.port_width;
        if !(lo - w / 2.0 >= 0.0 && hi + w / 2.0 <= 1.0 && lo < hi) {
            return Err((
                "port_centers",
                format!("strips of width {w} at {lo}, {hi} leave the edge"),
            ));
        }
        if hi - lo < w {
            return Err((
                "port_centers",
                format!("port strips at {lo} and {hi} of width {w} overlap"),
            ));
        }
        if self.max_trials < 1 {
            return Err(("max_trials", "must be at least 1".into()));
        }
        if !(self.alpha_j >= 0.0) || !(self.alpha_c >= 0.0) {
            return Err(("alpha_j", "flow weights must be non-negative".into()));
        }
        if !(self.activity >= 0.0) {
            return Err(("activity", "must be non-negative".into()));
        }
        if !(self.tighten_factor >= 1.0) {
            return Err(("tighten_factor", "must be at least 1".into()));
        }
        if self.tol.is_nan() {
            return Err(("tol", "must be a number".into()));
        }
        if !self.initial_frequency.is_finite() || !self.initial_offset.is_finite() {
            return Err((
                "initial_frequency",
                "initial design parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Parses and validates TOML text; `path` only labels errors.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let config: ProblemConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::Config {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate().map_err(|(key, message)| Error::Config {
            path: path.to_path_buf(),
            line: key_line(text, key),
            message: format!("{key}: {message}"),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line assigning `key`, or 0 when the value came from the defaults.
fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}
