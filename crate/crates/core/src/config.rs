//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! unparsable values are errors. Every key is optional:
//!
//! | key                    | default        |
//! |------------------------|----------------|
//! | `kernel`               | `epanechnikov` |
//! | `metric`               | `cosine`       |
//! | `edge_threshold`       | `0`            |
//! | `mean_center`          | `false`        |
//! | `min_co_rated`         | `1`            |
//! | `sim_floor`            | `1e-6`         |
//! | `k_r`                  | `10`           |
//! | `iterations`           | `1000`         |
//! | `initial_step`         | `0.1`          |
//! | `tolerance`            | `1e-4`         |
//! | `seed`                 | `0`            |
//! | `grid_resolution`      | `50`           |
//! | `coverage`             | `0.9`          |
//! | `surface_degree`       | `4`            |
//! | `weighting`            | `kernel`       |
//! | `item_mean_fallback`   | `true`         |
//! | `global_mean_fallback` | `true`         |
//! | `holdout`              | `0.2`          |

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bandwidth::PlugInConfig;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::layout::LayoutConfig;
use crate::pipeline::{FallbackPolicy, NeighborWeighting};
use crate::similarity::{GraphMode, SimilarityConfig, SimilarityMetric};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kernel: Kernel,
    pub metric: SimilarityMetric,
    pub edge_threshold: f64,
    pub mean_center: bool,
    pub min_co_rated: usize,
    pub layout: LayoutConfig,
    pub plug_in: PlugInConfig,
    pub weighting: NeighborWeighting,
    pub fallback: FallbackPolicy,
    pub holdout: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            metric: SimilarityMetric::Cosine,
            edge_threshold: 0.0,
            mean_center: false,
            min_co_rated: 1,
            layout: LayoutConfig::default(),
            plug_in: PlugInConfig::default(),
            weighting: NeighborWeighting::default(),
            fallback: FallbackPolicy::default(),
            holdout: 0.2,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| e.to_string())
}

impl Config {
    pub fn similarity(&self, mode: GraphMode) -> SimilarityConfig {
        SimilarityConfig {
            mode,
            metric: self.metric,
            edge_threshold: self.edge_threshold,
            mean_center: self.mean_center,
            min_co_rated: self.min_co_rated,
        }
    }

    /// Sets one key; the error is a message without position.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "kernel" => self.kernel = parse(value)?,
            "metric" => self.metric = parse(value)?,
            "edge_threshold" => self.edge_threshold = parse(value)?,
            "mean_center" => self.mean_center = parse(value)?,
            "min_co_rated" => self.min_co_rated = parse(value)?,
            "sim_floor" => self.layout.sim_floor = parse(value)?,
            "k_r" => self.layout.k_r = parse(value)?,
            "iterations" => self.layout.max_iterations = parse(value)?,
            "initial_step" => self.layout.initial_step = parse(value)?,
            "tolerance" => self.layout.convergence_tolerance = parse(value)?,
            "seed" => self.layout.seed = parse(value)?,
            "grid_resolution" => self.plug_in.grid_resolution = parse(value)?,
            "coverage" => self.plug_in.coverage = parse(value)?,
            "surface_degree" => self.plug_in.surface_degree = parse(value)?,
            "weighting" => self.weighting = parse(value)?,
            "item_mean_fallback" => self.fallback.item_mean = parse(value)?,
            "global_mean_fallback" => self.fallback.global_mean = parse(value)?,
            "holdout" => self.holdout = parse(value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let config_error = |message: String| Error::Config { line: n + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("expected key = value, got '{line}'")))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|m| config_error(format!("{}: {m}", key.trim())))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let bad = |what: &str| Err(Error::Argument(what.to_owned()));
        if !(self.plug_in.coverage > 0.0 && self.plug_in.coverage <= 1.0) {
            return bad("coverage must lie in (0, 1]");
        }
        if self.plug_in.grid_resolution == 0 {
            return bad("grid_resolution must be at least 1");
        }
        if self.plug_in.surface_degree < 2 {
            return bad("surface_degree must be at least 2");
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad("holdout must lie in (0, 1)");
        }
        if !self.edge_threshold.is_finite() {
            return bad("edge_threshold must be finite");
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`Config::parse`].
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("kernel", &self.kernel);
        kv("metric", &self.metric);
        kv("edge_threshold", &self.edge_threshold);
        kv("mean_center", &self.mean_center);
        kv("min_co_rated", &self.min_co_rated);
        kv("sim_floor", &self.layout.sim_floor);
        kv("k_r", &self.layout.k_r);
        kv("iterations", &self.layout.max_iterations);
        kv("initial_step", &self.layout.initial_step);
        kv("tolerance", &self.layout.convergence_tolerance);
        kv("seed", &self.layout.seed);
        kv("grid_resolution", &self.plug_in.grid_resolution);
        kv("coverage", &self.plug_in.coverage);
        kv("surface_degree", &self.plug_in.surface_degree);
        kv("weighting", &self.weighting);
        kv("item_mean_fallback", &self.fallback.item_mean);
        kv("global_mean_fallback", &self.fallback.global_mean);
        kv("holdout", &self.holdout);
        s
    }
}
