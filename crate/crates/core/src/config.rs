//! Thresholds and weights for every evaluation dimension.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::model::Dimension;

/// Reference point for the accuracy delta used by silent-degradation detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyDeltaMode {
    /// Compare each tool window with the window immediately before it.
    #[default]
    Prior,
    /// Compare each tool window with the first window of the stream.
    Baseline,
}

pub const DEFAULT_PASS_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Uncertainty propagation threshold for pipeline steps.
    pub tau_u: f64,
    /// Coherence-illusion penalty weight.
    pub lambda: f64,
    /// Entropy weight in the distribution score.
    pub alpha: f64,
    /// Diversity weight in the distribution score.
    pub beta: f64,
    /// Repeat-rate weight in the distribution score.
    pub gamma: f64,
    /// Number of most recent outputs scanned for the repeat rate.
    pub k_top: usize,
    /// Sliding window capacity for output events.
    pub window_size: usize,
    pub theta_acs: f64,
    pub delta_min: f64,
    pub theta_ar: f64,
    pub theta_prr: f64,
    pub acc_stability_band: f64,
    pub pass_thresholds: BTreeMap<Dimension, f64>,
    pub aggregate_weights: BTreeMap<Dimension, f64>,
    /// Tool calls per reliability window.
    pub tool_window_size: usize,
    /// Equal-width tick buckets per tool window for latency-quality correlation.
    pub latency_buckets: usize,
    pub accuracy_delta_mode: AccuracyDeltaMode,
    /// Pair count at which consistency confidence saturates.
    pub expected_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau_u: 0.5,
            lambda: 0.5,
            alpha: 0.5,
            beta: 0.25,
            gamma: 0.25,
            k_top: 20,
            window_size: 100,
            theta_acs: 0.5,
            delta_min: 0.05,
            theta_ar: 0.9,
            theta_prr: 0.20,
            acc_stability_band: 0.02,
            pass_thresholds: Dimension::ALL
                .iter()
                .map(|d| (*d, DEFAULT_PASS_THRESHOLD))
                .collect(),
            aggregate_weights: Dimension::ALL.iter().map(|d| (*d, 1.0)).collect(),
            tool_window_size: 50,
            latency_buckets: 10,
            accuracy_delta_mode: AccuracyDeltaMode::Prior,
            expected_pairs: 10,
        }
    }
}

impl EvalConfig {
    /// Parse a JSON config document; absent keys take their defaults and an
    /// empty document yields the default config.
    pub fn from_json_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let cfg: EvalConfig =
            serde_json::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn threshold(&self, dimension: Dimension) -> f64 {
        self.pass_thresholds
            .get(&dimension)
            .copied()
            .unwrap_or(DEFAULT_PASS_THRESHOLD)
    }

    pub fn weight(&self, dimension: Dimension) -> f64 {
        self.aggregate_weights
            .get(&dimension)
            .copied()
            .unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("tau_u", self.tau_u),
            ("theta_acs", self.theta_acs),
            ("delta_min", self.delta_min),
            ("theta_ar", self.theta_ar),
            ("theta_prr", self.theta_prr),
            ("acc_stability_band", self.acc_stability_band),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, v) in unit {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(EvalError::Config(format!(
                    "{name} = {v} must lie in [0, 1]"
                )));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EvalError::Config(format!(
                "lambda = {} must be >= 0",
                self.lambda
            )));
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::Config(format!(
                "alpha + beta + gamma must equal 1 (got {sum})"
            )));
        }
        for (d, t) in &self.pass_thresholds {
            if !(t.is_finite() && (0.0..=1.0).contains(t)) {
                return Err(EvalError::Config(format!(
                    "pass threshold for {d} = {t} must lie in [0, 1]"
                )));
            }
        }
        for (d, w) in &self.aggregate_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(EvalError::Config(format!(
                    "aggregate weight for {d} = {w} must be >= 0"
                )));
            }
        }
        for (name, v) in [
            ("k_top", self.k_top),
            ("window_size", self.window_size),
            ("tool_window_size", self.tool_window_size),
            ("expected_pairs", self.expected_pairs),
        ] {
            if v == 0 {
                return Err(EvalError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.latency_buckets < 3 {
            return Err(EvalError::Config("latency_buckets must be >= 3".into()));
        }
        Ok(())
    }
}
