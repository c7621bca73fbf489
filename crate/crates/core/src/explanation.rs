//! Explanation validity: checks claimed feature attributions against the
//! prediction change measured when each attributed feature is nullified.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::error::{EvalError, Result};
use crate::model::AttributionCase;
use crate::numerics::spearman;

/// A deterministic decision function over named features, returning a value in [0, 1].
pub trait ModelProbe {
    fn predict(&self, features: &BTreeMap<String, f64>) -> std::result::Result<f64, String>;
}

/// `intercept + sum(weight * value)` over the weighted features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearProbe {
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub intercept: f64,
}

impl LinearProbe {
    pub fn new<I, S>(weights: I, intercept: f64) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            weights: weights.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            intercept,
        }
    }
}

impl ModelProbe for LinearProbe {
    fn predict(&self, features: &BTreeMap<String, f64>) -> std::result::Result<f64, String> {
        let mut y = self.intercept;
        for (name, w) in &self.weights {
            let x = features
                .get(name)
                .ok_or_else(|| format!("input is missing feature `{name}`"))?;
            y += w * x;
        }
        if !(y.is_finite() && (-1e-12..=1.0 + 1e-12).contains(&y)) {
            return Err(format!("prediction {y} is outside [0, 1]"));
        }
        Ok(y.clamp(0.0, 1.0))
    }
}

/// Absolute prediction change when each attributed feature, one at a time,
/// is replaced by its baseline value. Order follows `case.feature_names`.
pub fn perturbation_impacts(
    probe: &dyn ModelProbe,
    case: &AttributionCase,
    inputs: &BTreeMap<String, f64>,
    baseline_values: &BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    let probe_err = |feature: &str, message: String| EvalError::Probe {
        feature: feature.to_string(),
        message,
    };
    let mut working = inputs.clone();
    let original = probe
        .predict(&working)
        .map_err(|m| probe_err("<unperturbed>", m))?;

    let mut impacts = Vec::with_capacity(case.feature_names.len());
    for name in &case.feature_names {
        let null = *baseline_values
            .get(name)
            .ok_or_else(|| probe_err(name, "no baseline value".into()))?;
        let saved = working
            .insert(name.clone(), null)
            .ok_or_else(|| probe_err(name, "feature absent from input".into()))?;
        let perturbed = probe.predict(&working).map_err(|m| probe_err(name, m));
        working.insert(name.clone(), saved);
        impacts.push((original - perturbed?).abs());
    }
    Ok(impacts)
}

/// `(spearman(claimed, impacts) + 1) / 2`.
pub fn attribution_consistency(claimed: &[f64], impacts: &[f64]) -> Result<f64> {
    if claimed.len() != impacts.len() {
        return Err(EvalError::invalid(
            "impacts",
            format!(
                "{} impacts for {} claimed weights",
                impacts.len(),
                claimed.len()
            ),
        ));
    }
    if claimed.len() < 2 {
        return Err(EvalError::invalid(
            "claimed_weights",
            "need at least 2 features",
        ));
    }
    Ok(((spearman(claimed, impacts)? + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Low rank agreement AND a negligible impact for the top-ranked feature.
pub fn decoupling_flag(acs: f64, top_impact: f64, config: &EvalConfig) -> bool {
    acs < config.theta_acs && top_impact < config.delta_min
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationResult {
    pub acs: f64,
    pub impacts: Vec<f64>,
    pub top_feature: String,
    pub top_impact: f64,
    pub decoupled: bool,
}

/// Score a case whose impacts are already known.
pub fn evaluate_with_impacts(
    case: &AttributionCase,
    impacts: Vec<f64>,
    config: &EvalConfig,
) -> Result<ExplanationResult> {
    case.validate()?;
    let acs = attribution_consistency(&case.claimed_weights, &impacts)?;
    let top_impact = impacts[0];
    Ok(ExplanationResult {
        acs,
        top_feature: case.feature_names[0].clone(),
        top_impact,
        decoupled: decoupling_flag(acs, top_impact, config),
        impacts,
    })
}

/// Measure impacts with `probe` and score the case.
pub fn evaluate_explanation(
    probe: &dyn ModelProbe,
    case: &AttributionCase,
    inputs: &BTreeMap<String, f64>,
    baseline_values: &BTreeMap<String, f64>,
    config: &EvalConfig,
) -> Result<ExplanationResult> {
    case.validate()?;
    let impacts = perturbation_impacts(probe, case, inputs, baseline_values)?;
    evaluate_with_impacts(case, impacts, config)
}
