//! Cascade uncertainty: detects a low-confidence non-terminal step whose
//! output is consumed downstream, and measures how confident the rest of the
//! pipeline remained (the coherence illusion score).

use crate::config::EvalConfig;
use crate::error::{EvalError, Result};
use crate::model::{clamp_unit, StepResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub mean_confidence: f64,
    /// Mean confidence of the steps after the first failure; 0 without a failure.
    pub cis: f64,
    /// `mean_confidence - lambda * cis`, unclamped.
    pub raw_score: f64,
    /// `raw_score` clamped into [0, 1].
    pub score: f64,
    pub propagation_failure: bool,
    /// 1-based position of the first failing non-terminal step.
    pub failure_index: Option<usize>,
    pub step_confidences: Vec<f64>,
}

impl CascadeResult {
    /// Gap between the pipeline's mean confidence and an external
    /// correctness label.
    pub fn divergence(&self, ground_truth: f64) -> f64 {
        self.mean_confidence - ground_truth
    }
}

pub fn evaluate_cascade(steps: &[StepResult], config: &EvalConfig) -> Result<CascadeResult> {
    if steps.len() < 2 {
        return Err(EvalError::InsufficientTrace(format!(
            "cascade evaluation needs at least 2 steps, got {}",
            steps.len()
        )));
    }
    for s in steps {
        s.validate()?;
    }
    if steps.windows(2).any(|w| w[1].step_index <= w[0].step_index) {
        return Err(EvalError::invalid(
            "step_index",
            "must be strictly increasing within a pipeline",
        ));
    }

    let confidences: Vec<f64> = steps.iter().map(|s| s.confidence).collect();
    let n = confidences.len();
    let mean_confidence = confidences.iter().sum::<f64>() / n as f64;

    // terminal step excluded: its output is not passed downstream
    let failure = confidences[..n - 1].iter().position(|&c| c < config.tau_u);

    let cis = match failure {
        Some(i) => {
            let downstream = &confidences[i + 1..];
            downstream.iter().sum::<f64>() / downstream.len() as f64
        }
        None => 0.0,
    };
    let raw_score = mean_confidence - config.lambda * cis;

    Ok(CascadeResult {
        mean_confidence,
        cis,
        raw_score,
        score: clamp_unit(raw_score),
        propagation_failure: failure.is_some(),
        failure_index: failure.map(|i| i + 1),
        step_confidences: confidences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(conf: &[f64]) -> Vec<StepResult> {
        conf.iter()
            .enumerate()
            .map(|(i, &c)| StepResult::new(i as u32 + 1, format!("s{}", i + 1), c))
            .collect()
    }

    fn eval(conf: &[f64]) -> CascadeResult {
        evaluate_cascade(&steps(conf), &EvalConfig::default()).unwrap()
    }

    #[test]
    fn healthy_pipeline() {
        let r = eval(&[0.90, 0.91, 0.89, 0.92, 0.91]);
        assert!((r.mean_confidence - 0.906).abs() < 1e-12);
        assert!(!r.propagation_failure);
        assert_eq!(r.cis, 0.0);
        assert_eq!(r.score, r.mean_confidence);
    }

    #[test]
    fn low_first_step() {
        let r = eval(&[0.31, 0.87, 0.88, 0.90, 0.85]);
        assert!((r.mean_confidence - 0.762).abs() < 1e-12);
        assert_eq!(r.failure_index, Some(1));
        assert!((r.cis - 0.875).abs() < 1e-12);
        assert!((r.score - 0.3245).abs() < 1e-12);
    }

    #[test]
    fn low_second_step() {
        let r = eval(&[0.88, 0.28, 0.86, 0.91, 0.89]);
        assert!((r.mean_confidence - 0.764).abs() < 1e-12);
        assert_eq!(r.failure_index, Some(2));
        assert!((r.cis - (0.86 + 0.91 + 0.89) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn terminal_step_never_fails() {
        let r = eval(&[0.9, 0.9, 0.9, 0.1]);
        assert!(!r.propagation_failure);
        assert_eq!(r.failure_index, None);
    }

    #[test]
    fn multi_failure_uses_first() {
        let r = eval(&[0.30, 0.88, 0.29, 0.90, 0.88]);
        assert_eq!(r.failure_index, Some(1));
        assert!((r.mean_confidence - 0.65).abs() < 1e-12);
        assert!((r.cis - 0.7375).abs() < 1e-12);
    }

    #[test]
    fn too_few_steps() {
        let err = evaluate_cascade(&steps(&[0.4]), &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientTrace(_)));
    }

    #[test]
    fn out_of_range_confidence() {
        let mut s = steps(&[0.5, 0.5]);
        s[1].confidence = 1.2;
        assert!(matches!(
            evaluate_cascade(&s, &EvalConfig::default()),
            Err(EvalError::Validation { .. })
        ));
    }

    #[test]
    fn non_increasing_indices_rejected() {
        let mut s = steps(&[0.5, 0.5, 0.5]);
        s[2].step_index = 2;
        assert!(evaluate_cascade(&s, &EvalConfig::default()).is_err());
    }

    #[test]
    fn divergence_against_ground_truth() {
        let r = eval(&[0.31, 0.87, 0.88, 0.90, 0.85]);
        assert!((r.divergence(0.41) - 0.352).abs() < 1e-12);
    }
}
