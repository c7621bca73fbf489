//! Tool reliability: partial response rate, latency-quality correlation and
//! silent-degradation detection over windows of recorded tool calls.

use std::collections::BTreeMap;

use crate::config::EvalConfig;
use crate::error::{EvalError, Result};
use crate::model::{clamp_unit, ToolCallRecord, ToolCallState};
use crate::numerics::{mean, nearest_rank_percentile, pearson};

const LATENCY_PERCENTILE: f64 = 0.95;

/// Fraction of calls in the PARTIAL state. FAILED calls count in the
/// denominator only.
pub fn partial_response_rate(calls: &[ToolCallRecord]) -> Result<f64> {
    if calls.is_empty() {
        return Err(EvalError::undefined(
            "partial response rate of an empty call set",
        ));
    }
    let partial = calls
        .iter()
        .filter(|c| c.state == ToolCallState::Partial)
        .count();
    Ok(partial as f64 / calls.len() as f64)
}

pub fn call_counts(calls: &[ToolCallRecord]) -> BTreeMap<ToolCallState, usize> {
    let mut counts = BTreeMap::from([
        (ToolCallState::Success, 0),
        (ToolCallState::Partial, 0),
        (ToolCallState::Failed, 0),
    ]);
    for c in calls {
        *counts.entry(c.state).or_default() += 1;
    }
    counts
}

/// Calls falling into one equal-width tick bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyBucket {
    pub first_tick: u64,
    pub calls: usize,
    pub p95_latency_ms: f64,
    /// Mean `quality_signal` of the bucket's calls, if any carried one.
    pub quality: Option<f64>,
}

/// Split `calls` into `n_buckets` equal-width buckets over their tick span.
/// Empty buckets are dropped; the rest are returned in tick order.
pub fn bucket_calls(calls: &[ToolCallRecord], n_buckets: usize) -> Vec<LatencyBucket> {
    if calls.is_empty() || n_buckets == 0 {
        return Vec::new();
    }
    let lo = calls.iter().map(|c| c.timestamp).min().unwrap_or(0);
    let hi = calls.iter().map(|c| c.timestamp).max().unwrap_or(0);
    let span = u128::from(hi - lo) + 1;

    let mut grouped: Vec<Vec<&ToolCallRecord>> = vec![Vec::new(); n_buckets];
    for c in calls {
        let idx = (u128::from(c.timestamp - lo) * n_buckets as u128 / span) as usize;
        grouped[idx.min(n_buckets - 1)].push(c);
    }

    grouped
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let latencies: Vec<f64> = g.iter().map(|c| c.latency_ms).collect();
            let qualities: Vec<f64> = g.iter().filter_map(|c| c.quality_signal).collect();
            LatencyBucket {
                first_tick: g.iter().map(|c| c.timestamp).min().unwrap_or(lo),
                calls: g.len(),
                p95_latency_ms: nearest_rank_percentile(&latencies, LATENCY_PERCENTILE)
                    .expect("bucket is non-empty"),
                quality: mean(&qualities),
            }
        })
        .collect()
}

/// Pearson correlation between per-bucket p95 latency and quality
/// degradation `baseline_quality - quality`.
pub fn latency_quality_correlation(
    p95_latency: &[f64],
    quality: &[f64],
    baseline_quality: f64,
) -> Result<f64> {
    if p95_latency.len() != quality.len() {
        return Err(EvalError::undefined(
            "latency and quality series differ in length",
        ));
    }
    if p95_latency.len() < 3 {
        return Err(EvalError::undefined(format!(
            "latency-quality correlation needs at least 3 buckets, got {}",
            p95_latency.len()
        )));
    }
    let degradation: Vec<f64> = quality.iter().map(|q| baseline_quality - q).collect();
    pearson(p95_latency, &degradation)
}

/// `1 - prr * (1 + max(rho, 0))`, clamped into [0, 1].
pub fn tool_reliability_score(prr: f64, rho_lq: f64) -> Result<f64> {
    if !(prr.is_finite() && (0.0..=1.0).contains(&prr)) {
        return Err(EvalError::invalid(
            "prr",
            format!("{prr} is outside [0, 1]"),
        ));
    }
    if !(rho_lq.is_finite() && (-1.0..=1.0).contains(&rho_lq)) {
        return Err(EvalError::invalid(
            "rho_lq",
            format!("{rho_lq} is outside [-1, 1]"),
        ));
    }
    Ok(clamp_unit(1.0 - prr * (1.0 + rho_lq.max(0.0))))
}

/// Rising partial rate while the external accuracy signal stays inside its
/// stability band.
pub fn detect_silent_degradation(
    prr: f64,
    external_accuracy_delta: f64,
    config: &EvalConfig,
) -> bool {
    // tolerance keeps decimal deltas such as 0.86 - 0.84 on the inclusive side of the band
    prr > config.theta_prr && external_accuracy_delta.abs() <= config.acc_stability_band + 1e-9
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityResult {
    pub prr: f64,
    /// Latency-quality correlation; 0 when it could not be computed.
    pub rho_lq: f64,
    /// False when fewer than 3 usable buckets were available.
    pub rho_defined: bool,
    pub bucket_count: usize,
    pub score: f64,
    pub silent_degradation: bool,
    pub call_counts: BTreeMap<ToolCallState, usize>,
    /// Mean quality signal across the window's calls.
    pub accuracy: Option<f64>,
    /// Accuracy change against the reference window (0 when there is none).
    pub accuracy_delta: f64,
}

/// Score one window of calls. `reference_accuracy` is the accuracy of the
/// window it is compared against for silent-degradation detection.
pub fn evaluate_tool_window(
    calls: &[ToolCallRecord],
    reference_accuracy: Option<f64>,
    config: &EvalConfig,
) -> Result<ReliabilityResult> {
    for c in calls {
        c.validate()?;
    }
    let prr = partial_response_rate(calls)?;

    let buckets = bucket_calls(calls, config.latency_buckets);
    let usable: Vec<&LatencyBucket> = buckets.iter().filter(|b| b.quality.is_some()).collect();
    let p95: Vec<f64> = usable.iter().map(|b| b.p95_latency_ms).collect();
    let quality: Vec<f64> = usable.iter().filter_map(|b| b.quality).collect();
    let baseline = quality.first().copied().unwrap_or(0.0);
    let (rho_lq, rho_defined) = match latency_quality_correlation(&p95, &quality, baseline) {
        Ok(r) => (r, true),
        Err(_) => (0.0, false),
    };

    let qualities: Vec<f64> = calls.iter().filter_map(|c| c.quality_signal).collect();
    let accuracy = mean(&qualities);
    let accuracy_delta = match (accuracy, reference_accuracy) {
        (Some(a), Some(r)) => a - r,
        _ => 0.0,
    };

    Ok(ReliabilityResult {
        prr,
        rho_lq,
        rho_defined,
        bucket_count: usable.len(),
        score: tool_reliability_score(prr, rho_lq)?,
        silent_degradation: detect_silent_degradation(prr, accuracy_delta, config),
        call_counts: call_counts(calls),
        accuracy,
        accuracy_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(state: ToolCallState, latency: f64, tick: u64, q: Option<f64>) -> ToolCallRecord {
        ToolCallRecord {
            tool_name: "profile".into(),
            state,
            latency_ms: latency,
            timestamp: tick,
            quality_signal: q,
        }
    }

    fn calls_with_partials(total: usize, partial: usize) -> Vec<ToolCallRecord> {
        (0..total)
            .map(|i| {
                let s = if i < partial {
                    ToolCallState::Partial
                } else {
                    ToolCallState::Success
                };
                call(s, 100.0, i as u64, None)
            })
            .collect()
    }

    #[test]
    fn prr_examples() {
        assert!(
            (partial_response_rate(&calls_with_partials(50, 11)).unwrap() - 0.22).abs() < 1e-12
        );
        assert!(
            (partial_response_rate(&calls_with_partials(50, 29)).unwrap() - 0.58).abs() < 1e-12
        );
        assert_eq!(
            partial_response_rate(&calls_with_partials(17, 0)).unwrap(),
            0.0
        );
        assert!(partial_response_rate(&[]).is_err());
    }

    #[test]
    fn failed_calls_only_in_denominator() {
        let mut c = calls_with_partials(4, 1);
        c[3].state = ToolCallState::Failed;
        assert_eq!(partial_response_rate(&c).unwrap(), 0.25);
        assert_eq!(call_counts(&c)[&ToolCallState::Failed], 1);
    }

    #[test]
    fn constant_latency_gives_zero_correlation() {
        let r = latency_quality_correlation(&[100.0; 5], &[0.9, 0.8, 0.85, 0.7, 0.9], 0.9).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rising_latency_falling_quality_is_one() {
        let r = latency_quality_correlation(&[10.0, 20.0, 30.0, 40.0], &[0.9, 0.8, 0.7, 0.6], 0.9)
            .unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_buckets() {
        assert!(latency_quality_correlation(&[1.0, 2.0], &[0.5, 0.4], 0.5).is_err());
    }

    #[test]
    fn score_examples() {
        assert_eq!(tool_reliability_score(0.0, 0.9).unwrap(), 1.0);
        assert!((tool_reliability_score(0.2, 0.5).unwrap() - 0.70).abs() < 1e-12);
        assert!((tool_reliability_score(0.1, -0.3).unwrap() - 0.90).abs() < 1e-12);
        assert_eq!(tool_reliability_score(0.9, 0.9).unwrap(), 0.0);
        assert!(tool_reliability_score(1.2, 0.0).is_err());
    }

    #[test]
    fn silent_degradation_examples() {
        let cfg = EvalConfig::default();
        assert!(!detect_silent_degradation(0.040, 0.00, &cfg));
        assert!(detect_silent_degradation(0.220, -0.01, &cfg));
        assert!(!detect_silent_degradation(0.580, -0.03, &cfg));
        let wide = EvalConfig {
            acc_stability_band: 0.03,
            ..cfg
        };
        assert!(detect_silent_degradation(0.580, -0.03, &wide));
    }

    #[test]
    fn buckets_split_ticks_evenly() {
        let calls: Vec<_> = (0..50)
            .map(|i| call(ToolCallState::Success, i as f64, 100 + i, Some(0.9)))
            .collect();
        let b = bucket_calls(&calls, 10);
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|b| b.calls == 5));
        assert_eq!(b[0].p95_latency_ms, 4.0);
        assert_eq!(b[9].first_tick, 145);
    }

    #[test]
    fn window_without_quality_has_undefined_rho() {
        let r = evaluate_tool_window(&calls_with_partials(20, 2), None, &EvalConfig::default())
            .unwrap();
        assert!(!r.rho_defined);
        assert_eq!(r.rho_lq, 0.0);
        assert!((r.score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn window_scores_with_correlated_latency() {
        let calls: Vec<_> = (0..30u64)
            .map(|i| {
                let b = i / 3;
                let state = if i % 10 == 0 {
                    ToolCallState::Partial
                } else {
                    ToolCallState::Success
                };
                call(
                    state,
                    50.0 + 10.0 * b as f64,
                    i,
                    Some(0.9 - 0.01 * b as f64),
                )
            })
            .collect();
        let r = evaluate_tool_window(&calls, Some(0.9), &EvalConfig::default()).unwrap();
        assert!((r.prr - 0.1).abs() < 1e-12);
        assert!((r.rho_lq - 1.0).abs() < 1e-9);
        assert!((r.score - 0.8).abs() < 1e-9);
        assert_eq!(r.bucket_count, 10);
    }
}
