//! Routes trace records to the applicable dimensions, evaluates them and
//! folds the results into an [`EvalReport`] with a gate verdict.
//!
//! Windowed dimensions report one entry per evaluation unit (pipeline, tool
//! window, output window, attribution case) under a plural metadata key; the
//! dimension score is the worst unit's score, and the top-level metadata keys
//! describe that unit.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Value};

use crate::cascade::evaluate_cascade;
use crate::config::{AccuracyDeltaMode, EvalConfig};
use crate::consistency::{consistency_score, EmbeddingProvider};
use crate::distribution::{DistributionSnapshot, DistributionWindow};
use crate::error::{EvalError, Result};
use crate::explanation::{evaluate_with_impacts, perturbation_impacts, ModelProbe};
use crate::model::{
    parse_trace_record, AttributionCase, Diagnostic, Dimension, EvalReport, MetricResult,
    OutputEvent, RequestPair, StepResult, ToolCallRecord, TraceRecord,
};
use crate::reliability::{evaluate_tool_window, ReliabilityResult};

/// Parsed records with their 1-based line numbers, plus per-line parse errors.
#[derive(Debug, Clone, Default)]
pub struct ParsedTrace {
    pub records: Vec<(usize, TraceRecord)>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn parse_trace(text: &str) -> ParsedTrace {
    let mut parsed = ParsedTrace::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_trace_record(line, i + 1) {
            Ok(r) => parsed.records.push((i + 1, r)),
            Err(e) => parsed.diagnostics.push(Diagnostic {
                line: Some(i + 1),
                message: e.to_string(),
            }),
        }
    }
    parsed
}

/// Parse and evaluate a line-delimited trace.
pub fn evaluate(
    text: &str,
    config: &EvalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<EvalReport> {
    let parsed = parse_trace(text);
    if parsed.records.is_empty() {
        return Err(match parsed.diagnostics.first() {
            Some(d) => EvalError::Unparseable(d.message.clone()),
            None => EvalError::NoEvaluableRecords,
        });
    }
    evaluate_parsed(parsed, config, provider)
}

#[derive(Default)]
struct Routed<'a> {
    pipelines: Vec<(usize, Vec<StepResult>)>,
    calls: Vec<&'a ToolCallRecord>,
    outputs: Vec<&'a OutputEvent>,
    cases: Vec<(usize, &'a AttributionCase)>,
    pairs: Vec<&'a RequestPair>,
}

fn route(records: &[(usize, TraceRecord)]) -> Routed<'_> {
    let mut routed = Routed::default();
    for (line, record) in records {
        match record {
            TraceRecord::Step(s) => {
                let starts_new = match routed.pipelines.last() {
                    Some((_, steps)) => steps.last().is_some_and(|p| s.step_index <= p.step_index),
                    None => true,
                };
                if starts_new {
                    routed.pipelines.push((*line, Vec::new()));
                }
                routed
                    .pipelines
                    .last_mut()
                    .expect("pushed above")
                    .1
                    .push(s.clone());
            }
            TraceRecord::ToolCall(c) => routed.calls.push(c),
            TraceRecord::Output(o) => routed.outputs.push(o),
            TraceRecord::Attribution(a) => routed.cases.push((*line, a)),
            TraceRecord::RequestPair(p) => routed.pairs.push(p),
        }
    }
    routed
}

type DimensionOutcome = (Option<MetricResult>, Vec<Diagnostic>);

pub fn evaluate_parsed(
    parsed: ParsedTrace,
    config: &EvalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<EvalReport> {
    config.validate()?;
    let started = Instant::now();
    let routed = route(&parsed.records);

    let outcomes: Vec<DimensionOutcome> = std::thread::scope(|scope| {
        let jobs: Vec<Box<dyn FnOnce() -> DimensionOutcome + Send + '_>> = vec![
            Box::new(|| timed(|| cascade_dimension(&routed.pipelines, config))),
            Box::new(|| timed(|| tool_dimension(&routed.calls, config))),
            Box::new(|| timed(|| distribution_dimension(&routed.outputs, config))),
            Box::new(|| timed(|| explanation_dimension(&routed.cases, config))),
            Box::new(|| timed(|| consistency_dimension(&routed.pairs, provider, config))),
        ];
        let handles: Vec<_> = jobs.into_iter().map(|job| scope.spawn(job)).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("dimension evaluation panicked"))
            .collect()
    });

    let mut diagnostics = parsed.diagnostics;
    let mut per_dimension = BTreeMap::new();
    for (result, diags) in outcomes {
        diagnostics.extend(diags);
        if let Some(r) = result {
            per_dimension.insert(r.dimension, r);
        }
    }
    if per_dimension.is_empty() {
        return Err(EvalError::NoEvaluableRecords);
    }

    let (overall_score, passed) = aggregate(&per_dimension, config);
    Ok(EvalReport {
        per_dimension,
        overall_score,
        passed,
        total_latency_ms: started.elapsed().as_secs_f64() * 1e3,
        diagnostics,
    })
}

fn timed(f: impl FnOnce() -> DimensionOutcome) -> DimensionOutcome {
    let t = Instant::now();
    let (mut result, diags) = f();
    if let Some(r) = result.as_mut() {
        r.latency_ms = t.elapsed().as_secs_f64() * 1e3;
    }
    (result, diags)
}

/// Weighted mean of present dimension scores (weights renormalised over the
/// present dimensions) and the conjunction of their pass flags.
pub fn aggregate(results: &BTreeMap<Dimension, MetricResult>, config: &EvalConfig) -> (f64, bool) {
    if results.is_empty() {
        return (0.0, false);
    }
    let total_weight: f64 = results.keys().map(|d| config.weight(*d)).sum();
    let overall = if total_weight > 0.0 {
        results
            .iter()
            .map(|(d, r)| config.weight(*d) * r.score)
            .sum::<f64>()
            / total_weight
    } else {
        results.values().map(|r| r.score).sum::<f64>() / results.len() as f64
    };
    let passed = results.values().all(|r| r.passed);
    (overall.clamp(0.0, 1.0), passed)
}

fn diag(line: Option<usize>, context: &str, err: impl std::fmt::Display) -> Diagnostic {
    Diagnostic {
        line,
        message: format!("{context}: {err}"),
    }
}

/// Index of the unit with the lowest score (first one on ties).
fn worst_index<T>(units: &[T], score: impl Fn(&T) -> f64) -> usize {
    let mut best = 0;
    for (i, u) in units.iter().enumerate() {
        if score(u) < score(&units[best]) {
            best = i;
        }
    }
    best
}

fn merge_top(metadata: &mut BTreeMap<String, Value>, unit: &Value) {
    if let Value::Object(obj) = unit {
        for (k, v) in obj {
            metadata.insert(k.clone(), v.clone());
        }
    }
}

fn cascade_dimension(
    pipelines: &[(usize, Vec<StepResult>)],
    config: &EvalConfig,
) -> DimensionOutcome {
    if pipelines.is_empty() {
        return (None, Vec::new());
    }
    let mut diags = Vec::new();
    let mut units = Vec::new();
    for (line, steps) in pipelines {
        match evaluate_cascade(steps, config) {
            Ok(r) => {
                let ground_truth = steps.iter().rev().find_map(|s| s.ground_truth);
                let local: Vec<f64> = steps.iter().filter_map(|s| s.quality_signal).collect();
                let mut m = json!({
                    "start_line": line,
                    "mean_confidence": r.mean_confidence,
                    "cis": r.cis,
                    "raw_score": r.raw_score,
                    "score": r.score,
                    "propagation_failure": r.propagation_failure,
                    "failure_index": r.failure_index,
                    "step_confidences": r.step_confidences,
                });
                if let Some(gt) = ground_truth {
                    m["ground_truth"] = json!(gt);
                    m["divergence"] = json!(r.divergence(gt));
                    m["cis_divergence"] = json!(r.cis - gt);
                }
                if !local.is_empty() {
                    m["local_validation"] = json!(local.iter().sum::<f64>() / local.len() as f64);
                }
                units.push((r.score, m));
            }
            Err(e) => diags.push(diag(Some(*line), "pipeline skipped", e)),
        }
    }
    if units.is_empty() {
        return (None, diags);
    }
    let worst = worst_index(&units, |u| u.0);
    let mut metadata = BTreeMap::new();
    merge_top(&mut metadata, &units[worst].1);
    metadata.remove("start_line");
    metadata.insert("pipeline_count".into(), json!(units.len()));
    metadata.insert(
        "failing_pipelines".into(),
        json!(units
            .iter()
            .filter(|u| u.1["propagation_failure"] == json!(true))
            .count()),
    );
    let confidence = units.len() as f64 / pipelines.len() as f64;
    let score = units[worst].0;
    metadata.insert(
        "pipelines".into(),
        Value::Array(units.into_iter().map(|u| u.1).collect()),
    );
    let threshold = config.threshold(Dimension::Cascade);
    (
        Some(MetricResult::new(
            Dimension::Cascade,
            score,
            confidence,
            threshold,
            metadata,
        )),
        diags,
    )
}

fn tool_window_json(index: usize, r: &ReliabilityResult) -> Value {
    let counts: BTreeMap<String, usize> = r
        .call_counts
        .iter()
        .map(|(s, c)| (s.to_string(), *c))
        .collect();
    json!({
        "window": index + 1,
        "prr": r.prr,
        "rho_lq": r.rho_lq,
        "rho_defined": r.rho_defined,
        "bucket_count": r.bucket_count,
        "call_counts": counts,
        "score": r.score,
        "silent_degradation": r.silent_degradation,
        "accuracy": r.accuracy,
        "accuracy_delta": r.accuracy_delta,
    })
}

fn tool_dimension(calls: &[&ToolCallRecord], config: &EvalConfig) -> DimensionOutcome {
    if calls.is_empty() {
        return (None, Vec::new());
    }
    let mut diags = Vec::new();
    let mut results: Vec<ReliabilityResult> = Vec::new();
    let mut first_accuracy: Option<f64> = None;
    for (i, chunk) in calls.chunks(config.tool_window_size).enumerate() {
        let owned: Vec<ToolCallRecord> = chunk.iter().map(|c| (*c).clone()).collect();
        let reference = match config.accuracy_delta_mode {
            AccuracyDeltaMode::Prior => results.last().and_then(|r| r.accuracy),
            AccuracyDeltaMode::Baseline => first_accuracy,
        };
        match evaluate_tool_window(&owned, reference, config) {
            Ok(r) => {
                if first_accuracy.is_none() {
                    first_accuracy = r.accuracy;
                }
                if !r.rho_defined {
                    diags.push(Diagnostic {
                        line: None,
                        message: format!(
                            "tool window {}: fewer than 3 buckets with quality data, latency-quality correlation taken as 0",
                            i + 1
                        ),
                    });
                }
                results.push(r);
            }
            Err(e) => diags.push(diag(None, &format!("tool window {} skipped", i + 1), e)),
        }
    }
    if results.is_empty() {
        return (None, diags);
    }
    let units: Vec<Value> = results
        .iter()
        .enumerate()
        .map(|(i, r)| tool_window_json(i, r))
        .collect();
    let worst = worst_index(&results, |r| r.score);
    let mut metadata = BTreeMap::new();
    merge_top(&mut metadata, &units[worst]);
    let first_flag = results
        .iter()
        .position(|r| r.silent_degradation)
        .map(|i| i + 1);
    metadata.insert("silent_degradation".into(), json!(first_flag.is_some()));
    metadata.insert("first_silent_degradation_window".into(), json!(first_flag));
    metadata.insert("window_count".into(), json!(results.len()));
    metadata.insert("windows".into(), Value::Array(units));

    let last_fill = calls
        .chunks(config.tool_window_size)
        .last()
        .map_or(0, <[_]>::len);
    let confidence = last_fill as f64 / config.tool_window_size as f64;
    let threshold = config.threshold(Dimension::Tool);
    (
        Some(MetricResult::new(
            Dimension::Tool,
            results[worst].score,
            confidence,
            threshold,
            metadata,
        )),
        diags,
    )
}

fn snapshot_json(index: usize, s: &DistributionSnapshot) -> Value {
    json!({
        "window": index + 1,
        "entropy": s.entropy,
        "diversity": s.diversity,
        "repeat_rate": s.repeat_rate,
        "score": s.score,
        "window_fill": s.window_fill,
        "distinct_categories": s.distinct_categories,
        "mean_quality": s.mean_quality,
    })
}

/// Snapshot the sliding window each time it has taken in a full window of new
/// events, plus once at the end of the stream if events remain unsnapshotted.
pub fn distribution_snapshots(
    outputs: &[&OutputEvent],
    config: &EvalConfig,
) -> Result<Vec<DistributionSnapshot>> {
    let mut window = DistributionWindow::new(config.window_size);
    let mut snapshots = Vec::new();
    for (i, e) in outputs.iter().enumerate() {
        window.observe((*e).clone());
        if (i + 1) % config.window_size == 0 {
            snapshots.push(window.snapshot(config)?);
        }
    }
    if !outputs.len().is_multiple_of(config.window_size) {
        snapshots.push(window.snapshot(config)?);
    }
    Ok(snapshots)
}

fn distribution_dimension(outputs: &[&OutputEvent], config: &EvalConfig) -> DimensionOutcome {
    if outputs.is_empty() {
        return (None, Vec::new());
    }
    let snapshots = match distribution_snapshots(outputs, config) {
        Ok(s) => s,
        Err(e) => return (None, vec![diag(None, "distribution skipped", e)]),
    };
    let threshold = config.threshold(Dimension::Distribution);
    let units: Vec<Value> = snapshots
        .iter()
        .enumerate()
        .map(|(i, s)| snapshot_json(i, s))
        .collect();
    let worst = worst_index(&snapshots, |s| s.score);
    let mut metadata = BTreeMap::new();
    merge_top(&mut metadata, &units[worst]);
    let first_failing = snapshots
        .iter()
        .position(|s| s.score < threshold)
        .map(|i| i + 1);
    metadata.insert("first_failing_window".into(), json!(first_failing));
    metadata.insert("window_count".into(), json!(snapshots.len()));
    metadata.insert("windows".into(), Value::Array(units));
    let last = snapshots.last().expect("at least one snapshot");
    let confidence = last.window_fill as f64 / config.window_size as f64;
    (
        Some(MetricResult::new(
            Dimension::Distribution,
            snapshots[worst].score,
            confidence,
            threshold,
            metadata,
        )),
        Vec::new(),
    )
}

fn case_impacts(
    case: &AttributionCase,
    line: usize,
    diags: &mut Vec<Diagnostic>,
) -> Result<Vec<f64>> {
    if let (Some(probe), Some(inputs), Some(baseline)) =
        (&case.probe, &case.feature_values, &case.baseline_values)
    {
        let impacts = perturbation_impacts(probe, case, inputs, baseline)?;
        let predicted = probe.predict(inputs).map_err(|message| EvalError::Probe {
            feature: "<unperturbed>".into(),
            message,
        })?;
        if (predicted - case.decision_value).abs() > 1e-9 {
            diags.push(Diagnostic {
                line: Some(line),
                message: format!(
                    "probe output {predicted} differs from recorded decision_value {}",
                    case.decision_value
                ),
            });
        }
        return Ok(impacts);
    }
    case.impacts.clone().ok_or_else(|| {
        EvalError::invalid(
            "impacts",
            "case carries neither measured impacts nor a probe with feature and baseline values",
        )
    })
}

fn explanation_dimension(
    cases: &[(usize, &AttributionCase)],
    config: &EvalConfig,
) -> DimensionOutcome {
    if cases.is_empty() {
        return (None, Vec::new());
    }
    let mut diags = Vec::new();
    let mut units: Vec<(f64, Value)> = Vec::new();
    for (line, case) in cases {
        let result = case_impacts(case, *line, &mut diags)
            .and_then(|impacts| evaluate_with_impacts(case, impacts, config));
        match result {
            Ok(r) => {
                let impacts: BTreeMap<&str, f64> = case
                    .feature_names
                    .iter()
                    .map(String::as_str)
                    .zip(r.impacts.iter().copied())
                    .collect();
                units.push((
                    r.acs,
                    json!({
                        "line": line,
                        "acs": r.acs,
                        "impacts": impacts,
                        "top_feature": r.top_feature,
                        "top_impact": r.top_impact,
                        "decoupled": r.decoupled,
                        "decision_value": case.decision_value,
                    }),
                ));
            }
            Err(e) => diags.push(diag(Some(*line), "attribution case skipped", e)),
        }
    }
    if units.is_empty() {
        return (None, diags);
    }
    let worst = worst_index(&units, |u| u.0);
    let mut metadata = BTreeMap::new();
    merge_top(&mut metadata, &units[worst].1);
    metadata.remove("line");
    metadata.insert(
        "decoupled_cases".into(),
        json!(units
            .iter()
            .filter(|u| u.1["decoupled"] == json!(true))
            .count()),
    );
    metadata.insert("case_count".into(), json!(units.len()));
    let confidence = units.len() as f64 / cases.len() as f64;
    let score = units[worst].0;
    metadata.insert(
        "cases".into(),
        Value::Array(units.into_iter().map(|u| u.1).collect()),
    );
    let threshold = config.threshold(Dimension::Explanation);
    (
        Some(MetricResult::new(
            Dimension::Explanation,
            score,
            confidence,
            threshold,
            metadata,
        )),
        diags,
    )
}

fn consistency_dimension(
    pairs: &[&RequestPair],
    provider: &dyn EmbeddingProvider,
    config: &EvalConfig,
) -> DimensionOutcome {
    if pairs.is_empty() {
        return (None, Vec::new());
    }
    let owned: Vec<RequestPair> = pairs.iter().map(|p| (*p).clone()).collect();
    match consistency_score(&owned, provider, config) {
        Ok(r) => {
            let metadata = BTreeMap::from([
                ("agreement_rate".to_string(), json!(r.agreement_rate)),
                ("mean_similarity".to_string(), json!(r.mean_similarity)),
                ("pair_count".to_string(), json!(r.pair_count)),
                ("flagged".to_string(), json!(r.flagged)),
            ]);
            let confidence = (r.pair_count as f64 / config.expected_pairs as f64).min(1.0);
            let threshold = config.threshold(Dimension::Consistency);
            (
                Some(MetricResult::new(
                    Dimension::Consistency,
                    r.score,
                    confidence,
                    threshold,
                    metadata,
                )),
                Vec::new(),
            )
        }
        Err(e) => (None, vec![diag(None, "consistency skipped", e)]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::HashingEmbedder;

    fn result(d: Dimension, score: f64, threshold: f64) -> MetricResult {
        MetricResult::new(d, score, 1.0, threshold, BTreeMap::new())
    }

    #[test]
    fn aggregate_single_dimension() {
        let r = BTreeMap::from([(Dimension::Tool, result(Dimension::Tool, 0.7, 0.6))]);
        let (s, p) = aggregate(&r, &EvalConfig::default());
        assert!((s - 0.7).abs() < 1e-12);
        assert!(p);
    }

    #[test]
    fn aggregate_mean_and_conjunction() {
        let r = BTreeMap::from([
            (Dimension::Tool, result(Dimension::Tool, 0.9, 0.6)),
            (Dimension::Cascade, result(Dimension::Cascade, 0.3, 0.6)),
        ]);
        let (s, p) = aggregate(&r, &EvalConfig::default());
        assert!((s - 0.6).abs() < 1e-12);
        assert!(!p);
    }

    #[test]
    fn aggregate_at_threshold_passes() {
        let r = BTreeMap::from([
            (Dimension::Tool, result(Dimension::Tool, 0.6, 0.6)),
            (
                Dimension::Distribution,
                result(Dimension::Distribution, 0.6, 0.6),
            ),
        ]);
        assert!(aggregate(&r, &EvalConfig::default()).1);
    }

    #[test]
    fn aggregate_respects_weights() {
        let r = BTreeMap::from([
            (Dimension::Tool, result(Dimension::Tool, 1.0, 0.6)),
            (Dimension::Cascade, result(Dimension::Cascade, 0.0, 0.6)),
        ]);
        let mut cfg = EvalConfig::default();
        cfg.aggregate_weights.insert(Dimension::Tool, 3.0);
        assert!((aggregate(&r, &cfg).0 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn outputs_only_gives_distribution_only() {
        let text: String = (0..30)
            .map(|i| format!("{{\"type\":\"output\",\"category\":\"c{}\",\"session_id\":\"s\",\"timestamp\":{i}}}\n", i % 5))
            .collect();
        let report = evaluate(&text, &EvalConfig::default(), &HashingEmbedder::default()).unwrap();
        assert_eq!(
            report.per_dimension.keys().copied().collect::<Vec<_>>(),
            vec![Dimension::Distribution]
        );
        assert!((report.get(Dimension::Distribution).unwrap().confidence - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_is_error() {
        let err =
            evaluate("\n\n", &EvalConfig::default(), &HashingEmbedder::default()).unwrap_err();
        assert_eq!(err, EvalError::NoEvaluableRecords);
        assert_eq!(err.to_string(), "no evaluable records");
    }

    #[test]
    fn unparseable_stream_is_error() {
        let err = evaluate(
            "garbage\n{also bad",
            &EvalConfig::default(),
            &HashingEmbedder::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::Unparseable(_)));
    }

    #[test]
    fn parse_errors_are_collected_with_lines() {
        let text = "{\"type\":\"step\",\"step_index\":1,\"confidence\":0.9}\nnot json\n{\"type\":\"step\",\"step_index\":2,\"confidence\":0.9}\n";
        let report = evaluate(text, &EvalConfig::default(), &HashingEmbedder::default()).unwrap();
        assert_eq!(report.diagnostics.len(), 1);
        assert_eq!(report.diagnostics[0].line, Some(2));
        assert!(report.get(Dimension::Cascade).is_some());
    }

    #[test]
    fn steps_split_into_pipelines_on_index_reset() {
        let text = [(1, 0.9), (2, 0.9), (1, 0.3), (2, 0.9), (3, 0.9)]
            .iter()
            .map(|(i, c)| format!("{{\"type\":\"step\",\"step_index\":{i},\"confidence\":{c}}}"))
            .collect::<Vec<_>>()
            .join("\n");
        let report = evaluate(&text, &EvalConfig::default(), &HashingEmbedder::default()).unwrap();
        let r = report.get(Dimension::Cascade).unwrap();
        assert_eq!(r.metadata["pipeline_count"], json!(2));
        assert_eq!(r.metadata["failure_index"], json!(1));
        assert!(!r.metadata.contains_key("start_line"));
    }

    #[test]
    fn attribution_without_probe_or_impacts_is_skipped() {
        let text = r#"{"type":"attribution","feature_names":["a","b"],"claimed_weights":[0.5,0.2],"decision_value":0.7}"#;
        let err = evaluate(text, &EvalConfig::default(), &HashingEmbedder::default()).unwrap_err();
        assert_eq!(err, EvalError::NoEvaluableRecords);
    }

    #[test]
    fn precomputed_impacts_are_used() {
        let text = r#"{"type":"attribution","feature_names":["a","b","c"],"claimed_weights":[0.5,0.2,0.1],"decision_value":0.7,"impacts":[0.01,0.3,0.2]}"#;
        let report = evaluate(text, &EvalConfig::default(), &HashingEmbedder::default()).unwrap();
        let r = report.get(Dimension::Explanation).unwrap();
        assert_eq!(r.metadata["decoupled"], json!(true));
        assert!(!r.passed);
    }
}
