//! Domain types and the line-delimited trace record format.
//!
//! Every line of a trace is one JSON object discriminated by its `type` field:
//!
//! | `type`         | record                |
//! |----------------|-----------------------|
//! | `step`         | [`StepResult`]        |
//! | `tool_call`    | [`ToolCallRecord`]    |
//! | `output`       | [`OutputEvent`]       |
//! | `attribution`  | [`AttributionCase`]   |
//! | `request_pair` | [`RequestPair`]       |
//!
//! Unknown keys are ignored (request envelopes often carry `context` or
//! `reasoning` blobs that no metric consumes). Unknown `type` values are
//! rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{EvalError, Result};
use crate::explanation::LinearProbe;

/// Evaluation dimensions, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dimension {
    Cascade,
    Tool,
    Distribution,
    Explanation,
    Consistency,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Cascade,
        Dimension::Tool,
        Dimension::Distribution,
        Dimension::Explanation,
        Dimension::Consistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Cascade => "CASCADE",
            Dimension::Tool => "TOOL",
            Dimension::Distribution => "DISTRIBUTION",
            Dimension::Explanation => "EXPLANATION",
            Dimension::Consistency => "CONSISTENCY",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One step of a multi-step agent pipeline.
///
/// `quality_signal` is the step's own local validation score and
/// `ground_truth` an end-to-end correctness label for the pipeline; both are
/// optional and only surface in report metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub step_index: u32,
    pub step_name: String,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_signal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<f64>,
}

impl StepResult {
    pub fn new(step_index: u32, step_name: impl Into<String>, confidence: f64) -> Self {
        Self {
            step_index,
            step_name: step_name.into(),
            confidence,
            quality_signal: None,
            ground_truth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_index < 1 {
            return Err(EvalError::invalid("step_index", "must be >= 1"));
        }
        check_unit("confidence", self.confidence)?;
        if let Some(q) = self.quality_signal {
            check_unit("quality_signal", q)?;
        }
        if let Some(g) = self.ground_truth {
            check_unit("ground_truth", g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ToolCallState {
    Success,
    Partial,
    Failed,
}

impl FromStr for ToolCallState {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUCCESS" => Ok(ToolCallState::Success),
            "PARTIAL" => Ok(ToolCallState::Partial),
            "FAILED" => Ok(ToolCallState::Failed),
            other => Err(EvalError::invalid(
                "state",
                format!("expected SUCCESS, PARTIAL or FAILED, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for ToolCallState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolCallState::Success => "SUCCESS",
            ToolCallState::Partial => "PARTIAL",
            ToolCallState::Failed => "FAILED",
        })
    }
}

/// A recorded tool invocation. `quality_signal` is the downstream decision
/// quality observed at the call's tick, used for latency-quality correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolCallRecord {
    pub tool_name: String,
    pub state: ToolCallState,
    pub latency_ms: f64,
    pub timestamp: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_signal: Option<f64>,
}

impl ToolCallRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.latency_ms.is_finite() || self.latency_ms < 0.0 {
            return Err(EvalError::invalid("latency_ms", "must be finite and >= 0"));
        }
        if let Some(q) = self.quality_signal {
            check_unit("quality_signal", q)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEvent {
    pub category: String,
    pub session_id: String,
    pub timestamp: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_signal: Option<f64>,
}

impl OutputEvent {
    pub fn validate(&self) -> Result<()> {
        if self.category.is_empty() {
            return Err(EvalError::invalid("category", "must be non-empty"));
        }
        if let Some(q) = self.quality_signal {
            check_unit("quality_signal", q)?;
        }
        Ok(())
    }
}

/// Claimed top-K attributions for one decision.
///
/// Impacts can be supplied directly (`impacts`, measured by an external
/// harness) or measured in-engine when the record carries a serialisable
/// `probe` together with `feature_values` and `baseline_values`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionCase {
    pub feature_names: Vec<String>,
    pub claimed_weights: Vec<f64>,
    pub decision_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_values: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_values: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<LinearProbe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impacts: Option<Vec<f64>>,
}

impl AttributionCase {
    pub fn new(feature_names: Vec<String>, claimed_weights: Vec<f64>, decision_value: f64) -> Self {
        Self {
            feature_names,
            claimed_weights,
            decision_value,
            feature_values: None,
            baseline_values: None,
            probe: None,
            impacts: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.feature_names.len();
        if k < 2 {
            return Err(EvalError::invalid(
                "feature_names",
                "need at least 2 features",
            ));
        }
        if self.claimed_weights.len() != k {
            return Err(EvalError::invalid(
                "claimed_weights",
                format!(
                    "length {} != {} feature names",
                    self.claimed_weights.len(),
                    k
                ),
            ));
        }
        for w in &self.claimed_weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(EvalError::invalid(
                    "claimed_weights",
                    "weights must be finite and >= 0",
                ));
            }
        }
        if self.claimed_weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(EvalError::invalid(
                "claimed_weights",
                "must be non-increasing",
            ));
        }
        if !self.decision_value.is_finite() {
            return Err(EvalError::invalid("decision_value", "must be finite"));
        }
        if let Some(impacts) = &self.impacts {
            if impacts.len() != k {
                return Err(EvalError::invalid(
                    "impacts",
                    "length must match feature_names",
                ));
            }
            if impacts.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(EvalError::invalid(
                    "impacts",
                    "impacts must be finite and >= 0",
                ));
            }
        }
        for (field, map) in [
            ("feature_values", &self.feature_values),
            ("baseline_values", &self.baseline_values),
        ] {
            if let Some(map) = map {
                if let Some(missing) = self.feature_names.iter().find(|n| !map.contains_key(*n)) {
                    return Err(EvalError::invalid(
                        field,
                        format!("missing feature `{missing}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Two surface forms of the same underlying request and the decision each received.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestPair {
    pub text_a: String,
    pub text_b: String,
    pub decision_a: String,
    pub decision_b: String,
}

impl RequestPair {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("text_a", &self.text_a),
            ("text_b", &self.text_b),
            ("decision_a", &self.decision_a),
            ("decision_b", &self.decision_b),
        ] {
            if v.is_empty() {
                return Err(EvalError::invalid(field, "must be non-empty"));
            }
        }
        Ok(())
    }
}

/// One ingested trace event.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(StepResult),
    ToolCall(ToolCallRecord),
    Output(OutputEvent),
    Attribution(AttributionCase),
    RequestPair(RequestPair),
}

impl TraceRecord {
    pub fn validate(&self) -> Result<()> {
        match self {
            TraceRecord::Step(r) => r.validate(),
            TraceRecord::ToolCall(r) => r.validate(),
            TraceRecord::Output(r) => r.validate(),
            TraceRecord::Attribution(r) => r.validate(),
            TraceRecord::RequestPair(r) => r.validate(),
        }
    }

    /// Serialise to a single trace line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialise")
    }
}

/// Parse one trace line. `line_no` is only used for diagnostics.
pub fn parse_trace_record(line: &str, line_no: usize) -> Result<TraceRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| EvalError::Parse {
        line: line_no,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(EvalError::Parse {
            line: line_no,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        });
    };
    let f = Fields {
        obj: &obj,
        line: line_no,
    };
    let record = match f.string("type")?.as_str() {
        "step" => TraceRecord::Step(StepResult {
            step_index: f.u32("step_index")?,
            step_name: f.opt_string("step_name")?.unwrap_or_default(),
            confidence: f.f64("confidence")?,
            quality_signal: f.opt_f64("quality_signal")?,
            ground_truth: f.opt_f64("ground_truth")?,
        }),
        "tool_call" => TraceRecord::ToolCall(ToolCallRecord {
            tool_name: f.string("tool_name")?,
            state: f
                .string("state")?
                .parse()
                .map_err(|e: EvalError| e.at_line(line_no))?,
            latency_ms: f.f64("latency_ms")?,
            timestamp: f.u64("timestamp")?,
            quality_signal: f.opt_f64("quality_signal")?,
        }),
        "output" => TraceRecord::Output(OutputEvent {
            category: f.string("category")?,
            session_id: f.opt_string("session_id")?.unwrap_or_default(),
            timestamp: f.u64("timestamp")?,
            quality_signal: f.opt_f64("quality_signal")?,
        }),
        "attribution" => TraceRecord::Attribution(AttributionCase {
            feature_names: f.string_list("feature_names")?,
            claimed_weights: f.f64_list("claimed_weights")?,
            decision_value: f.f64("decision_value")?,
            feature_values: f.opt_f64_map("feature_values")?,
            baseline_values: f.opt_f64_map("baseline_values")?,
            probe: f.opt_probe("probe")?,
            impacts: f.opt_f64_list("impacts")?,
        }),
        "request_pair" => TraceRecord::RequestPair(RequestPair {
            text_a: f.string("text_a")?,
            text_b: f.string("text_b")?,
            decision_a: f.string("decision_a")?,
            decision_b: f.string("decision_b")?,
        }),
        other => {
            return Err(EvalError::Parse {
                line: line_no,
                field: "type".into(),
                message: format!("unknown record type `{other}`"),
            })
        }
    };
    record.validate().map_err(|e| e.at_line(line_no))?;
    Ok(record)
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl Fields<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> EvalError {
        EvalError::Parse {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn get(&self, field: &str) -> Option<&Value> {
        self.obj.get(field).filter(|v| !v.is_null())
    }

    fn req(&self, field: &str) -> Result<&Value> {
        self.get(field)
            .ok_or_else(|| self.err(field, "missing field"))
    }

    fn string(&self, field: &str) -> Result<String> {
        self.req(field)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    fn opt_string(&self, field: &str) -> Result<Option<String>> {
        self.get(field).map(|_| self.string(field)).transpose()
    }

    fn f64(&self, field: &str) -> Result<f64> {
        self.req(field)?
            .as_f64()
            .ok_or_else(|| self.err(field, "expected a number"))
    }

    fn opt_f64(&self, field: &str) -> Result<Option<f64>> {
        self.get(field).map(|_| self.f64(field)).transpose()
    }

    fn u64(&self, field: &str) -> Result<u64> {
        self.req(field)?
            .as_u64()
            .ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn u32(&self, field: &str) -> Result<u32> {
        let v = self.u64(field)?;
        u32::try_from(v).map_err(|_| self.err(field, "integer out of range"))
    }

    fn array(&self, field: &str) -> Result<&Vec<Value>> {
        self.req(field)?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array"))
    }

    fn string_list(&self, field: &str) -> Result<Vec<String>> {
        self.array(field)?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| self.err(field, "expected an array of strings"))
            })
            .collect()
    }

    fn f64_list(&self, field: &str) -> Result<Vec<f64>> {
        self.array(field)?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| self.err(field, "expected an array of numbers"))
            })
            .collect()
    }

    fn opt_f64_list(&self, field: &str) -> Result<Option<Vec<f64>>> {
        self.get(field).map(|_| self.f64_list(field)).transpose()
    }

    fn opt_f64_map(&self, field: &str) -> Result<Option<BTreeMap<String, f64>>> {
        let Some(v) = self.get(field) else {
            return Ok(None);
        };
        let obj = v
            .as_object()
            .ok_or_else(|| self.err(field, "expected an object of numbers"))?;
        obj.iter()
            .map(|(k, v)| {
                v.as_f64()
                    .map(|x| (k.clone(), x))
                    .ok_or_else(|| self.err(field, format!("value for `{k}` is not a number")))
            })
            .collect::<Result<_>>()
            .map(Some)
    }

    fn opt_probe(&self, field: &str) -> Result<Option<LinearProbe>> {
        let Some(v) = self.get(field) else {
            return Ok(None);
        };
        LinearProbe::deserialize(v)
            .map(Some)
            .map_err(|e| self.err(field, e.to_string()))
    }
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(EvalError::invalid(field, format!("{v} is outside [0, 1]")))
    }
}

/// A non-fatal problem found while ingesting or evaluating a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

/// Normalised result of one evaluation dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub dimension: Dimension,
    pub score: f64,
    pub confidence: f64,
    pub latency_ms: f64,
    pub passed: bool,
    pub metadata: BTreeMap<String, Value>,
}

impl MetricResult {
    /// Build a result, clamping `score` and `confidence` into [0, 1] and
    /// deriving `passed` from `threshold`.
    pub fn new(
        dimension: Dimension,
        score: f64,
        confidence: f64,
        threshold: f64,
        metadata: BTreeMap<String, Value>,
    ) -> Self {
        let score = clamp_unit(score);
        Self {
            dimension,
            score,
            confidence: clamp_unit(confidence),
            latency_ms: 0.0,
            passed: score >= threshold,
            metadata,
        }
    }
}

/// Per-dimension results plus the gate verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_dimension: BTreeMap<Dimension, MetricResult>,
    pub overall_score: f64,
    pub passed: bool,
    pub total_latency_ms: f64,
    pub diagnostics: Vec<Diagnostic>,
}

impl EvalReport {
    /// Zero every measured wall-clock latency, making the report a pure
    /// function of its inputs.
    pub fn without_timings(mut self) -> Self {
        for r in self.per_dimension.values_mut() {
            r.latency_ms = 0.0;
        }
        self.total_latency_ms = 0.0;
        self
    }

    pub fn get(&self, dimension: Dimension) -> Option<&MetricResult> {
        self.per_dimension.get(&dimension)
    }
}

pub(crate) fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}
