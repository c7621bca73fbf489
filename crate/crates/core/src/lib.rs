//! Continuous evaluation of production agentic systems from recorded traces.
//!
//! Five dimensions are scored from a line-delimited trace:
//!
//! - [`cascade`]: uncertainty propagation across pipeline steps
//! - [`reliability`]: partial tool responses and latency-quality coupling
//! - [`distribution`]: entropy, diversity and repeat rate of outputs
//! - [`explanation`]: perturbation check of claimed attributions
//! - [`consistency`]: decision agreement across request surfaces
//!
//! [`evaluator`] routes records, runs the dimensions and applies the gate;
//! [`sim`] generates seeded traces for the reproducible failure scenarios.

pub mod cascade;
pub mod config;
pub mod consistency;
pub mod distribution;
pub mod error;
pub mod evaluator;
pub mod explanation;
pub mod model;
pub mod numerics;
pub mod reliability;
pub mod sim;

pub use config::{AccuracyDeltaMode, EvalConfig};
pub use consistency::{EmbeddingProvider, HashingEmbedder};
pub use error::{EvalError, Result};
pub use evaluator::{aggregate, evaluate, parse_trace};
pub use explanation::{LinearProbe, ModelProbe};
pub use model::{
    parse_trace_record, AttributionCase, Diagnostic, Dimension, EvalReport, MetricResult,
    OutputEvent, RequestPair, StepResult, ToolCallRecord, ToolCallState, TraceRecord,
};
