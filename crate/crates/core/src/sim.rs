//! Seeded synthetic trace generators for four failure modes:
//! cascade error (fm1), silent tool degradation (fm2), distribution collapse
//! (fm3) and explanation decoupling (fm5).
//!
//! Randomness comes from ChaCha8 seeded with the scenario seed; every window
//! or stage draws from its own ChaCha stream, so adding a window never
//! changes the ones before or after it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EvalError, Result};
use crate::explanation::{LinearProbe, ModelProbe};
use crate::model::{
    AttributionCase, OutputEvent, StepResult, ToolCallRecord, ToolCallState, TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Fm1,
    Fm2,
    Fm3,
    Fm5,
}

impl FromStr for Scenario {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fm1" => Ok(Scenario::Fm1),
            "fm2" => Ok(Scenario::Fm2),
            "fm3" => Ok(Scenario::Fm3),
            "fm5" => Ok(Scenario::Fm5),
            _ => Err(EvalError::Unknown {
                kind: "scenario",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Fm1 => "fm1",
            Scenario::Fm2 => "fm2",
            Scenario::Fm3 => "fm3",
            Scenario::Fm5 => "fm5",
        })
    }
}

/// Everything needed to regenerate a trace byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub seed: u64,
    /// Scenario variant; `None` or `"all"` emits every variant in order
    /// (fm1 and fm5 only).
    pub variant: Option<String>,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            seed,
            variant: None,
        }
    }

    pub fn with_variant(mut self, variant: impl Into<String>) -> Self {
        self.variant = Some(variant.into());
        self
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate the scenario as trace records.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<TraceRecord>> {
    let variant = spec.variant.as_deref().filter(|v| *v != "all");
    match spec.scenario {
        Scenario::Fm1 => {
            let variants = match variant {
                Some(v) => vec![v.parse::<Fm1Variant>()?],
                None => Fm1Variant::ALL.to_vec(),
            };
            Ok(variants
                .into_iter()
                .flat_map(generate_fm1)
                .map(TraceRecord::Step)
                .collect())
        }
        Scenario::Fm2 => {
            no_variant(spec)?;
            Ok(generate_fm2(spec.seed)
                .calls
                .into_iter()
                .map(TraceRecord::ToolCall)
                .collect())
        }
        Scenario::Fm3 => {
            no_variant(spec)?;
            Ok(generate_fm3(spec.seed)
                .into_iter()
                .map(TraceRecord::Output)
                .collect())
        }
        Scenario::Fm5 => {
            let variants = match variant {
                Some(v) => vec![v.parse::<Fm5Variant>()?],
                None => Fm5Variant::ALL.to_vec(),
            };
            Ok(variants
                .into_iter()
                .map(|v| {
                    TraceRecord::Attribution(generate_fm5(v, spec.seed, FM5_DEFAULT_NOISE).case)
                })
                .collect())
        }
    }
}

fn no_variant(spec: &ScenarioSpec) -> Result<()> {
    match spec.variant.as_deref() {
        None | Some("all") => Ok(()),
        Some(v) => Err(EvalError::Unknown {
            kind: "variant",
            value: format!("{v} (scenario {} has no variants)", spec.scenario),
        }),
    }
}

/// Serialise records as a line-delimited trace, one record per line.
pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// fm3: distribution collapse
// ---------------------------------------------------------------------------

pub const FM3_WINDOWS: usize = 5;
pub const FM3_WINDOW_LEN: usize = 100;
/// Accuracy embedded in each window; flat while diversity collapses.
pub const FM3_ACCURACY: [f64; FM3_WINDOWS] = [0.88, 0.87, 0.87, 0.86, 0.86];
const FM3_FORCED_TAIL: usize = 20;

/// Per-window category weights (relative, first entry is the top category).
fn fm3_weights(window: usize) -> Vec<f64> {
    match window {
        0 | 1 => vec![1.0; 20],
        // narrowing: skewed towards one category
        2 => {
            let mut w = vec![0.65 / 7.0; 8];
            w[0] = 0.35;
            w
        }
        3 => vec![1.0; 8],
        _ => vec![0.60, 0.20, 0.20],
    }
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Five windows of 100 output events. Every window contains each of its
/// categories at least once; the final window ends with 20 events of its top
/// category.
pub fn generate_fm3(seed: u64) -> Vec<OutputEvent> {
    let mut events = Vec::with_capacity(FM3_WINDOWS * FM3_WINDOW_LEN);
    for (w, accuracy) in FM3_ACCURACY.iter().copied().enumerate() {
        let mut rng = rng_for(seed, w as u64);
        let weights = fm3_weights(w);
        let forced = if w == FM3_WINDOWS - 1 {
            FM3_FORCED_TAIL
        } else {
            0
        };

        let mut cats: Vec<usize> = (0..weights.len()).collect();
        while cats.len() < FM3_WINDOW_LEN - forced {
            cats.push(sample_weighted(&mut rng, &weights));
        }
        cats.shuffle(&mut rng);
        cats.extend(std::iter::repeat_n(0, forced));

        for (i, c) in cats.into_iter().enumerate() {
            let tick = (w * FM3_WINDOW_LEN + i) as u64;
            events.push(OutputEvent {
                category: format!("category-{c:02}"),
                session_id: format!("w{}-s{:02}", w + 1, i / 10),
                timestamp: tick,
                quality_signal: Some(accuracy),
            });
        }
    }
    events
}

// ---------------------------------------------------------------------------
// fm2: silent tool degradation
// ---------------------------------------------------------------------------

pub const FM2_STAGES: usize = 4;
pub const FM2_STAGE_LEN: usize = 50;
pub const FM2_PARTIAL_COUNTS: [usize; FM2_STAGES] = [2, 11, 20, 29];
/// External accuracy per stage: -0.03 over the whole run.
pub const FM2_ACCURACY: [f64; FM2_STAGES] = [0.87, 0.86, 0.85, 0.84];
/// Per-stage reliability scores the generator is built to reproduce.
pub const FM2_TARGET_SCORES: [f64; FM2_STAGES] = [0.940, 0.650, 0.320, 0.110];
const FM2_BUCKETS: usize = 10;
/// Largest per-bucket deviation of quality from the stage accuracy.
const FM2_QUALITY_SPREAD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Fm2Trace {
    pub calls: Vec<ToolCallRecord>,
    /// Target latency-quality correlation per stage.
    pub target_rho: [f64; FM2_STAGES],
    pub stage_accuracy: [f64; FM2_STAGES],
}

/// Correlation that makes `1 - prr * (1 + rho)` equal the stage's target score.
pub fn fm2_target_rho(stage: usize) -> f64 {
    let prr = FM2_PARTIAL_COUNTS[stage] as f64 / FM2_STAGE_LEN as f64;
    (1.0 - FM2_TARGET_SCORES[stage]) / prr - 1.0
}

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Four stages of 50 calls against one upstream service. Each stage has ten
/// 5-tick buckets; per-bucket p95 latency and quality are constructed so the
/// Pearson correlation between latency and quality loss equals the stage
/// target exactly, and mean quality equals the stage accuracy.
pub fn generate_fm2(seed: u64) -> Fm2Trace {
    let per_bucket = FM2_STAGE_LEN / FM2_BUCKETS;
    let mut calls = Vec::with_capacity(FM2_STAGES * FM2_STAGE_LEN);
    let mut target_rho = [0.0; FM2_STAGES];

    for stage in 0..FM2_STAGES {
        let mut rng = rng_for(seed, stage as u64);
        let rho = fm2_target_rho(stage);
        target_rho[stage] = rho;

        let p95: Vec<f64> = (0..FM2_BUCKETS)
            .map(|_| (rng.gen_range(60.0..180.0_f64) * 10.0).round() / 10.0)
            .collect();
        let mut x = p95.clone();
        center(&mut x);
        let mut z: Vec<f64> = (0..FM2_BUCKETS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        center(&mut z);
        let proj = dot(&z, &x) / dot(&x, &x);
        for (zi, xi) in z.iter_mut().zip(&x) {
            *zi -= proj * xi;
        }
        let (nx, nz) = (dot(&x, &x).sqrt(), dot(&z, &z).sqrt());
        let loss: Vec<f64> = x
            .iter()
            .zip(&z)
            .map(|(xi, zi)| rho * xi / nx + (1.0 - rho * rho).sqrt() * zi / nz)
            .collect();
        let scale = FM2_QUALITY_SPREAD / loss.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let quality: Vec<f64> = loss
            .iter()
            .map(|l| FM2_ACCURACY[stage] - scale * l)
            .collect();

        let partial: Vec<usize> =
            index::sample(&mut rng, FM2_STAGE_LEN, FM2_PARTIAL_COUNTS[stage]).into_vec();
        for b in 0..FM2_BUCKETS {
            let peak_slot = rng.gen_range(0..per_bucket);
            for slot in 0..per_bucket {
                let i = b * per_bucket + slot;
                let latency = if slot == peak_slot {
                    p95[b]
                } else {
                    (p95[b] * rng.gen_range(0.5..0.95) * 10.0).round() / 10.0
                };
                calls.push(ToolCallRecord {
                    tool_name: "profile_service".into(),
                    state: if partial.contains(&i) {
                        ToolCallState::Partial
                    } else {
                        ToolCallState::Success
                    },
                    latency_ms: latency,
                    timestamp: (stage * FM2_STAGE_LEN + i) as u64,
                    quality_signal: Some(quality[b]),
                });
            }
        }
    }

    Fm2Trace {
        calls,
        target_rho,
        stage_accuracy: FM2_ACCURACY,
    }
}

// ---------------------------------------------------------------------------
// fm1: cascade error
// ---------------------------------------------------------------------------

pub const FM1_STEP_NAMES: [&str; 5] = [
    "entity_resolution",
    "profile_fetch",
    "risk_scoring",
    "rule_engine",
    "output_formatter",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fm1Variant {
    Healthy,
    Low1,
    Low2,
    Multi,
}

impl Fm1Variant {
    pub const ALL: [Fm1Variant; 4] = [
        Fm1Variant::Healthy,
        Fm1Variant::Low1,
        Fm1Variant::Low2,
        Fm1Variant::Multi,
    ];

    pub fn confidences(self) -> [f64; 5] {
        match self {
            Fm1Variant::Healthy => [0.90, 0.91, 0.89, 0.92, 0.91],
            Fm1Variant::Low1 => [0.31, 0.87, 0.88, 0.90, 0.85],
            Fm1Variant::Low2 => [0.88, 0.28, 0.86, 0.91, 0.89],
            Fm1Variant::Multi => [0.30, 0.88, 0.29, 0.90, 0.88],
        }
    }
}

impl FromStr for Fm1Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Fm1Variant::Healthy),
            "low1" => Ok(Fm1Variant::Low1),
            "low2" => Ok(Fm1Variant::Low2),
            "multi" => Ok(Fm1Variant::Multi),
            _ => Err(EvalError::Unknown {
                kind: "fm1 variant",
                value: s.into(),
            }),
        }
    }
}

/// Ground-truth correctness attached to the step-1 failure variant.
pub const FM1_LOW1_GROUND_TRUTH: f64 = 0.41;

/// A 5-step pipeline with pinned confidences. Every step reports a passing
/// local validation (`quality_signal = 1.0`); only the confidence profile
/// differs between variants.
pub fn generate_fm1(variant: Fm1Variant) -> Vec<StepResult> {
    variant
        .confidences()
        .iter()
        .zip(FM1_STEP_NAMES)
        .enumerate()
        .map(|(i, (&c, name))| StepResult {
            step_index: i as u32 + 1,
            step_name: name.into(),
            confidence: c,
            quality_signal: Some(1.0),
            ground_truth: (variant == Fm1Variant::Low1 && i == FM1_STEP_NAMES.len() - 1)
                .then_some(FM1_LOW1_GROUND_TRUTH),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fm5: explanation decoupling
// ---------------------------------------------------------------------------

pub const VELOCITY: &str = "transaction_velocity";
pub const DEVICE_AGE: &str = "device_age_days";
pub const GEOGRAPHY: &str = "geography_risk_score";

pub const FM5_DEFAULT_NOISE: f64 = 0.02;
/// Claimed attribution magnitude by rank, before noise.
const FM5_CLAIMED_BY_RANK: [f64; 3] = [0.50, 0.30, 0.12];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fm5Variant {
    /// velocity > device > geography
    Causal,
    /// geography > velocity > device
    ProxyFirst,
    /// velocity > geography > device
    ProxySecond,
}

impl Fm5Variant {
    pub const ALL: [Fm5Variant; 3] = [
        Fm5Variant::Causal,
        Fm5Variant::ProxyFirst,
        Fm5Variant::ProxySecond,
    ];

    pub fn claimed_order(self) -> [&'static str; 3] {
        match self {
            Fm5Variant::Causal => [VELOCITY, DEVICE_AGE, GEOGRAPHY],
            Fm5Variant::ProxyFirst => [GEOGRAPHY, VELOCITY, DEVICE_AGE],
            Fm5Variant::ProxySecond => [VELOCITY, GEOGRAPHY, DEVICE_AGE],
        }
    }

    fn stream(self) -> u64 {
        match self {
            Fm5Variant::Causal => 0,
            Fm5Variant::ProxyFirst => 1,
            Fm5Variant::ProxySecond => 2,
        }
    }
}

impl FromStr for Fm5Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Fm5Variant::Causal),
            "proxy_first" => Ok(Fm5Variant::ProxyFirst),
            "proxy_second" => Ok(Fm5Variant::ProxySecond),
            _ => Err(EvalError::Unknown {
                kind: "fm5 variant",
                value: s.into(),
            }),
        }
    }
}

/// The risk model's decision function.
pub fn fm5_probe() -> LinearProbe {
    LinearProbe::new(
        [(VELOCITY, 0.55), (DEVICE_AGE, 0.35), (GEOGRAPHY, 0.05)],
        0.0,
    )
}

/// The scored transaction; identical in every variant.
pub fn fm5_inputs() -> BTreeMap<String, f64> {
    BTreeMap::from([
        (VELOCITY.to_string(), 0.82),
        (DEVICE_AGE.to_string(), 0.60),
        (GEOGRAPHY.to_string(), 0.72),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fm5Case {
    pub case: AttributionCase,
    pub probe: LinearProbe,
}

/// One attribution case for the fixed risk model. Claimed weights follow the
/// variant's ranking with uniform noise in `[-noise, noise]`; `noise` must stay
/// below half the gap between rank magnitudes so the ranking is preserved.
pub fn generate_fm5(variant: Fm5Variant, seed: u64, noise: f64) -> Fm5Case {
    let mut rng = rng_for(seed, variant.stream());
    let probe = fm5_probe();
    let inputs = fm5_inputs();
    let baseline: BTreeMap<String, f64> = inputs.keys().map(|k| (k.clone(), 0.0)).collect();

    let mut claimed: Vec<f64> = FM5_CLAIMED_BY_RANK
        .iter()
        .map(|w| {
            let jitter = if noise > 0.0 {
                rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            ((w + jitter) * 1e4).round() / 1e4
        })
        .collect();
    claimed.sort_by(|a, b| b.total_cmp(a));

    let decision = probe
        .predict(&inputs)
        .expect("inputs cover every probe feature");
    let mut case = AttributionCase::new(
        variant
            .claimed_order()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        claimed,
        decision,
    );
    case.feature_values = Some(inputs);
    case.baseline_values = Some(baseline);
    case.probe = Some(probe.clone());
    Fm5Case { case, probe }
}
