use std::collections::BTreeMap;

use evalgate_core::cascade::evaluate_cascade;
use evalgate_core::consistency::consistency_score;
use evalgate_core::distribution::DistributionWindow;
use evalgate_core::explanation::{attribution_consistency, decoupling_flag, evaluate_explanation};
use evalgate_core::numerics::normalized_entropy;
use evalgate_core::reliability::{partial_response_rate, tool_reliability_score};
use evalgate_core::{
    AttributionCase, EvalConfig, HashingEmbedder, LinearProbe, OutputEvent, RequestPair,
    StepResult, ToolCallRecord, ToolCallState,
};
use proptest::prelude::*;

fn steps(confidences: &[f64]) -> Vec<StepResult> {
    confidences
        .iter()
        .enumerate()
        .map(|(i, &c)| StepResult::new(i as u32 + 1, format!("step-{i}"), c))
        .collect()
}

fn first_failure(c: &[f64], tau: f64) -> Option<usize> {
    c[..c.len() - 1]
        .iter()
        .position(|&v| v < tau)
        .map(|i| i + 1)
}

fn call(state: ToolCallState, t: u64) -> ToolCallRecord {
    ToolCallRecord {
        tool_name: "svc".into(),
        state,
        latency_ms: 10.0,
        timestamp: t,
        quality_signal: None,
    }
}

fn state_strategy() -> impl Strategy<Value = ToolCallState> {
    prop_oneof![
        Just(ToolCallState::Success),
        Just(ToolCallState::Partial),
        Just(ToolCallState::Failed),
    ]
}

fn event(category: usize, t: u64) -> OutputEvent {
    OutputEvent {
        category: format!("c{category}"),
        session_id: "s".into(),
        timestamp: t,
        quality_signal: None,
    }
}

proptest! {
    #[test]
    fn cascade_healthy_pipeline_has_no_penalty(c in prop::collection::vec(0.5f64..=1.0, 2..12)) {
        let cfg = EvalConfig::default();
        let r = evaluate_cascade(&steps(&c), &cfg).unwrap();
        prop_assert!(!r.propagation_failure);
        prop_assert_eq!(r.failure_index, None);
        prop_assert_eq!(r.cis, 0.0);
        prop_assert_eq!(r.score, r.mean_confidence);
    }

    #[test]
    fn cascade_failure_index_is_first_qualifying_step(
        c in prop::collection::vec(0.0f64..=1.0, 2..12),
        tau in 0.05f64..0.95,
    ) {
        let cfg = EvalConfig { tau_u: tau, ..EvalConfig::default() };
        let r = evaluate_cascade(&steps(&c), &cfg).unwrap();
        prop_assert_eq!(r.failure_index, first_failure(&c, tau));
        prop_assert_eq!(r.propagation_failure, r.failure_index.is_some());
        prop_assert!(r.score <= r.mean_confidence);
        prop_assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn cascade_inserting_a_weak_step_moves_failure_left(
        c in prop::collection::vec(0.0f64..=1.0, 2..12),
        weak in 0.0f64..0.49,
        at in 0usize..12,
    ) {
        let cfg = EvalConfig::default();
        let before = evaluate_cascade(&steps(&c), &cfg).unwrap().failure_index;
        let limit = before.map_or(c.len() - 1, |i| i - 1);
        let pos = at % (limit + 1);
        let mut longer = c.clone();
        longer.insert(pos, weak);
        let after = evaluate_cascade(&steps(&longer), &cfg).unwrap().failure_index;
        prop_assert_eq!(after, Some(pos + 1));
        if let Some(b) = before {
            prop_assert!(pos < b);
        }
    }

    #[test]
    fn cascade_cis_ignores_upstream_steps(
        upstream in prop::collection::vec(0.5f64..=1.0, 0..6),
        replacement in prop::collection::vec(0.5f64..=1.0, 6),
        fail in 0.0f64..0.5,
        other_fail in 0.0f64..0.5,
        downstream in prop::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        let cfg = EvalConfig::default();
        let build = |up: &[f64], f: f64| {
            let mut v = up.to_vec();
            v.push(f);
            v.extend(&downstream);
            v
        };
        let a = evaluate_cascade(&steps(&build(&upstream, fail)), &cfg).unwrap();
        let b = evaluate_cascade(&steps(&build(&replacement[..upstream.len()], other_fail)), &cfg).unwrap();
        prop_assert_eq!(a.failure_index, Some(upstream.len() + 1));
        prop_assert_eq!(a.failure_index, b.failure_index);
        prop_assert_eq!(a.cis, b.cis);
    }

    #[test]
    fn reliability_score_monotone_in_prr(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, rho in -1.0f64..=1.0) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(tool_reliability_score(hi, rho).unwrap() <= tool_reliability_score(lo, rho).unwrap());
    }

    #[test]
    fn reliability_score_monotone_in_rho(prr in 0.0f64..=1.0, r1 in -1.0f64..=1.0, r2 in -1.0f64..=1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let s_hi = tool_reliability_score(prr, hi).unwrap();
        prop_assert!(s_hi <= tool_reliability_score(prr, lo).unwrap());
        prop_assert!((0.0..=1.0).contains(&s_hi));
        let raw = 1.0 - prr * (1.0 + hi.max(0.0));
        prop_assert!((s_hi - raw.clamp(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn prr_of_concatenation_is_count_weighted(
        a in prop::collection::vec(state_strategy(), 1..80),
        b in prop::collection::vec(state_strategy(), 1..80),
    ) {
        let wa: Vec<_> = a.iter().enumerate().map(|(i, s)| call(*s, i as u64)).collect();
        let wb: Vec<_> = b.iter().enumerate().map(|(i, s)| call(*s, 1000 + i as u64)).collect();
        let joined: Vec<_> = wa.iter().chain(&wb).cloned().collect();
        let (na, nb) = (wa.len() as f64, wb.len() as f64);
        let weighted = (na * partial_response_rate(&wa).unwrap() + nb * partial_response_rate(&wb).unwrap()) / (na + nb);
        let whole = partial_response_rate(&joined).unwrap();
        prop_assert!((whole - weighted).abs() < 1e-12);
        let partials = joined.iter().filter(|c| c.state == ToolCallState::Partial).count();
        prop_assert_eq!(whole, partials as f64 / joined.len() as f64);
    }

    #[test]
    fn distribution_window_stays_consistent(
        cats in prop::collection::vec(0usize..15, 1..300),
        capacity in 1usize..120,
    ) {
        let mut w = DistributionWindow::new(capacity);
        for (t, c) in cats.iter().enumerate() {
            w.observe(event(*c, t as u64));
            prop_assert!(w.len() <= capacity);
            let mut recount: BTreeMap<String, u64> = BTreeMap::new();
            for e in w.events() {
                *recount.entry(e.category.clone()).or_default() += 1;
            }
            prop_assert_eq!(&recount, w.category_counts());
        }
    }

    #[test]
    fn distribution_signals_in_unit_interval(
        cats in prop::collection::vec(0usize..30, 1..200),
        k_top in 1usize..40,
        (alpha, beta) in (0.0f64..=1.0).prop_flat_map(|a| (Just(a), 0.0..=(1.0 - a))),
    ) {
        let gamma = (1.0 - alpha - beta).max(0.0);
        let cfg = EvalConfig { alpha, beta, gamma, k_top, ..EvalConfig::default() };
        let mut w = DistributionWindow::new(100);
        for (t, c) in cats.iter().enumerate() {
            w.observe(event(*c, t as u64));
        }
        let s = w.snapshot(&cfg).unwrap();
        for v in [s.entropy, s.diversity, s.repeat_rate, s.score] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let expected = alpha * s.entropy + beta * s.diversity + gamma * (1.0 - s.repeat_rate);
        prop_assert!((s.score - expected.clamp(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn merging_categories_never_raises_entropy_or_diversity(
        counts in prop::collection::vec(0u64..200, 2..25),
        i in 0usize..25,
        j in 0usize..25,
    ) {
        let k = counts.len();
        let (i, j) = (i % k, j % k);
        prop_assume!(i != j && counts.iter().any(|&c| c > 0));
        let mut merged = counts.clone();
        merged[j] += merged[i];
        merged[i] = 0;
        // over a fixed category universe
        let h = normalized_entropy(&counts).unwrap();
        let h_merged = normalized_entropy(&merged).unwrap();
        prop_assert!(h_merged <= h + 1e-12);
        let distinct = |c: &[u64]| c.iter().filter(|&&v| v > 0).count();
        prop_assert!(distinct(&merged) <= distinct(&counts));
    }

    #[test]
    fn acs_bounded_and_rescale_invariant(
        raw in prop::collection::vec(1u32..1000, 2..10),
        impacts in prop::collection::vec(0.0f64..1.0, 10),
        scale in 0.01f64..100.0,
    ) {
        let mut claimed: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 1000.0).collect();
        claimed.sort_by(|a, b| b.total_cmp(a));
        let impacts = &impacts[..claimed.len()];
        let acs = attribution_consistency(&claimed, impacts).unwrap();
        prop_assert!((0.0..=1.0).contains(&acs));
        let scaled: Vec<f64> = claimed.iter().map(|w| w * scale).collect();
        prop_assert_eq!(attribution_consistency(&scaled, impacts).unwrap(), acs);
    }

    #[test]
    fn causal_attribution_on_linear_probe_scores_one(
        raw in prop::collection::btree_set(1u32..200, 2..8),
    ) {
        let ints: Vec<u32> = raw.into_iter().rev().collect();
        let total: u32 = ints.iter().sum();
        let names: Vec<String> = (0..ints.len()).map(|i| format!("f{i}")).collect();
        let weights: Vec<f64> = ints.iter().map(|&v| f64::from(v) / f64::from(total)).collect();
        let probe = LinearProbe::new(names.iter().cloned().zip(weights.iter().copied()), 0.0);
        let inputs: BTreeMap<String, f64> = names.iter().map(|n| (n.clone(), 1.0)).collect();
        let baseline: BTreeMap<String, f64> = names.iter().map(|n| (n.clone(), 0.0)).collect();
        let case = AttributionCase::new(names.clone(), weights.clone(), 1.0);
        let r = evaluate_explanation(&probe, &case, &inputs, &baseline, &EvalConfig::default()).unwrap();
        prop_assert_eq!(r.acs, 1.0);
        prop_assert!(!r.decoupled);
    }

    #[test]
    fn low_agreement_alone_never_flags(acs in 0.0f64..=1.0, top in 0.05f64..=1.0) {
        prop_assert!(!decoupling_flag(acs, top, &EvalConfig::default()));
    }

    #[test]
    fn consistency_ignores_pair_order(
        (pairs, perm) in prop::collection::vec(
            (0usize..6, 0usize..6, prop::bool::ANY),
            1..20,
        ).prop_flat_map(|p| { let n = p.len(); (Just(p), Just((0..n).collect::<Vec<_>>()).prop_shuffle()) })
    ) {
        const TEXTS: [&str; 6] = [
            "can user 7 read bucket x",
            "is user 7 allowed to read bucket x",
            "revoke token for service a",
            "please revoke the service a token",
            "approve refund 42",
            "refund 42 approve now",
        ];
        let build = |(a, b, agree): &(usize, usize, bool)| RequestPair {
            text_a: TEXTS[*a].into(),
            text_b: TEXTS[*b].into(),
            decision_a: "allow".into(),
            decision_b: if *agree { "allow".into() } else { "deny".into() },
        };
        let original: Vec<RequestPair> = pairs.iter().map(build).collect();
        let shuffled: Vec<RequestPair> = perm.iter().map(|&i| original[i].clone()).collect();
        let cfg = EvalConfig::default();
        let e = HashingEmbedder::default();
        let a = consistency_score(&original, &e, &cfg).unwrap();
        let b = consistency_score(&shuffled, &e, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.score <= a.agreement_rate + 1e-12);
        prop_assert!(a.score <= a.mean_similarity + 1e-12);
        prop_assert_eq!(a.flagged, a.agreement_rate < cfg.theta_ar);
    }

    #[test]
    fn identical_texts_have_similarity_one(text in "[a-z0-9 ?,.]{1,80}") {
        let pair = RequestPair {
            text_a: text.clone(),
            text_b: text,
            decision_a: "allow".into(),
            decision_b: "allow".into(),
        };
        let r = consistency_score(&[pair], &HashingEmbedder::default(), &EvalConfig::default()).unwrap();
        prop_assert_eq!(r.mean_similarity, 1.0);
    }
}
