//! Output distribution health over a sliding window of output events.
//!
//! Three signals are combined into one score:
//!
//! - normalised entropy of the window's category counts, with `K` the number
//!   of distinct categories present in the window;
//! - diversity, distinct categories divided by the number of events held;
//! - repeat rate, the largest single-category share among the most recent
//!   `min(n, k_top)` events.

use std::collections::{BTreeMap, VecDeque};

use crate::config::EvalConfig;
use crate::error::{EvalError, Result};
use crate::model::{clamp_unit, OutputEvent};
use crate::numerics::normalized_entropy;

#[derive(Debug, Clone)]
pub struct DistributionWindow {
    capacity: usize,
    events: VecDeque<OutputEvent>,
    counts: BTreeMap<String, u64>,
}

impl DistributionWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            events: VecDeque::with_capacity(capacity),
            counts: BTreeMap::new(),
        }
    }

    /// Append an event, evicting the oldest one once the window is full.
    pub fn observe(&mut self, event: OutputEvent) {
        if self.events.len() == self.capacity {
            if let Some(old) = self.events.pop_front() {
                if let Some(c) = self.counts.get_mut(&old.category) {
                    *c -= 1;
                    if *c == 0 {
                        self.counts.remove(&old.category);
                    }
                }
            }
        }
        *self.counts.entry(event.category.clone()).or_default() += 1;
        self.events.push_back(event);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.events.len() == self.capacity
    }

    pub fn category_counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn events(&self) -> impl Iterator<Item = &OutputEvent> {
        self.events.iter()
    }

    pub fn snapshot(&self, config: &EvalConfig) -> Result<DistributionSnapshot> {
        if self.events.is_empty() {
            return Err(EvalError::undefined("snapshot of an empty window"));
        }
        let n = self.events.len();
        let counts: Vec<u64> = self.counts.values().copied().collect();
        let entropy = normalized_entropy(&counts)?;
        let diversity = counts.len() as f64 / n as f64;

        let top = n.min(config.k_top);
        let mut recent: BTreeMap<&str, usize> = BTreeMap::new();
        for e in self.events.iter().skip(n - top) {
            *recent.entry(e.category.as_str()).or_default() += 1;
        }
        let repeat_rate = recent.values().copied().max().unwrap_or(0) as f64 / top as f64;

        let score = clamp_unit(
            config.alpha * entropy + config.beta * diversity + config.gamma * (1.0 - repeat_rate),
        );

        let qualities: Vec<f64> = self
            .events
            .iter()
            .filter_map(|e| e.quality_signal)
            .collect();
        let mean_quality = if qualities.is_empty() {
            None
        } else {
            Some(qualities.iter().sum::<f64>() / qualities.len() as f64)
        };

        Ok(DistributionSnapshot {
            entropy,
            diversity,
            repeat_rate,
            score,
            window_fill: n,
            distinct_categories: counts.len(),
            mean_quality,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSnapshot {
    pub entropy: f64,
    pub diversity: f64,
    pub repeat_rate: f64,
    pub score: f64,
    pub window_fill: usize,
    pub distinct_categories: usize,
    /// Mean quality signal of the window, carried so short-horizon health can
    /// be lined up against longer-horizon outcome series downstream.
    pub mean_quality: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(cat: &str, t: u64) -> OutputEvent {
        OutputEvent {
            category: cat.into(),
            session_id: "s".into(),
            timestamp: t,
            quality_signal: None,
        }
    }

    fn window_from(cats: &[String], capacity: usize) -> DistributionWindow {
        let mut w = DistributionWindow::new(capacity);
        for (i, c) in cats.iter().enumerate() {
            w.observe(ev(c, i as u64));
        }
        w
    }

    #[test]
    fn append_and_evict() {
        let mut w = DistributionWindow::new(100);
        w.observe(ev("a", 0));
        assert_eq!(w.len(), 1);
        for i in 1..=100 {
            w.observe(ev(&format!("c{}", i % 7), i));
        }
        assert_eq!(w.len(), 100);
        assert!(!w.category_counts().contains_key("a"));
        assert_eq!(w.category_counts().values().sum::<u64>(), 100);
    }

    #[test]
    fn twenty_categories_give_diversity_point_two() {
        let cats: Vec<String> = (0..100).map(|i| format!("c{}", i % 20)).collect();
        let s = window_from(&cats, 100)
            .snapshot(&EvalConfig::default())
            .unwrap();
        assert!((s.diversity - 0.2).abs() < 1e-12);
        assert!((s.entropy - 1.0).abs() < 1e-12);
        assert!((s.repeat_rate - 0.05).abs() < 1e-12);
    }

    #[test]
    fn diversity_counts_present_categories() {
        let cats: Vec<String> = (0..100).map(|i| format!("c{}", i % 8)).collect();
        let s = window_from(&cats, 100)
            .snapshot(&EvalConfig::default())
            .unwrap();
        assert!((s.diversity - 0.08).abs() < 1e-12);
        let cats: Vec<String> = (0..100).map(|i| format!("c{}", i % 3)).collect();
        let s = window_from(&cats, 100)
            .snapshot(&EvalConfig::default())
            .unwrap();
        assert!((s.diversity - 0.03).abs() < 1e-12);
    }

    #[test]
    fn repeat_rate_looks_at_most_recent_k_top() {
        let mut cats: Vec<String> = (0..80).map(|i| format!("c{}", i % 3)).collect();
        cats.extend(std::iter::repeat_n("c0".to_string(), 20));
        let s = window_from(&cats, 100)
            .snapshot(&EvalConfig::default())
            .unwrap();
        assert_eq!(s.repeat_rate, 1.0);
    }

    #[test]
    fn single_category_window() {
        let cats: Vec<String> = vec!["only".into(); 50];
        let cfg = EvalConfig::default();
        let s = window_from(&cats, 100).snapshot(&cfg).unwrap();
        assert_eq!(s.entropy, 0.0);
        assert!((s.diversity - 1.0 / 50.0).abs() < 1e-12);
        assert_eq!(s.repeat_rate, 1.0);
        assert!((s.score - cfg.beta / 50.0).abs() < 1e-12);
    }

    #[test]
    fn short_window_scopes_repeat_rate_to_fill() {
        let cats: Vec<String> = ["a", "a", "b", "c", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = window_from(&cats, 100)
            .snapshot(&EvalConfig::default())
            .unwrap();
        assert!((s.repeat_rate - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_error() {
        assert!(DistributionWindow::new(4)
            .snapshot(&EvalConfig::default())
            .is_err());
    }
}
