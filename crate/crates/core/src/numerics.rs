//! Shared statistics: normalised entropy, Pearson and Spearman correlation,
//! cosine similarity, nearest-rank percentiles.

use std::ops::Deref;

use crate::error::{EvalError, Result};

/// A finite-valued series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f64>);

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EvalError::undefined(format!(
                "series contains non-finite value {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Series {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Shannon entropy of `counts` normalised by `ln K`, where `K = counts.len()`.
///
/// Zero counts contribute nothing; `K = 1` yields 0.
pub fn normalized_entropy(counts: &[u64]) -> Result<f64> {
    let k = counts.len();
    if k == 0 {
        return Err(EvalError::undefined("entropy over zero categories"));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(EvalError::undefined("entropy of an empty window"));
    }
    if k == 1 {
        return Ok(0.0);
    }
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok((h / (k as f64).ln()).clamp(0.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::undefined(format!(
            "correlation of series with different lengths ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(EvalError::undefined("correlation needs at least 2 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::undefined(
            "correlation input contains non-finite values",
        ));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Product-moment correlation. A zero-variance input yields 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean((i+1)..=(j+1))
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(EvalError::undefined(format!(
            "cosine of vectors with different dimensions ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(EvalError::undefined("cosine of empty vectors"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    if uu == 0.0 || vv == 0.0 {
        return Err(EvalError::undefined("cosine with a zero-norm vector"));
    }
    if !dot.is_finite() || !uu.is_finite() || !vv.is_finite() {
        return Err(EvalError::undefined(
            "cosine input contains non-finite values",
        ));
    }
    // sqrt(uu * vv) is exact for u == v, so self-similarity is exactly 1
    let mut denom = (uu * vv).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        denom = uu.sqrt() * vv.sqrt();
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EvalError::undefined("percentile of an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
