//! Ranking metrics and percentile-bootstrap intervals.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into blocks of equal score.
fn descending_blocks(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match blocks.last_mut() {
            Some(block) if scores[block[0]] == scores[i] => block.push(i),
            _ => blocks.push(vec![i]),
        }
    }
    blocks
}

/// Area under the ROC curve in Mann–Whitney form (ties count one half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("roc_auc needs positives and negatives".into()));
    }
    // Walk ascending so that `neg_below` counts negatives strictly below the block.
    let mut blocks = descending_blocks(scores);
    blocks.reverse();
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    for block in blocks {
        let p = block.iter().filter(|&&i| labels[i]).count() as u64;
        let q = block.len() as u64 - p;
        twice_wins += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok((twice_wins as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// Average precision; tied scores form one block sharing its precision.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::SingleClass("pr_auc needs at least one positive".into()));
    }
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for block in descending_blocks(scores) {
        let p = block.iter().filter(|&&i| labels[i]).count();
        tp += p;
        seen += block.len();
        if p > 0 {
            ap += (tp as f64 / seen as f64) * (p as f64 / n_pos as f64);
        }
    }
    Ok(ap)
}

/// Positive prevalence; the AUC-PR of a random scorer.
pub fn pr_baseline(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_resamples: 5000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

const MAX_REDRAWS: usize = 1000;

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over (score, label) pairs.
///
/// Resamples lacking a class are redrawn. Resample `r` draws from its own
/// substream, so the interval is independent of thread count.
pub fn bootstrap_ci<F>(scores: &[f64], labels: &[bool], metric: F, config: &BootstrapConfig) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &[bool]) -> Result<f64> + Sync,
{
    check_inputs(scores, labels)?;
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::SingleClass("bootstrap needs both classes".into()));
    }
    if config.n_resamples == 0 || !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument("bootstrap needs n_resamples > 0 and alpha in (0, 1)".into()));
    }
    let n = scores.len();
    let draws: Vec<(Option<f64>, usize)> = (0..config.n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(config.seed, r as u64);
            let mut s = vec![0.0; n];
            let mut y = vec![false; n];
            let mut failed = 0;
            while failed < MAX_REDRAWS {
                for j in 0..n {
                    let i = rng.gen_range(0..n);
                    s[j] = scores[i];
                    y[j] = labels[i];
                }
                let both = y.iter().any(|&v| v) && !y.iter().all(|&v| v);
                if both {
                    if let Ok(v) = metric(&s, &y) {
                        return (Some(v), failed);
                    }
                }
                failed += 1;
            }
            (None, failed)
        })
        .collect();
    let failed: usize = draws.iter().map(|d| d.1).sum();
    let attempts = failed + draws.iter().filter(|d| d.0.is_some()).count();
    if draws.iter().any(|d| d.0.is_none()) || 2 * failed > attempts {
        return Err(Error::MetricUndefined { failed, attempts });
    }
    let mut values: Vec<f64> = draws.into_iter().filter_map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&values, config.alpha / 2.0),
        quantile_sorted(&values, 1.0 - config.alpha / 2.0),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub auc_roc_ci: (f64, f64),
    pub auc_pr: f64,
    pub pr_baseline: f64,
    pub n_test: usize,
}

/// Held-out evaluation. The interval is widened to contain the point
/// estimate when the percentile bounds fall on one side of it.
pub fn evaluate(scores: &[f64], labels: &[bool], bootstrap: &BootstrapConfig) -> Result<EvalReport> {
    let auc_roc = roc_auc(scores, labels)?;
    let (lo, hi) = bootstrap_ci(scores, labels, roc_auc, bootstrap)?;
    Ok(EvalReport {
        auc_roc,
        auc_roc_ci: (lo.min(auc_roc), hi.max(auc_roc)),
        auc_pr: pr_auc(scores, labels)?,
        pr_baseline: pr_baseline(labels)?,
        n_test: labels.len(),
    })
}
