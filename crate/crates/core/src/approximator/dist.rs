//! Categorical distribution helpers over raw logits.

use rand::Rng;

use crate::world::ActionId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Sample,
    Argmax,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .map(|&lp| if lp.is_finite() { -lp.exp() * lp } else { 0.0 })
        .sum()
}

pub fn logprob_entropy(logits: &[f64], action: usize) -> (f64, f64) {
    let lp = log_softmax(logits);
    let h = lp
        .iter()
        .map(|&l| if l.is_finite() { -l.exp() * l } else { 0.0 })
        .sum();
    (lp[action], h)
}

/// Draws an action (or takes the argmax, lowest index on ties) and returns
/// it with its log-probability.
pub fn sample_action<R: Rng>(logits: &[f64], rng: &mut R, mode: SampleMode) -> Result<(ActionId, f64)> {
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("logits contain NaN".into()));
    }
    let lp = log_softmax(logits);
    let idx = match mode {
        SampleMode::Argmax => {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        }
        SampleMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = lp.len() - 1;
            for (i, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    Ok((ActionId(idx as u8), lp[idx]))
}
