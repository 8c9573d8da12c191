//! Greedy and beam-search decoding, optionally restricted to a constraint mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::ConstraintMask;
use crate::nmt::loss::{log_constrained_softmax_weighted, log_softmax};
use crate::nmt::params::TransformerParams;
use crate::textproc::{BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Most output tokens before EOS is forced; also capped by the model's `max_len`.
    pub max_len: usize,
    pub constraint_in_inference: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            length_penalty: 0.6,
            max_len: 20,
            constraint_in_inference: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument("beam_size and max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A finished translation. `tokens` excludes the final EOS; `length` counts it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    /// EOS was appended because `max_len` was reached, contributing no probability.
    pub forced_eos: bool,
}

impl Hypothesis {
    pub fn length(&self) -> usize {
        self.tokens.len() + 1
    }
}

/// `((5 + len) / 6) ^ exponent`
pub fn length_penalty(len: usize, exponent: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(exponent)
}

fn finish(tokens: Vec<usize>, log_prob: f64, forced_eos: bool, exponent: f64) -> Hypothesis {
    let score = log_prob / length_penalty(tokens.len() + 1, exponent);
    Hypothesis {
        tokens,
        log_prob,
        score,
        forced_eos,
    }
}

/// Per-step log-distribution. PAD and BOS are never produced.
fn step_log_probs(logits: &[f64], mask: Option<&ConstraintMask>, weights: Option<&[f64]>) -> Vec<f64> {
    let mut lp = match mask {
        Some(m) => log_constrained_softmax_weighted(logits, m, weights),
        None => log_softmax(logits),
    };
    lp[PAD] = f64::NEG_INFINITY;
    lp[BOS] = f64::NEG_INFINITY;
    lp
}

fn active_mask<'a>(config: &DecodeConfig, mask: Option<&'a ConstraintMask>) -> Option<&'a ConstraintMask> {
    mask.filter(|m| config.constraint_in_inference && !m.is_fallback_full())
}

/// Stepwise argmax decoding.
pub fn greedy_decode(
    params: &TransformerParams,
    src: &[usize],
    config: &DecodeConfig,
    mask: Option<&ConstraintMask>,
) -> Result<Hypothesis> {
    config.validate()?;
    let mask = active_mask(config, mask);
    let limit = config.max_len.min(params.config.max_len);
    let enc = params.encode(&[src])?;
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    while prefix.len() <= limit {
        let logits = params.next_token_logits(&enc, &[&prefix])?;
        let lp = step_log_probs(logits.row(0).as_slice().expect("row-major"), mask, None);
        let best = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
        log_prob += lp[best];
        if best == EOS {
            return Ok(finish(prefix[1..].to_vec(), log_prob, false, config.length_penalty));
        }
        prefix.push(best);
    }
    Ok(finish(prefix[1..].to_vec(), log_prob, true, config.length_penalty))
}

pub fn beam_search(
    params: &TransformerParams,
    src: &[usize],
    config: &DecodeConfig,
    mask: Option<&ConstraintMask>,
) -> Result<Hypothesis> {
    beam_search_weighted(params, src, config, mask, None)
}

/// Beam search. Each step keeps the `beam_size` best extensions of all live
/// prefixes by cumulative log-probability; extensions ending in EOS leave the
/// beam as finished hypotheses. The result is the finished hypothesis with
/// the best length-normalized score. `weights` scales the unnormalized
/// probability of each vocabulary id inside the mask.
pub fn beam_search_weighted(
    params: &TransformerParams,
    src: &[usize],
    config: &DecodeConfig,
    mask: Option<&ConstraintMask>,
    weights: Option<&[f64]>,
) -> Result<Hypothesis> {
    config.validate()?;
    if src.is_empty() {
        return Err(Error::EmptyInput("source sentence"));
    }
    let mask = active_mask(config, mask);
    let limit = config.max_len.min(params.config.max_len);
    let enc = params.encode(&[src])?;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        if live[0].0.len() > limit {
            finished.extend(
                live.drain(..)
                    .map(|(p, lp)| finish(p[1..].to_vec(), lp, true, config.length_penalty)),
            );
            break;
        }
        let prefixes: Vec<&[usize]> = live.iter().map(|(p, _)| p.as_slice()).collect();
        let logits = params.next_token_logits(&enc, &prefixes)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, (_, base)) in live.iter().enumerate() {
            let lp = step_log_probs(logits.row(b).as_slice().expect("row-major"), mask, weights);
            cands.extend(
                lp.iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_finite())
                    .map(|(tok, v)| (base + v, b, tok)),
            );
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        cands.truncate(config.beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (lp, b, tok) in cands {
            let prefix = &live[b].0;
            if tok == EOS {
                finished.push(finish(prefix[1..].to_vec(), lp, false, config.length_penalty));
            } else {
                let mut p = prefix.clone();
                p.push(tok);
                next.push((p, lp));
            }
        }
        live = next;
    }
    finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .ok_or(Error::EmptyInput("beam produced no hypothesis"))
}
