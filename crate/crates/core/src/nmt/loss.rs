//! Softmax variants and the candidate-smoothed training loss.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::mine::ConstraintMask;
use crate::textproc::{Vocabulary, PAD};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Softmax renormalized over the masked ids; exactly zero elsewhere.
pub fn constrained_softmax(logits: &[f64], mask: &ConstraintMask) -> Vec<f64> {
    constrained_softmax_weighted(logits, mask, None)
}

/// Like [`constrained_softmax`], with each allowed id's exponent multiplied by
/// a non-negative weight. `None` means uniform weights.
pub fn constrained_softmax_weighted(logits: &[f64], mask: &ConstraintMask, weights: Option<&[f64]>) -> Vec<f64> {
    log_constrained_softmax_weighted(logits, mask, weights)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Log of [`constrained_softmax_weighted`]; disallowed ids get `-inf`.
pub fn log_constrained_softmax_weighted(logits: &[f64], mask: &ConstraintMask, weights: Option<&[f64]>) -> Vec<f64> {
    assert_eq!(logits.len(), mask.vocab_size(), "mask and logits disagree on vocabulary size");
    let shifted: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let w = weights.map_or(1.0, |w| w[i]);
            if mask.allows(i) && w > 0.0 {
                l + w.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return shifted;
    }
    let lse = max + shifted.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    shifted.into_iter().map(|l| l - lse).collect()
}

/// Target distribution of one position as sparse `(id, weight)` pairs.
/// Special tokens in the mask (EOS, UNK) are there so decoding can stop; they
/// are not candidate words and get no smoothing mass.
fn smoothing_target(gold: usize, mask: Option<&ConstraintMask>, alpha: f64) -> Vec<(usize, f64)> {
    let others: Vec<usize> = match mask {
        Some(m) if !m.is_fallback_full() => m.ids().filter(|&i| i != gold && !Vocabulary::is_special(i)).collect(),
        _ => Vec::new(),
    };
    if others.is_empty() {
        return vec![(gold, 1.0)];
    }
    let share = (1.0 - alpha) / others.len() as f64;
    let mut q = Vec::with_capacity(others.len() + 1);
    q.push((gold, alpha));
    q.extend(others.into_iter().map(|i| (i, share)));
    q
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Summed loss over non-PAD positions, the number of such positions, and the
/// gradient of the sum with respect to the logits (`p - q` per row).
pub(crate) fn loss_and_grad(
    logits: ArrayView2<f64>,
    gold: &[usize],
    mask: Option<&ConstraintMask>,
    alpha: f64,
) -> Result<(f64, usize, Array2<f64>)> {
    check_alpha(alpha)?;
    if logits.nrows() != gold.len() {
        return Err(Error::Dimension(format!("{} logit rows for {} gold tokens", logits.nrows(), gold.len())));
    }
    if let Some(m) = mask {
        if m.vocab_size() != logits.ncols() {
            return Err(Error::Dimension("mask and logits disagree on vocabulary size".into()));
        }
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    let mut count = 0;
    for ((row, &g), mut grow) in logits.rows().into_iter().zip(gold).zip(grad.rows_mut()) {
        if g == PAD {
            continue;
        }
        if g >= row.len() {
            return Err(Error::Dimension(format!("gold id {g} outside vocabulary")));
        }
        let row = row.to_vec();
        let logp = log_softmax(&row);
        for (o, lp) in grow.iter_mut().zip(&logp) {
            *o = lp.exp();
        }
        for (i, w) in smoothing_target(g, mask, alpha) {
            total -= w * logp[i];
            grow[i] -= w;
        }
        count += 1;
    }
    Ok((total, count, grad))
}

/// Mean candidate-smoothed loss over the non-PAD positions of one sequence.
///
/// Position `t` receives target mass `alpha` on `gold[t]` and `(1 - alpha)`
/// spread evenly over the other non-special ids in `mask`. Without a usable
/// mask (absent, full fallback, or no candidate besides the gold id) this is
/// cross-entropy.
pub fn candidate_smoothed_loss(
    logits: ArrayView2<f64>,
    gold: &[usize],
    mask: Option<&ConstraintMask>,
    alpha: f64,
) -> Result<f64> {
    let (sum, n, _) = loss_and_grad(logits, gold, mask, alpha)?;
    if n == 0 {
        return Err(Error::EmptyInput("non-PAD target positions"));
    }
    Ok(sum / n as f64)
}
