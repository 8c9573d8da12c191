use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

/// Clipped matches and hypothesis n-gram totals for n = 1..=4, plus the
/// hypothesis and reference lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of_pair<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R]) -> Self {
        let mut s = Self {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    fn add(&mut self, o: &Self) {
        for i in 0..4 {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU-4 in `[0, 100]`. A zero count at n >= 2 is replaced by add-one
    /// smoothing `(m + 1) / (t + 1)`; zero unigram matches give 0.
    pub fn score(&self) -> f64 {
        if self.matches[0] == 0 || self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_p = 0.0;
        for n in 0..4 {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            log_p += if n > 0 && self.matches[n] == 0 { ((m + 1.0) / (t + 1.0)).ln() } else { (m / t).ln() };
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        100.0 * bp * (log_p / 4.0).exp()
    }
}

/// Corpus-level BLEU-4 of tokenized hypotheses against one reference each.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<R>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("BLEU corpus"));
    }
    let mut total = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&BleuStats::of_pair(h, r));
    }
    Ok(total.score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_100() {
        let c = vec![w("a b c d e"), w("x y"), w("p")];
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn repeated_unigram_case() {
        let s = BleuStats::of_pair(&w("the the the the"), &w("the cat sat"));
        assert_eq!(s.matches, [1, 0, 0, 0]);
        assert_eq!(s.totals, [4, 3, 2, 1]);
        let want = 100.0 * (1.0f64 / 4.0 * 1.0 / 4.0 * 1.0 / 3.0 * 1.0 / 2.0).powf(0.25);
        assert!((s.score() - want).abs() < 1e-9);
        assert!((s.score() - 31.95).abs() < 0.01);
    }

    #[test]
    fn brevity_and_empty_cases() {
        assert_eq!(bleu(&[w("zz")], &[w("a b")]).unwrap(), 0.0);
        assert_eq!(bleu(&[Vec::<String>::new()], &[w("a")]).unwrap(), 0.0);
        // all precisions are 1 (trigrams and 4-grams via add-one on 0/0),
        // leaving only the brevity penalty exp(1 - 4/2)
        let short = bleu(&[w("a b")], &[w("a b c d")]).unwrap();
        assert!((short - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert!(bleu::<String, String>(&[], &[]).is_err());
        assert!(bleu(&[w("a")], &[w("a"), w("b")]).is_err());
    }

    #[test]
    fn corpus_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.gen_range(1..8)).map(|_| format!("t{}", rng.gen_range(0..6))).collect()
        };
        let mut pairs: Vec<(Vec<String>, Vec<String>)> = (0..30).map(|_| (sent(&mut rng), sent(&mut rng))).collect();
        let score = |p: &[(Vec<String>, Vec<String>)]| {
            let (h, r): (Vec<_>, Vec<_>) = p.iter().cloned().unzip();
            bleu(&h, &r).unwrap()
        };
        let a = score(&pairs);
        pairs.shuffle(&mut rng);
        assert!((a - score(&pairs)).abs() < 1e-9);
    }
}
