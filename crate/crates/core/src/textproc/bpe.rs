use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::textproc::TokenSequence;

/// Marker appended to the final symbol of every word.
pub const END_OF_WORD: &str = "</w>";

/// An ordered list of learned symbol merges. Earlier merges take priority.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: BTreeMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = BTreeMap::new();
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate merge `{} {}`",
                    pair.0, pair.1
                )));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Segments one word into subword symbols; the last carries [`END_OF_WORD`].
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            match best {
                Some(rank) => {
                    let (left, right) = &self.merges[rank];
                    symbols = merge_pair(&symbols, left, right);
                }
                None => return symbols,
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut merges = Vec::new();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: "expected `left right`".into(),
                    })
                }
            }
        }
        Self::from_merges(merges)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Greedy BPE learning over word-internal symbol pairs.
///
/// Each step merges the most frequent adjacent pair; equal counts go to the
/// lexicographically smallest pair. Learning stops early once no pair is left.
pub fn learn_bpe(corpus: &[TokenSequence], num_merges: usize) -> Result<BpeModel> {
    if corpus.iter().all(TokenSequence::is_empty) {
        return Err(Error::EmptyInput("BPE corpus"));
    }
    let mut freqs: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in corpus {
        for tok in seq.iter() {
            *freqs.entry(tok).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = freqs
        .into_iter()
        .map(|(w, f)| (initial_symbols(w), f))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, freq) in &words {
            for w in symbols.windows(2) {
                *counts.entry((&w[0], &w[1])).or_default() += freq;
            }
        }
        // BTreeMap iterates pairs in ascending order, so the first maximum wins ties.
        let Some((best, _)) = counts
            .into_iter()
            .fold(None, |acc: Option<((&str, &str), usize)>, (pair, c)| match acc {
                Some((_, best_c)) if best_c >= c => acc,
                _ => Some((pair, c)),
            })
        else {
            break;
        };
        let (left, right) = (best.0.to_string(), best.1.to_string());
        for (symbols, _) in words.iter_mut() {
            *symbols = merge_pair(symbols, &left, &right);
        }
        merges.push((left, right));
    }
    BpeModel::from_merges(merges)
}

/// Segments every word of `seq`.
///
/// Input that is already segmented (contains tokens ending in
/// [`END_OF_WORD`]) is first reassembled into words, which makes the
/// operation idempotent.
pub fn apply_bpe(model: &BpeModel, seq: &TokenSequence) -> TokenSequence {
    let mut out = Vec::with_capacity(seq.len());
    if seq.iter().any(|t| t.ends_with(END_OF_WORD)) {
        let mut pending = String::new();
        for tok in seq.iter() {
            match tok.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    pending.push_str(stem);
                    out.extend(model.segment_word(&pending));
                    pending.clear();
                }
                None => pending.push_str(tok),
            }
        }
        if !pending.is_empty() {
            out.extend(model.segment_word(&pending));
        }
    } else {
        for tok in seq.iter() {
            out.extend(model.segment_word(tok));
        }
    }
    TokenSequence::new(out, seq.lang)
}

/// Inverse of [`apply_bpe`]: joins subwords back into words.
pub fn merge_subwords(seq: &TokenSequence) -> TokenSequence {
    let mut out = Vec::new();
    let mut pending = String::new();
    for tok in seq.iter() {
        match tok.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                pending.push_str(stem);
                out.push(std::mem::take(&mut pending));
            }
            None => pending.push_str(tok),
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    TokenSequence::new(out, seq.lang)
}
