//! Lexical translation probabilities by IBM Model 1 EM, Viterbi alignment and
//! per-word candidate extraction.
//!
//! The translation table `t(y|x)` gives, for every source word `x` (plus the
//! artificial [`NULL_TOKEN`]), a distribution over target words. Training
//! follows the textbook Model 1 recipe: every source sentence gets a NULL word
//! prepended, the table starts uniform at `1/|V_tgt|`, and each iteration
//! collects expected link counts (E-step) and renormalises them per source
//! word (M-step).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_file, open_file, SentencePair};

/// Source-side token every target word may align to.
pub const NULL_TOKEN: &str = "<null>";

/// Probability used for unseen (source, target) pairs during Viterbi search.
pub const UNKNOWN_PROB_FLOOR: f64 = 1e-12;

/// `t(y|x)` for every source word `x`; each row sums to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TranslationTable {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TranslationTable {
    pub fn from_rows(rows: BTreeMap<String, BTreeMap<String, f64>>) -> Self {
        Self { rows }
    }

    pub fn prob(&self, source: &str, target: &str) -> Option<f64> {
        self.rows.get(source)?.get(target).copied()
    }

    pub fn row(&self, source: &str) -> Option<&BTreeMap<String, f64>> {
        self.rows.get(source)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, f64>)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Source words, excluding [`NULL_TOKEN`].
    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str).filter(|w| *w != NULL_TOKEN)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// TSV `source<TAB>target<TAB>prob`, sorted by source then descending probability.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for (src, row) in &self.rows {
            let mut entries: Vec<(&String, &f64)> = row.iter().collect();
            entries.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
            for (tgt, p) in entries {
                writeln!(out, "{src}\t{tgt}\t{p}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let prob = match parts.as_slice() {
                [_, _, p] => p.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p)),
                _ => None,
            };
            let Some(prob) = prob else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected `source<TAB>target<TAB>prob` with prob in [0,1]".into(),
                });
            };
            rows.entry(parts[0].to_string())
                .or_default()
                .insert(parts[1].to_string(), prob);
        }
        Ok(Self { rows })
    }
}

/// Result of an EM run: the final table plus the corpus log-likelihood seen by
/// every E-step and, last, under the final table.
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub table: TranslationTable,
    pub log_likelihood: Vec<f64>,
}

/// Interned EM state: one sparse row per source id (id 0 is NULL).
struct SparseTable {
    targets: Vec<Vec<u32>>,
    probs: Vec<Vec<f64>>,
}

impl SparseTable {
    fn slot(&self, src: u32, tgt: u32) -> usize {
        self.targets[src as usize]
            .binary_search(&tgt)
            .expect("co-occurrence was registered")
    }
}

fn intern<'a>(ids: &mut HashMap<&'a str, u32>, names: &mut Vec<&'a str>, w: &'a str) -> u32 {
    *ids.entry(w).or_insert_with(|| {
        names.push(w);
        (names.len() - 1) as u32
    })
}

/// IBM Model 1 EM. See [`train_ibm1_traced`] for the likelihood trace.
pub fn train_ibm1(bitext: &[SentencePair], iterations: usize) -> Result<TranslationTable> {
    train_ibm1_traced(bitext, iterations).map(|t| t.table)
}

pub fn train_ibm1_traced(bitext: &[SentencePair], iterations: usize) -> Result<EmTrace> {
    if bitext.is_empty() {
        return Err(Error::EmptyInput("bitext"));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("EM needs at least one iteration".into()));
    }

    let mut src_ids: HashMap<&str, u32> = HashMap::new();
    let mut src_names: Vec<&str> = Vec::new();
    let mut tgt_ids: HashMap<&str, u32> = HashMap::new();
    let mut tgt_names: Vec<&str> = Vec::new();
    intern(&mut src_ids, &mut src_names, NULL_TOKEN);

    let mut sentences: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(bitext.len());
    for pair in bitext {
        let mut src = vec![0u32];
        src.extend(pair.source.iter().map(|w| intern(&mut src_ids, &mut src_names, w)));
        let tgt: Vec<u32> = pair
            .target
            .iter()
            .map(|w| intern(&mut tgt_ids, &mut tgt_names, w))
            .collect();
        sentences.push((src, tgt));
    }
    if tgt_names.is_empty() {
        return Err(Error::EmptyInput("bitext target side"));
    }

    let mut targets: Vec<Vec<u32>> = vec![Vec::new(); src_names.len()];
    for (src, tgt) in &sentences {
        for &s in src {
            targets[s as usize].extend_from_slice(tgt);
        }
    }
    for row in &mut targets {
        row.sort_unstable();
        row.dedup();
    }
    let uniform = 1.0 / tgt_names.len() as f64;
    let probs = targets.iter().map(|r| vec![uniform; r.len()]).collect();
    let mut table = SparseTable { targets, probs };

    // slot indices per sentence, resolved once
    let slots: Vec<Vec<Vec<usize>>> = sentences
        .iter()
        .map(|(src, tgt)| {
            tgt.iter()
                .map(|&t| src.iter().map(|&s| table.slot(s, t)).collect())
                .collect()
        })
        .collect();

    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let mut counts: Vec<Vec<f64>> = table.probs.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut ll = 0.0;
        for ((src, _), sent_slots) in sentences.iter().zip(&slots) {
            let norm = (src.len() as f64).ln();
            for j_slots in sent_slots {
                let denom: f64 = src
                    .iter()
                    .zip(j_slots)
                    .map(|(&s, &k)| table.probs[s as usize][k])
                    .sum();
                ll += denom.ln() - norm;
                for (&s, &k) in src.iter().zip(j_slots) {
                    counts[s as usize][k] += table.probs[s as usize][k] / denom;
                }
            }
        }
        log_likelihood.push(ll);
        for (row, count) in table.probs.iter_mut().zip(counts) {
            let total: f64 = count.iter().sum();
            if total > 0.0 {
                for (p, c) in row.iter_mut().zip(count) {
                    *p = c / total;
                }
            }
        }
    }

    let mut final_ll = 0.0;
    for ((src, _), sent_slots) in sentences.iter().zip(&slots) {
        let norm = (src.len() as f64).ln();
        for j_slots in sent_slots {
            let denom: f64 = src
                .iter()
                .zip(j_slots)
                .map(|(&s, &k)| table.probs[s as usize][k])
                .sum();
            final_ll += denom.ln() - norm;
        }
    }
    log_likelihood.push(final_ll);

    let mut rows = BTreeMap::new();
    for (s, name) in src_names.iter().enumerate() {
        let row: BTreeMap<String, f64> = table.targets[s]
            .iter()
            .zip(&table.probs[s])
            .filter(|(_, &p)| p > 0.0)
            .map(|(&t, &p)| (tgt_names[t as usize].to_string(), p))
            .collect();
        if !row.is_empty() {
            rows.insert(name.to_string(), row);
        }
    }
    Ok(EmTrace {
        table: TranslationTable { rows },
        log_likelihood,
    })
}

/// One alignment link; `source == None` means the target word aligns to NULL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub source: Option<usize>,
    pub target: usize,
}

/// Exactly one link per target position.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub links: Vec<Link>,
}

/// Best Model 1 alignment: each target word independently picks the source
/// word (or NULL) with the highest `t(y|x)`. NULL comes first in the search
/// order, so it wins ties, then lower source positions.
pub fn viterbi_align(table: &TranslationTable, pair: &SentencePair) -> Alignment {
    let lookup = |s: &str, t: &str| table.prob(s, t).unwrap_or(UNKNOWN_PROB_FLOOR);
    let links = pair
        .target
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let mut best = (None, lookup(NULL_TOKEN, y));
            for (i, x) in pair.source.iter().enumerate() {
                let p = lookup(x, y);
                if p > best.1 {
                    best = (Some(i), p);
                }
            }
            Link {
                source: best.0,
                target: j,
            }
        })
        .collect();
    Alignment { links }
}

/// Alignment-derived translation candidates for one source word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source_word: String,
    /// `(target word, t(y|x))`, descending probability, ties by target word.
    pub candidates: Vec<(String, f64)>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|(t, _)| t.as_str())
    }
}

/// Targets with `t(y|x) >= p_min` (and non-zero), truncated to the `k_max`
/// most probable. Unseen words yield an empty set.
pub fn extract_candidates(
    table: &TranslationTable,
    source_word: &str,
    k_max: usize,
    p_min: f64,
) -> Result<CandidateSet> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&p_min) {
        return Err(Error::InvalidArgument(format!("p_min must lie in [0,1), got {p_min}")));
    }
    let mut candidates: Vec<(String, f64)> = match table.row(source_word) {
        Some(row) if source_word != NULL_TOKEN => row
            .iter()
            .filter(|(_, &p)| p > 0.0 && p >= p_min)
            .map(|(t, &p)| (t.clone(), p))
            .collect(),
        _ => Vec::new(),
    };
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    candidates.truncate(k_max);
    Ok(CandidateSet {
        source_word: source_word.to_string(),
        candidates,
    })
}
