//! Click-conditioned TF-IDF re-ranking of alignment candidates.
//!
//! For a source word `x`, `D_x` is the set of documents users clicked after
//! issuing any query containing `x`. Each alignment candidate `y` of `x` is
//! scored inside `D_x` only:
//!
//! ```text
//! TF(y)  = N(y) / sum over candidates y' of N(y')
//! IDF(y) = ln(|D_x| / (G(y) + 1))
//! score  = TF(y) * IDF(y)
//! ```
//!
//! where `N(y)` counts occurrences of `y` in `D_x` and `G(y)` the documents of
//! `D_x` containing it. The `+1` is kept as is, so a candidate present in every
//! clicked document gets a slightly negative IDF. Candidates that never occur
//! in `D_x` score `-inf`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{extract_candidates, CandidateSet, TranslationTable};
use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::textproc::{tokenize, BpeModel, Lang, TokenSequence, Vocabulary, EOS, UNK};

/// A retrievable target-language document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: TokenSequence,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: TokenSequence) -> Self {
        Self {
            doc_id: doc_id.into(),
            text,
        }
    }
}

/// Documents with unique ids, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocumentCollection {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    doc_id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ClickLine {
    query: String,
    clicked: Vec<String>,
}

fn jsonl_error(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: e.to_string(),
    }
}

impl DocumentCollection {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(d.doc_id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// JSON-lines, one `{"doc_id": ..., "text": ...}` per line; text is tokenized.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut docs = Vec::new();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: DocumentLine = serde_json::from_str(&line).map_err(|e| jsonl_error(path, i + 1, e))?;
            docs.push(Document::new(d.doc_id, tokenize(&d.text, Lang::Target)));
        }
        Self::new(docs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for d in &self.docs {
            let line = DocumentLine {
                doc_id: d.doc_id.clone(),
                text: d.text.joined(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a DocumentCollection {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRecord {
    pub query: TokenSequence,
    pub clicked: Vec<String>,
}

/// Source-language queries and the documents clicked for them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
}

impl ClickLog {
    pub fn new(records: Vec<ClickRecord>) -> Self {
        Self { records }
    }

    /// Fails on the first clicked id missing from `docs`.
    pub fn validate(&self, docs: &DocumentCollection) -> Result<()> {
        for r in &self.records {
            if let Some(bad) = r.clicked.iter().find(|id| !docs.contains(id)) {
                return Err(Error::UnknownDocId(bad.clone()));
            }
        }
        Ok(())
    }

    /// JSON-lines, one `{"query": ..., "clicked": [...]}` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = Vec::new();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let c: ClickLine = serde_json::from_str(&line).map_err(|e| jsonl_error(path, i + 1, e))?;
            records.push(ClickRecord {
                query: tokenize(&c.query, Lang::Source),
                clicked: c.clicked,
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for r in &self.records {
            let line = ClickLine {
                query: r.query.joined(),
                clicked: r.clicked.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `D_x`: union of documents clicked for queries containing `source_word` as a
/// token, de-duplicated and ordered by doc id. Ids missing from `docs` are
/// ignored.
pub fn clicked_docs<'a>(log: &ClickLog, docs: &'a DocumentCollection, source_word: &str) -> Vec<&'a Document> {
    let ids: BTreeSet<&str> = log
        .records
        .iter()
        .filter(|r| r.query.contains(source_word))
        .flat_map(|r| r.clicked.iter().map(String::as_str))
        .collect();
    ids.into_iter().filter_map(|id| docs.get(id)).collect()
}

/// Word → clicked doc ids, built in one pass over the log.
struct ClickIndex<'a> {
    by_word: HashMap<&'a str, BTreeSet<&'a str>>,
}

impl<'a> ClickIndex<'a> {
    fn new(log: &'a ClickLog) -> Self {
        let mut by_word: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for r in &log.records {
            for w in r.query.iter() {
                by_word
                    .entry(w)
                    .or_default()
                    .extend(r.clicked.iter().map(String::as_str));
            }
        }
        Self { by_word }
    }

    fn docs<'d>(&self, docs: &'d DocumentCollection, word: &str) -> Vec<&'d Document> {
        self.by_word
            .get(word)
            .map(|ids| ids.iter().filter_map(|id| docs.get(id)).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub target: String,
    pub score: f64,
    /// Occurrences in the clicked documents.
    pub term_count: usize,
    /// Clicked documents containing the target.
    pub doc_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidates {
    pub source_word: String,
    /// Descending score, ties by target word; `-inf` entries at the tail.
    pub entries: Vec<ScoredEntry>,
    /// `G_Y`, the number of clicked documents.
    pub total_docs: usize,
    /// Set when no candidate occurs in any clicked document; entries then keep
    /// the alignment order with zero scores.
    pub all_unseen: bool,
}

impl ScoredCandidates {
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.target.as_str())
    }
}

/// Scores `cands` against the clicked documents `docs`.
pub fn score_tfidf(cands: &CandidateSet, docs: &[&Document]) -> Result<ScoredCandidates> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("clicked documents"));
    }
    let mut term_counts: HashMap<&str, usize> = cands.targets().map(|t| (t, 0)).collect();
    let mut doc_counts = term_counts.clone();
    for d in docs {
        let mut seen = BTreeSet::new();
        for tok in d.text.iter() {
            if let Some(n) = term_counts.get_mut(tok) {
                *n += 1;
                seen.insert(tok);
            }
        }
        for tok in seen {
            *doc_counts.get_mut(tok).unwrap() += 1;
        }
    }
    let total_docs = docs.len();
    let total_terms: usize = cands.targets().map(|t| term_counts[t]).sum();

    if total_terms == 0 {
        let entries = cands
            .targets()
            .map(|t| ScoredEntry {
                target: t.to_string(),
                score: 0.0,
                term_count: 0,
                doc_count: 0,
            })
            .collect();
        return Ok(ScoredCandidates {
            source_word: cands.source_word.clone(),
            entries,
            total_docs,
            all_unseen: true,
        });
    }

    let mut entries: Vec<ScoredEntry> = cands
        .targets()
        .map(|t| {
            let n = term_counts[t];
            let g = doc_counts[t];
            let score = if n == 0 {
                f64::NEG_INFINITY
            } else {
                let tf = n as f64 / total_terms as f64;
                let idf = (total_docs as f64 / (g as f64 + 1.0)).ln();
                tf * idf
            };
            ScoredEntry {
                target: t.to_string(),
                score,
                term_count: n,
                doc_count: g,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.target.cmp(&b.target)));
    Ok(ScoredCandidates {
        source_word: cands.source_word.clone(),
        entries,
        total_docs,
        all_unseen: false,
    })
}

/// Knobs for [`build_constraint_table`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Constraint size `M`.
    pub m: usize,
    /// Alignment pre-filter: at most this many candidates per word.
    pub k_max: usize,
    /// Alignment pre-filter: minimum `t(y|x)`.
    pub p_min: f64,
    /// Keep candidates absent from every clicked document (score `-inf`) at
    /// the tail of a row. Off by default: a translation never seen in the
    /// clicked documents is not a search-domain candidate.
    pub keep_unclicked: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            m: 10,
            k_max: 50,
            p_min: 0.01,
            keep_unclicked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub target: String,
    pub score: f64,
}

/// Top-`m` constraint candidates per source word.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintTable {
    pub m: usize,
    pub rows: BTreeMap<String, Vec<ConstraintEntry>>,
    /// Words ranked by alignment probability because their clicked documents
    /// were empty or contained none of the candidates. Their scores are
    /// alignment probabilities.
    pub fallback: BTreeSet<String>,
}

impl ConstraintTable {
    pub fn row(&self, source_word: &str) -> Option<&[ConstraintEntry]> {
        self.rows.get(source_word).map(Vec::as_slice)
    }

    pub fn targets<'a>(&'a self, source_word: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.rows
            .get(source_word)
            .into_iter()
            .flatten()
            .map(|e| e.target.as_str())
    }

    /// TSV `source<TAB>rank<TAB>target<TAB>score` with 1-based ranks. Leading
    /// `#m<TAB>M` and `#fallback<TAB>word` lines carry table metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        writeln!(out, "#m\t{}", self.m)?;
        for w in &self.fallback {
            writeln!(out, "#fallback\t{w}")?;
        }
        for (src, row) in &self.rows {
            for (rank, e) in row.iter().enumerate() {
                writeln!(out, "{src}\t{}\t{}\t{}", rank + 1, e.target, e.score)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |line: usize, msg: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut table = ConstraintTable::default();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.as_slice() {
                ["#m", m] => table.m = m.parse().map_err(|_| bad(i + 1, "bad #m value"))?,
                ["#fallback", w] => {
                    table.fallback.insert(w.to_string());
                }
                [src, rank, tgt, score] => {
                    let rank: usize = rank.parse().map_err(|_| bad(i + 1, "bad rank"))?;
                    let score: f64 = score.parse().map_err(|_| bad(i + 1, "bad score"))?;
                    let row = table.rows.entry(src.to_string()).or_default();
                    if rank != row.len() + 1 {
                        return Err(bad(i + 1, "ranks must be consecutive from 1"));
                    }
                    row.push(ConstraintEntry {
                        target: tgt.to_string(),
                        score,
                    });
                }
                _ => return Err(bad(i + 1, "expected `source<TAB>rank<TAB>target<TAB>score`")),
            }
        }
        if table.rows.values().any(|r| r.len() > table.m) {
            return Err(bad(0, "a row exceeds the declared constraint size"));
        }
        Ok(table)
    }
}

/// Runs alignment extraction, click lookup and TF-IDF scoring for every
/// source vocabulary word and keeps the top `config.m` targets.
pub fn build_constraint_table(
    vocab_src: &Vocabulary,
    table: &TranslationTable,
    log: &ClickLog,
    docs: &DocumentCollection,
    config: &MiningConfig,
) -> Result<ConstraintTable> {
    if config.m == 0 {
        return Err(Error::InvalidArgument("constraint size m must be at least 1".into()));
    }
    let index = ClickIndex::new(log);
    let mut out = ConstraintTable {
        m: config.m,
        ..Default::default()
    };
    for word in vocab_src.words() {
        let cands = extract_candidates(table, word, config.k_max, config.p_min)?;
        if cands.is_empty() {
            continue;
        }
        let clicked = index.docs(docs, word);
        let scored = if clicked.is_empty() {
            None
        } else {
            Some(score_tfidf(&cands, &clicked)?).filter(|s| !s.all_unseen)
        };
        let row: Vec<ConstraintEntry> = match scored {
            Some(s) => s
                .entries
                .into_iter()
                .filter(|e| config.keep_unclicked || e.score != f64::NEG_INFINITY)
                .take(config.m)
                .map(|e| ConstraintEntry {
                    target: e.target,
                    score: e.score,
                })
                .collect(),
            None => {
                out.fallback.insert(word.to_string());
                cands
                    .candidates
                    .into_iter()
                    .take(config.m)
                    .map(|(target, score)| ConstraintEntry { target, score })
                    .collect()
            }
        };
        out.rows.insert(word.to_string(), row);
    }
    Ok(out)
}

/// Per-query restriction over the target vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintMask {
    allowed: Vec<bool>,
    fallback_full: bool,
}

impl ConstraintMask {
    /// Every token allowed.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            allowed: vec![true; vocab_size],
            fallback_full: true,
        }
    }

    /// Exactly `ids` plus EOS.
    pub fn from_ids(vocab_size: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut allowed = vec![false; vocab_size];
        for i in ids {
            allowed[i] = true;
        }
        allowed[EOS] = true;
        Self {
            allowed,
            fallback_full: false,
        }
    }

    pub fn allows(&self, id: usize) -> bool {
        self.allowed[id]
    }

    pub fn is_fallback_full(&self) -> bool {
        self.fallback_full
    }

    pub fn vocab_size(&self) -> usize {
        self.allowed.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.allowed.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskOptions {
    /// Also allow UNK when the mask is not full.
    pub include_unk: bool,
}

/// Union of the table rows of all query tokens, plus EOS. Candidate words
/// are expanded into their subword ids when a BPE model is given; words
/// missing from the target vocabulary are skipped. An empty union yields the
/// full mask.
pub fn query_constraint_set(
    table: &ConstraintTable,
    query: &TokenSequence,
    vocab_tgt: &Vocabulary,
    bpe: Option<&BpeModel>,
    options: MaskOptions,
) -> ConstraintMask {
    let mut ids = BTreeSet::new();
    for word in query.iter() {
        for cand in table.targets(word) {
            match bpe {
                Some(model) => ids.extend(model.segment_word(cand).iter().filter_map(|p| vocab_tgt.get(p))),
                None => ids.extend(vocab_tgt.get(cand)),
            }
        }
    }
    if ids.is_empty() {
        return ConstraintMask::full(vocab_tgt.len());
    }
    if options.include_unk {
        ids.insert(UNK);
    }
    ConstraintMask::from_ids(vocab_tgt.len(), ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::learn_bpe;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, words: &str) -> Document {
        Document::new(id, TokenSequence::from_words(words.split_whitespace(), Lang::Target))
    }

    fn click(q: &str, ids: &[&str]) -> ClickRecord {
        ClickRecord {
            query: TokenSequence::from_words(q.split_whitespace(), Lang::Source),
            clicked: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn cands(word: &str, list: &[(&str, f64)]) -> CandidateSet {
        CandidateSet {
            source_word: word.into(),
            candidates: list.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
        }
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        assert!(matches!(
            DocumentCollection::new(vec![doc("a", "x"), doc("a", "y")]),
            Err(Error::DuplicateDocId(_))
        ));
    }

    #[test]
    fn click_log_validation() {
        let docs = DocumentCollection::new(vec![doc("d1", "x")]).unwrap();
        assert!(ClickLog::new(vec![click("q", &["d1"])]).validate(&docs).is_ok());
        assert!(matches!(
            ClickLog::new(vec![click("q", &["d9"])]).validate(&docs),
            Err(Error::UnknownDocId(id)) if id == "d9"
        ));
    }

    #[test]
    fn clicked_docs_union_and_absent_word() {
        let docs = DocumentCollection::new(vec![doc("d1", "a"), doc("d2", "b"), doc("d3", "c")]).unwrap();
        let log = ClickLog::new(vec![click("x y", &["d2", "d1"]), click("x z", &["d1", "d3"]), click("y", &["d3"])]);
        let ids: Vec<&str> = clicked_docs(&log, &docs, "x").iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3"]);
        assert!(clicked_docs(&log, &docs, "w").is_empty());
        // exact token match, not substring
        assert!(clicked_docs(&log, &docs, "xy").is_empty());
    }

    #[test]
    fn clicked_docs_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let docs = DocumentCollection::new((0..30).map(|i| doc(&format!("d{i:02}"), "w")).collect()).unwrap();
        for _ in 0..1000 {
            let records: Vec<ClickRecord> = (0..rng.gen_range(0..8))
                .map(|_| {
                    let q: Vec<String> = (0..rng.gen_range(1..4)).map(|_| format!("s{}", rng.gen_range(0..6))).collect();
                    let c: Vec<String> = (0..rng.gen_range(0..4)).map(|_| format!("d{:02}", rng.gen_range(0..30))).collect();
                    ClickRecord {
                        query: TokenSequence::from_words(q, Lang::Source),
                        clicked: c,
                    }
                })
                .collect();
            let log = ClickLog::new(records);
            let word = format!("s{}", rng.gen_range(0..6));
            // oracle: scan every doc, keep it if any record with the word clicked it
            let want: Vec<&str> = docs
                .iter()
                .filter(|d| {
                    log.records
                        .iter()
                        .any(|r| r.query.tokens.contains(&word) && r.clicked.contains(&d.doc_id))
                })
                .map(|d| d.doc_id.as_str())
                .collect();
            let got: Vec<&str> = clicked_docs(&log, &docs, &word).iter().map(|d| d.doc_id.as_str()).collect();
            assert_eq!(got, want);
            let idx: Vec<&str> = ClickIndex::new(&log).docs(&docs, &word).iter().map(|d| d.doc_id.as_str()).collect();
            assert_eq!(idx, want);
        }
    }

    #[test]
    fn worked_tfidf_example() {
        // G_Y = 10; u occurs 6 times in 4 docs, v twice in 1 doc
        let mut docs = vec![
            doc("d0", "u u u"),
            doc("d1", "u"),
            doc("d2", "u"),
            doc("d3", "u v v"),
        ];
        for i in 4..10 {
            docs.push(doc(&format!("d{i}"), "filler"));
        }
        let refs: Vec<&Document> = docs.iter().collect();
        let s = score_tfidf(&cands("x", &[("v", 0.6), ("u", 0.4)]), &refs).unwrap();
        assert_eq!(s.total_docs, 10);
        assert_eq!(s.entries[0].target, "u");
        let u = 0.75 * 2f64.ln();
        let v = 0.25 * 5f64.ln();
        assert!((s.entries[0].score - u).abs() < 1e-12);
        assert!((s.entries[1].score - v).abs() < 1e-12);
        assert!((u - 0.5199).abs() < 1e-4 && (v - 0.4024).abs() < 1e-4);
        assert_eq!((s.entries[0].term_count, s.entries[0].doc_count), (6, 4));
    }

    #[test]
    fn single_candidate_and_unseen_candidates() {
        let docs = [doc("a", "u w"), doc("b", "w"), doc("c", "w")];
        let refs: Vec<&Document> = docs.iter().collect();
        let s = score_tfidf(&cands("x", &[("u", 1.0), ("z", 0.5)]), &refs).unwrap();
        assert!((s.entries[0].score - (3.0f64 / 2.0).ln()).abs() < 1e-12);
        assert_eq!(s.entries[1].score, f64::NEG_INFINITY);

        let none = score_tfidf(&cands("x", &[("q", 0.6), ("p", 0.4)]), &refs).unwrap();
        assert!(none.all_unseen);
        assert_eq!(none.targets().collect::<Vec<_>>(), ["q", "p"]);
        assert!(none.entries.iter().all(|e| e.score == 0.0));

        assert!(score_tfidf(&cands("x", &[("u", 1.0)]), &[]).is_err());
    }

    #[test]
    fn term_in_every_doc_gets_negative_idf() {
        let docs = [doc("a", "u"), doc("b", "u")];
        let refs: Vec<&Document> = docs.iter().collect();
        let s = score_tfidf(&cands("x", &[("u", 1.0)]), &refs).unwrap();
        assert!((s.entries[0].score - (2.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    /// Direct evaluation of the three scoring formulas.
    fn oracle_scores(c: &CandidateSet, docs: &[&Document]) -> Vec<(String, f64)> {
        let n = |y: &str| docs.iter().map(|d| d.text.iter().filter(|t| *t == y).count()).sum::<usize>();
        let g = |y: &str| docs.iter().filter(|d| d.text.contains(y)).count();
        let denom: usize = c.targets().map(n).sum();
        c.targets()
            .map(|y| {
                let s = if n(y) == 0 {
                    f64::NEG_INFINITY
                } else {
                    (n(y) as f64 / denom as f64) * (docs.len() as f64 / (g(y) as f64 + 1.0)).ln()
                };
                (y.to_string(), s)
            })
            .collect()
    }

    #[test]
    fn tfidf_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let docs: Vec<Document> = (0..rng.gen_range(1..12))
                .map(|i| {
                    let words: Vec<String> = (0..rng.gen_range(1..10)).map(|_| format!("w{}", rng.gen_range(0..8))).collect();
                    Document::new(format!("d{i}"), TokenSequence::from_words(words, Lang::Target))
                })
                .collect();
            let refs: Vec<&Document> = docs.iter().collect();
            let mut targets: Vec<usize> = (0..10).collect();
            targets.shuffle(&mut rng);
            let c = CandidateSet {
                source_word: "x".into(),
                candidates: targets[..rng.gen_range(1..6)].iter().map(|t| (format!("w{t}"), 0.1)).collect(),
            };
            let got = score_tfidf(&c, &refs).unwrap();
            if got.all_unseen {
                continue;
            }
            for (y, want) in oracle_scores(&c, &refs) {
                let e = got.entries.iter().find(|e| e.target == y).unwrap();
                if want.is_finite() {
                    assert!((e.score - want).abs() < 1e-9);
                } else {
                    assert_eq!(e.score, want);
                }
            }
        }
    }

    #[test]
    fn ranking_is_invariant_to_log_base() {
        let docs = [doc("a", "u u v"), doc("b", "v w"), doc("c", "w"), doc("d", "z"), doc("e", "z")];
        let refs: Vec<&Document> = docs.iter().collect();
        let c = cands("x", &[("u", 0.3), ("v", 0.3), ("w", 0.4)]);
        let natural = score_tfidf(&c, &refs).unwrap();
        // rescoring with log2 multiplies each finite score by 1/ln 2
        let mut base2: Vec<(String, f64)> = oracle_scores(&c, &refs)
            .into_iter()
            .map(|(y, s)| (y, s / 2f64.ln()))
            .collect();
        base2.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let order: Vec<String> = base2.into_iter().map(|(y, _)| y).collect();
        assert_eq!(natural.targets().collect::<Vec<_>>(), order);
    }

    #[test]
    fn unclicked_documents_do_not_affect_scores() {
        let docs = DocumentCollection::new(vec![doc("d1", "u v"), doc("d2", "u"), doc("d3", "v v v")]).unwrap();
        let perturbed = DocumentCollection::new(vec![doc("d1", "u v"), doc("d2", "u"), doc("d3", "u u u u")]).unwrap();
        let log = ClickLog::new(vec![click("x", &["d1", "d2"])]);
        let c = cands("x", &[("u", 0.5), ("v", 0.5)]);
        let a = score_tfidf(&c, &clicked_docs(&log, &docs, "x")).unwrap();
        let b = score_tfidf(&c, &clicked_docs(&log, &perturbed, "x")).unwrap();
        assert_eq!(a, b);
    }

    fn world() -> (Vocabulary, TranslationTable, ClickLog, DocumentCollection) {
        let vocab = Vocabulary::from_tokens(["x", "y", "rare"]);
        let rows = [
            ("x", vec![("u", 0.5), ("v", 0.3), ("w", 0.2)]),
            ("y", vec![("p", 0.9), ("q", 0.1)]),
            ("rare", vec![("r", 0.8), ("s", 0.2)]),
        ];
        let table = TranslationTable::from_rows(
            rows.iter()
                .map(|(s, r)| (s.to_string(), r.iter().map(|(t, p)| (t.to_string(), *p)).collect()))
                .collect(),
        );
        let docs = DocumentCollection::new(vec![
            doc("d1", "w w u"),
            doc("d2", "w v"),
            doc("d3", "q"),
            doc("d4", "p q"),
            doc("d5", "nothing"),
        ])
        .unwrap();
        let log = ClickLog::new(vec![click("x", &["d1", "d2", "d5"]), click("y", &["d3", "d4"])]);
        (vocab, table, log, docs)
    }

    #[test]
    fn constraint_table_pipeline_and_fallback() {
        let (vocab, table, log, docs) = world();
        let cfg = MiningConfig { m: 2, k_max: 50, p_min: 0.0, ..Default::default() };
        let ct = build_constraint_table(&vocab, &table, &log, &docs, &cfg).unwrap();
        // composed oracle: extract -> clicked docs -> score -> top-m
        for word in ["x", "y"] {
            let c = extract_candidates(&table, word, 50, 0.0).unwrap();
            let s = score_tfidf(&c, &clicked_docs(&log, &docs, word)).unwrap();
            let want: Vec<&str> = s.targets().take(2).collect();
            assert_eq!(ct.targets(word).collect::<Vec<_>>(), want);
        }
        assert_eq!(ct.targets("rare").collect::<Vec<_>>(), ["r", "s"]);
        assert!(ct.fallback.contains("rare") && !ct.fallback.contains("x"));

        let one = build_constraint_table(&vocab, &table, &log, &docs, &MiningConfig { m: 1, ..cfg }).unwrap();
        assert!(one.rows.values().all(|r| r.len() == 1));
        let all = build_constraint_table(&vocab, &table, &log, &docs, &MiningConfig { m: 10, ..cfg }).unwrap();
        assert_eq!(all.row("x").unwrap().len(), 3);
        assert!(build_constraint_table(&vocab, &table, &log, &docs, &MiningConfig { m: 0, ..cfg }).is_err());
    }

    #[test]
    fn unclicked_candidates_leave_the_row_unless_kept() {
        let (vocab, _, log, docs) = world();
        let table = TranslationTable::from_rows(
            [("x".to_string(), [("u".to_string(), 0.3), ("general".to_string(), 0.7)].into())].into(),
        );
        let cfg = MiningConfig { m: 5, p_min: 0.0, ..Default::default() };
        let ct = build_constraint_table(&vocab, &table, &log, &docs, &cfg).unwrap();
        assert_eq!(ct.targets("x").collect::<Vec<_>>(), ["u"]);
        let kept = build_constraint_table(&vocab, &table, &log, &docs, &MiningConfig { keep_unclicked: true, ..cfg }).unwrap();
        assert_eq!(kept.targets("x").collect::<Vec<_>>(), ["u", "general"]);
        assert_eq!(kept.row("x").unwrap()[1].score, f64::NEG_INFINITY);
    }

    #[test]
    fn constraint_table_file_roundtrip() {
        let (vocab, table, log, docs) = world();
        let ct = build_constraint_table(&vocab, &table, &log, &docs, &MiningConfig { m: 3, k_max: 50, p_min: 0.0, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        ct.save(&path).unwrap();
        assert_eq!(ConstraintTable::load(&path).unwrap(), ct);
    }

    #[test]
    fn single_row_mask() {
        let mut ct = ConstraintTable { m: 2, ..Default::default() };
        ct.rows.insert(
            "x".into(),
            vec![
                ConstraintEntry { target: "u".into(), score: 1.0 },
                ConstraintEntry { target: "v".into(), score: 0.5 },
            ],
        );
        let vocab = Vocabulary::from_tokens(["u", "v", "w"]);
        let q = TokenSequence::from_words(["x"], Lang::Source);
        let mask = query_constraint_set(&ct, &q, &vocab, None, MaskOptions::default());
        assert_eq!(mask.ids().collect::<Vec<_>>(), vec![EOS, vocab.id("u"), vocab.id("v")]);
        assert!(!mask.is_fallback_full());

        let with_unk = query_constraint_set(&ct, &q, &vocab, None, MaskOptions { include_unk: true });
        assert!(with_unk.allows(UNK));

        let oov = TokenSequence::from_words(["nope", "nada"], Lang::Source);
        let full = query_constraint_set(&ct, &oov, &vocab, None, MaskOptions::default());
        assert!(full.is_fallback_full());
        assert_eq!(full.count(), vocab.len());
    }

    #[test]
    fn bpe_expands_candidates_into_subwords() {
        let mut ct = ConstraintTable { m: 1, ..Default::default() };
        ct.rows.insert("x".into(), vec![ConstraintEntry { target: "lower".into(), score: 1.0 }]);
        let bpe = learn_bpe(&[TokenSequence::from_words(["low", "low", "er"], Lang::Target)], 3).unwrap();
        let pieces = bpe.segment_word("lower");
        assert!(pieces.len() > 1);
        let vocab = Vocabulary::from_tokens(pieces.clone());
        let mask = query_constraint_set(&ct, &TokenSequence::from_words(["x"], Lang::Source), &vocab, Some(&bpe), MaskOptions::default());
        for p in &pieces {
            assert!(mask.allows(vocab.id(p)));
        }
    }

    proptest! {
        #[test]
        fn mask_is_union_of_rows(
            rows in proptest::collection::vec(proptest::collection::btree_set(0usize..12, 0..5), 5),
            query in proptest::collection::vec(0usize..7, 3),
        ) {
            let vocab = Vocabulary::from_tokens((0..12).map(|i| format!("t{i}")));
            let mut ct = ConstraintTable { m: 5, ..Default::default() };
            for (i, r) in rows.iter().enumerate() {
                ct.rows.insert(format!("s{i}"), r.iter().map(|t| ConstraintEntry { target: format!("t{t}"), score: 0.0 }).collect());
            }
            let q = TokenSequence::from_words(query.iter().map(|i| format!("s{i}")), Lang::Source);
            let mask = query_constraint_set(&ct, &q, &vocab, None, MaskOptions::default());
            // oracle: plain set union
            let mut union: BTreeSet<usize> = BTreeSet::new();
            for &i in &query {
                if i < rows.len() {
                    union.extend(rows[i].iter().map(|t| vocab.id(&format!("t{t}"))));
                }
            }
            if union.is_empty() {
                prop_assert!(mask.is_fallback_full());
            } else {
                union.insert(EOS);
                prop_assert_eq!(mask.ids().collect::<BTreeSet<_>>(), union);
            }
        }
    }
}
