//! Inverted index with BM25 ranking over the target-language collection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::mine::Document;
use crate::textproc::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Postings reference documents by their position in `doc_ids`, which is
/// sorted, so postings are sorted by doc id too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub params: Bm25Params,
    pub doc_ids: Vec<String>,
    pub doc_lengths: Vec<usize>,
    pub avg_doc_length: f64,
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_lengths[doc] as f64 / self.avg_doc_length;
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        serde_json::to_writer(&mut out, self)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(open_file(path.as_ref())?)?)
    }
}

pub fn build_index<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Result<InvertedIndex> {
    build_index_with(docs, Bm25Params::default())
}

pub fn build_index_with<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    params: Bm25Params,
) -> Result<InvertedIndex> {
    let mut sorted: Vec<&Document> = docs.into_iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(Error::DuplicateDocId(w[0].doc_id.clone()));
    }
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for (i, d) in sorted.iter().enumerate() {
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in d.text.iter() {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            postings.entry(t.to_string()).or_default().push((i as u32, n));
        }
    }
    let doc_lengths: Vec<usize> = sorted.iter().map(|d| d.text.len()).collect();
    let total: usize = doc_lengths.iter().sum();
    let avg_doc_length = if sorted.is_empty() {
        0.0
    } else {
        (total as f64 / sorted.len() as f64).max(f64::MIN_POSITIVE)
    };
    Ok(InvertedIndex {
        params,
        doc_ids: sorted.iter().map(|d| d.doc_id.clone()).collect(),
        doc_lengths,
        avg_doc_length,
        postings,
    })
}

/// Top `k` documents by BM25, descending score with ties by doc id. Repeated
/// query terms count once; unknown terms contribute nothing; documents that
/// match no term are not returned.
pub fn search(index: &InvertedIndex, query: &TokenSequence, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let terms: BTreeSet<&str> = query.iter().collect();
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for term in terms {
        let plist = index.postings(term);
        if plist.is_empty() {
            continue;
        }
        let idf = index.idf(plist.len());
        for &(doc, tf) in plist {
            *scores.entry(doc as usize).or_default() += idf * index.term_weight(tf, doc as usize);
        }
    }
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
    // doc indices follow doc id order, so the index is the tie-breaker
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked
        .into_iter()
        .map(|(i, s)| (index.doc_ids[i].clone(), s))
        .collect())
}

/// Doc ids of the union of postings, for callers that only need the match set.
pub fn matching_docs(index: &InvertedIndex, query: &TokenSequence) -> HashSet<String> {
    query
        .iter()
        .flat_map(|t| index.postings(t))
        .map(|&(d, _)| index.doc_ids[d as usize].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::Lang;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, words: &str) -> Document {
        Document::new(id, TokenSequence::from_words(words.split_whitespace(), Lang::Target))
    }

    fn q(words: &str) -> TokenSequence {
        TokenSequence::from_words(words.split_whitespace(), Lang::Target)
    }

    #[test]
    fn empty_collection() {
        let idx = build_index(&[]).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert!(search(&idx, &q("a"), 5).unwrap().is_empty());
    }

    #[test]
    fn postings_of_one_doc() {
        let docs = [doc("d", "a a b")];
        let idx = build_index(&docs).unwrap();
        assert_eq!(idx.postings("a"), &[(0, 2)]);
        assert_eq!(idx.postings("b"), &[(0, 1)]);
        assert_eq!(idx.doc_ids, ["d"]);
    }

    #[test]
    fn duplicates_and_bad_k() {
        assert!(matches!(build_index(&[doc("x", "a"), doc("x", "b")]), Err(Error::DuplicateDocId(_))));
        let idx = build_index(&[doc("x", "a")]).unwrap();
        assert!(search(&idx, &q("a"), 0).is_err());
    }

    #[test]
    fn oov_and_single_doc() {
        let idx = build_index(&[doc("only", "shoes")]).unwrap();
        assert!(search(&idx, &q("zzz qqq"), 3).unwrap().is_empty());
        let hits = search(&idx, &q("shoes"), 3).unwrap();
        assert_eq!(hits[0].0, "only");
    }

    fn random_docs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| {
                let words: Vec<String> = (0..rng.gen_range(1..15)).map(|_| format!("w{}", rng.gen_range(0..25))).collect();
                Document::new(format!("d{i:03}"), TokenSequence::from_words(words, Lang::Target))
            })
            .collect()
    }

    #[test]
    fn postings_match_brute_force_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let docs = random_docs(&mut rng, 100);
        let idx = build_index(&docs).unwrap();
        for term in (0..25).map(|i| format!("w{i}")) {
            let want: Vec<(String, u32)> = docs
                .iter()
                .map(|d| (d.doc_id.clone(), d.text.iter().filter(|t| *t == term).count() as u32))
                .filter(|(_, n)| *n > 0)
                .collect();
            let got: Vec<(String, u32)> = idx
                .postings(&term)
                .iter()
                .map(|&(i, n)| (idx.doc_ids[i as usize].clone(), n))
                .collect();
            assert_eq!(got, want);
        }
    }

    /// Scores every document directly from its text.
    fn brute_force(docs: &[Document], query: &TokenSequence, k: usize) -> Vec<(String, f64)> {
        let n = docs.len() as f64;
        let avg = docs.iter().map(|d| d.text.len()).sum::<usize>() as f64 / n;
        let terms: BTreeSet<&str> = query.iter().collect();
        let mut out: Vec<(String, f64)> = docs
            .iter()
            .filter_map(|d| {
                let mut s = 0.0;
                let mut hit = false;
                for t in &terms {
                    let tf = d.text.iter().filter(|x| x == t).count() as f64;
                    let df = docs.iter().filter(|e| e.text.contains(t)).count() as f64;
                    if tf > 0.0 {
                        hit = true;
                        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                        s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * d.text.len() as f64 / avg));
                    }
                }
                hit.then(|| (d.doc_id.clone(), s))
            })
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    #[test]
    fn ranking_matches_exhaustive_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let docs = random_docs(&mut rng, 40);
            let idx = build_index(&docs).unwrap();
            let query = TokenSequence::from_words(
                (0..rng.gen_range(1..4)).map(|_| format!("w{}", rng.gen_range(0..30))),
                Lang::Target,
            );
            let got = search(&idx, &query, 10).unwrap();
            let want = brute_force(&docs, &query, 10);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g.1 - w.1).abs() < 1e-9);
            }
            // ids agree up to exact score ties that floating point may reorder
            let ids = |v: &[(String, f64)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
            if got.windows(2).all(|w| (w[0].1 - w[1].1).abs() > 1e-12) {
                assert_eq!(ids(&got), ids(&want));
            }
        }
    }

    #[test]
    fn index_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = build_index(&random_docs(&mut rng, 10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        assert_eq!(InvertedIndex::load(&path).unwrap(), idx);
    }

    proptest! {
        #[test]
        fn top_k_is_prefix_and_order_free(seed in 0u64..1000, k in 1usize..8, extra in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut docs = random_docs(&mut rng, 25);
            let query = TokenSequence::from_words(["w1", "w2", "w3"], Lang::Target);
            let idx = build_index(&docs).unwrap();
            let short = search(&idx, &query, k).unwrap();
            let long = search(&idx, &query, k + extra).unwrap();
            prop_assert_eq!(&long[..short.len()], &short[..]);

            docs.shuffle(&mut rng);
            let shuffled = build_index(&docs).unwrap();
            prop_assert_eq!(&shuffled, &idx);
            prop_assert_eq!(search(&shuffled, &query, k).unwrap(), short);
        }
    }
}
