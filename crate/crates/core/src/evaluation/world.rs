//! Planted bilingual search world.
//!
//! Source words `xNNN` belong to topics. Most translate to a single target
//! word `yNNN`. Polysemous ones have a general sense `gNNN`, which dominates
//! the parallel text, and a search sense `cNNN`, which is the only one used
//! in documents. Queries are built from words of a sampled document, and a
//! document is relevant to a query when it shares the topic and contains the
//! search translation of every query word.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::metrics::RelevanceJudgments;
use crate::io::{create_file, open_file, read_bitext, write_bitext, SentencePair};
use crate::mine::{ClickLog, ClickRecord, Document, DocumentCollection};
use crate::textproc::{tokenize, Lang, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    /// Probability that a source word has two senses.
    pub polysemy: f64,
    /// Share of bitext occurrences of a polysemous word using the general sense.
    pub general_share: f64,
    pub bitext_pairs: usize,
    pub sentence_len: (usize, usize),
    /// Chance that a bitext target gains one unaligned word of the same topic.
    pub insertion_prob: f64,
    pub docs_per_topic: usize,
    /// Chance that each topic word appears in a document of its topic.
    pub doc_word_prob: f64,
    pub fillers: usize,
    pub doc_fillers: (usize, usize),
    /// Chance that a document also mentions one word of another topic.
    pub cross_topic_prob: f64,
    pub click_queries: usize,
    pub clicks_per_query: usize,
    pub test_queries: usize,
    pub query_len: (usize, usize),
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            topics: 8,
            words_per_topic: 8,
            polysemy: 0.3,
            general_share: 0.7,
            bitext_pairs: 2000,
            sentence_len: (2, 4),
            insertion_prob: 0.3,
            docs_per_topic: 30,
            doc_word_prob: 0.5,
            fillers: 30,
            doc_fillers: (3, 8),
            cross_topic_prob: 0.2,
            click_queries: 400,
            clicks_per_query: 3,
            test_queries: 300,
            query_len: (2, 3),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.topics == 0 || self.words_per_topic < 2 {
            return bad("need at least one topic with two words");
        }
        if self.docs_per_topic == 0 {
            return bad("docs_per_topic must be positive");
        }
        if self.bitext_pairs == 0 || self.test_queries == 0 {
            return bad("bitext_pairs and test_queries must be positive");
        }
        if !(0.0..=1.0).contains(&self.polysemy)
            || !(0.0..=1.0).contains(&self.general_share)
            || !(0.0..=1.0).contains(&self.insertion_prob)
            || !(0.0..=1.0).contains(&self.doc_word_prob)
            || !(0.0..=1.0).contains(&self.cross_topic_prob)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        let ranges = [self.sentence_len, self.query_len, self.doc_fillers];
        if ranges.iter().any(|&(lo, hi)| lo > hi) || self.sentence_len.0 == 0 || self.query_len.0 == 0 {
            return bad("length ranges must be non-empty with positive minimum");
        }
        if self.doc_fillers.1 > 0 && self.fillers == 0 {
            return bad("documents need filler words but fillers is 0");
        }
        Ok(())
    }
}

/// Planted translation of one source word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sense {
    pub topic: usize,
    /// Sense used by documents and clicks.
    pub search: String,
    /// Dominant bitext sense of a polysemous word.
    pub general: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestQuery {
    pub id: String,
    pub source: TokenSequence,
    pub reference: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub lexicon: BTreeMap<String, Sense>,
    pub bitext: Vec<SentencePair>,
    pub click_log: ClickLog,
    pub docs: DocumentCollection,
    pub test_queries: Vec<TestQuery>,
    pub judgments: RelevanceJudgments,
}

struct DocInfo {
    topic: usize,
    words: BTreeSet<String>,
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Source words of `topic` in id order.
fn topic_words(lexicon: &BTreeMap<String, Sense>, topic: usize) -> Vec<&str> {
    lexicon
        .iter()
        .filter(|(_, s)| s.topic == topic)
        .map(|(w, _)| w.as_str())
        .collect()
}

pub fn gen_synthetic(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lexicon = BTreeMap::new();
    for topic in 0..config.topics {
        for w in 0..config.words_per_topic {
            let id = topic * config.words_per_topic + w;
            let poly = rng.gen_bool(config.polysemy);
            let sense = if poly {
                Sense {
                    topic,
                    search: format!("c{id:03}"),
                    general: Some(format!("g{id:03}")),
                }
            } else {
                Sense {
                    topic,
                    search: format!("y{id:03}"),
                    general: None,
                }
            };
            lexicon.insert(format!("x{id:03}"), sense);
        }
    }
    let by_topic: Vec<Vec<String>> = (0..config.topics)
        .map(|t| topic_words(&lexicon, t).into_iter().map(String::from).collect())
        .collect();

    let mut bitext = Vec::with_capacity(config.bitext_pairs);
    for _ in 0..config.bitext_pairs {
        let words = &by_topic[rng.gen_range(0..config.topics)];
        let len = range(&mut rng, config.sentence_len).min(words.len());
        let src: Vec<String> = words.choose_multiple(&mut rng, len).cloned().collect();
        let mut tgt: Vec<String> = src
            .iter()
            .map(|x| {
                let s = &lexicon[x];
                match &s.general {
                    Some(g) if rng.gen_bool(config.general_share) => g.clone(),
                    _ => s.search.clone(),
                }
            })
            .collect();
        if rng.gen_bool(config.insertion_prob) {
            let extra = words.choose(&mut rng).expect("topics have words");
            let at = rng.gen_range(0..=tgt.len());
            tgt.insert(at, lexicon[extra].search.clone());
        }
        bitext.push(SentencePair::new(
            TokenSequence::new(src, Lang::Source),
            TokenSequence::new(tgt, Lang::Target),
        ));
    }

    let fillers: Vec<String> = (0..config.fillers).map(|i| format!("f{i:02}")).collect();
    let mut docs = Vec::new();
    let mut infos = Vec::new();
    for topic in 0..config.topics {
        for _ in 0..config.docs_per_topic {
            let words = &by_topic[topic];
            let mut present: Vec<&String> = words.iter().filter(|_| rng.gen_bool(config.doc_word_prob)).collect();
            if present.is_empty() {
                present.push(words.choose(&mut rng).expect("topics have words"));
            }
            let mut text = Vec::new();
            for x in &present {
                for _ in 0..rng.gen_range(1..=2) {
                    text.push(lexicon[*x].search.clone());
                }
            }
            for _ in 0..range(&mut rng, config.doc_fillers) {
                text.push(fillers.choose(&mut rng).expect("fillers exist").clone());
            }
            if config.topics > 1 && rng.gen_bool(config.cross_topic_prob) {
                let other = (topic + rng.gen_range(1..config.topics)) % config.topics;
                let x = by_topic[other].choose(&mut rng).expect("topics have words");
                text.push(lexicon[x].search.clone());
            }
            text.shuffle(&mut rng);
            let id = format!("doc{:05}", docs.len());
            docs.push(Document::new(id, TokenSequence::new(text, Lang::Target)));
            infos.push(DocInfo {
                topic,
                words: present.into_iter().cloned().collect(),
            });
        }
    }

    let relevant = |query: &[String]| -> Vec<usize> {
        let topic = lexicon[&query[0]].topic;
        infos
            .iter()
            .enumerate()
            .filter(|(_, d)| d.topic == topic && query.iter().all(|x| d.words.contains(x)))
            .map(|(i, _)| i)
            .collect()
    };
    let sample_query = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let d = &infos[rng.gen_range(0..infos.len())];
        let pool: Vec<&String> = d.words.iter().collect();
        let len = range(rng, config.query_len).min(pool.len());
        pool.choose_multiple(rng, len).map(|w| (*w).clone()).collect()
    };

    let mut records = Vec::with_capacity(config.click_queries);
    for _ in 0..config.click_queries {
        let q = sample_query(&mut rng);
        let rel = relevant(&q);
        let clicked: Vec<String> = rel
            .choose_multiple(&mut rng, config.clicks_per_query.min(rel.len()))
            .map(|&i| docs[i].doc_id.clone())
            .collect();
        records.push(ClickRecord {
            query: TokenSequence::new(q, Lang::Source),
            clicked,
        });
    }

    // Reference translations use the two senses of a polysemous word in turn.
    let mut use_general = true;
    let mut judgments = RelevanceJudgments::default();
    let mut test_queries = Vec::with_capacity(config.test_queries);
    for i in 0..config.test_queries {
        let q = sample_query(&mut rng);
        let id = format!("q{i:04}");
        for d in relevant(&q) {
            judgments.insert(id.clone(), docs[d].doc_id.clone(), 1);
        }
        let reference: Vec<String> = q
            .iter()
            .map(|x| {
                let s = &lexicon[x];
                match &s.general {
                    Some(g) => {
                        use_general = !use_general;
                        if use_general {
                            s.search.clone()
                        } else {
                            g.clone()
                        }
                    }
                    None => s.search.clone(),
                }
            })
            .collect();
        test_queries.push(TestQuery {
            id,
            source: TokenSequence::new(q, Lang::Source),
            reference: TokenSequence::new(reference, Lang::Target),
        });
    }

    Ok(SyntheticWorld {
        lexicon,
        bitext,
        click_log: ClickLog::new(records),
        docs: DocumentCollection::new(docs)?,
        test_queries,
        judgments,
    })
}

impl SyntheticWorld {
    /// Over all polysemous words, the smallest share of their clicked
    /// documents that contain the search sense. 1.0 when there are none.
    pub fn search_sense_coverage(&self) -> f64 {
        let mut worst: f64 = 1.0;
        for (x, sense) in self.lexicon.iter().filter(|(_, s)| s.general.is_some()) {
            let clicked = crate::mine::clicked_docs(&self.click_log, &self.docs, x);
            if clicked.is_empty() {
                continue;
            }
            let hits = clicked.iter().filter(|d| d.text.contains(&sense.search)).count();
            worst = worst.min(hits as f64 / clicked.len() as f64);
        }
        worst
    }

    pub fn polysemous_words(&self) -> impl Iterator<Item = (&str, &Sense)> {
        self.lexicon
            .iter()
            .filter(|(_, s)| s.general.is_some())
            .map(|(w, s)| (w.as_str(), s))
    }

    /// Writes `bitext.tsv`, `clicks.jsonl`, `docs.jsonl`, `test_queries.tsv`,
    /// `qrels.tsv` and `lexicon.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_bitext(dir.join("bitext.tsv"), &self.bitext)?;
        self.click_log.save(dir.join("clicks.jsonl"))?;
        self.docs.save(dir.join("docs.jsonl"))?;
        write_test_queries(dir.join("test_queries.tsv"), &self.test_queries)?;
        self.judgments.save(dir.join("qrels.tsv"))?;
        let mut out = create_file(&dir.join("lexicon.json"))?;
        serde_json::to_writer_pretty(&mut out, &self.lexicon)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            lexicon: serde_json::from_reader(open_file(&dir.join("lexicon.json"))?)?,
            bitext: read_bitext(dir.join("bitext.tsv"))?,
            click_log: ClickLog::load(dir.join("clicks.jsonl"))?,
            docs: DocumentCollection::load(dir.join("docs.jsonl"))?,
            test_queries: read_test_queries(dir.join("test_queries.tsv"))?,
            judgments: RelevanceJudgments::load(dir.join("qrels.tsv"))?,
        })
    }
}

/// TSV `query_id<TAB>source<TAB>reference`.
pub fn write_test_queries(path: impl AsRef<Path>, queries: &[TestQuery]) -> Result<()> {
    let mut out = create_file(path.as_ref())?;
    for q in queries {
        writeln!(out, "{}\t{}\t{}", q.id, q.source.joined(), q.reference.joined())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the format of [`write_test_queries`]; the reference column may be
/// absent.
pub fn read_test_queries(path: impl AsRef<Path>) -> Result<Vec<TestQuery>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in open_file(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected query_id, source and optional reference".into(),
            });
        }
        out.push(TestQuery {
            id: cols[0].to_string(),
            source: tokenize(cols[1], Lang::Source),
            reference: tokenize(cols.get(2).copied().unwrap_or(""), Lang::Target),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = WorldConfig::default();
        let a = gen_synthetic(&cfg, 7).unwrap();
        let b = gen_synthetic(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        a.save(da.path()).unwrap();
        b.save(db.path()).unwrap();
        for f in ["bitext.tsv", "clicks.jsonl", "docs.jsonl", "test_queries.tsv", "qrels.tsv", "lexicon.json"] {
            assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap());
        }
        assert_ne!(gen_synthetic(&cfg, 8).unwrap().bitext, a.bitext);
    }

    #[test]
    fn save_load_roundtrip() {
        let w = gen_synthetic(&WorldConfig::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(SyntheticWorld::load(dir.path()).unwrap(), w);
    }

    #[test]
    fn self_audit() {
        for seed in 0..5 {
            let w = gen_synthetic(&WorldConfig::default(), seed).unwrap();
            assert!(w.search_sense_coverage() >= 0.9);
            assert!(w.polysemous_words().count() > 0);
            w.click_log.validate(&w.docs).unwrap();
            w.judgments.validate(&w.docs).unwrap();
            // every test query has at least the document it was drawn from
            for q in &w.test_queries {
                assert!(!w.judgments.relevant(&q.id).is_empty());
            }
            // documents never use a general sense
            for (_, s) in w.polysemous_words() {
                let g = s.general.as_deref().unwrap();
                assert!(w.docs.iter().all(|d| !d.text.contains(g)));
            }
        }
    }

    #[test]
    fn general_sense_dominates_bitext() {
        let w = gen_synthetic(&WorldConfig::default(), 1).unwrap();
        for (x, s) in w.polysemous_words() {
            let (mut g, mut c) = (0, 0);
            for p in w.bitext.iter().filter(|p| p.source.contains(x)) {
                g += p.target.contains(s.general.as_deref().unwrap()) as usize;
                c += p.target.contains(&s.search) as usize;
            }
            assert!(g > c, "{x}: general {g} search {c}");
        }
    }

    #[test]
    fn references_balance_senses() {
        let w = gen_synthetic(&WorldConfig::default(), 2).unwrap();
        let (mut g, mut c) = (0i64, 0i64);
        for q in &w.test_queries {
            for t in q.reference.iter() {
                g += t.starts_with('g') as i64;
                c += t.starts_with('c') as i64;
            }
        }
        assert!((g - c).abs() <= 1);
    }

    #[test]
    fn no_polysemy_means_one_sense() {
        let cfg = WorldConfig {
            polysemy: 0.0,
            insertion_prob: 0.0,
            ..Default::default()
        };
        let w = gen_synthetic(&cfg, 4).unwrap();
        assert_eq!(w.polysemous_words().count(), 0);
        for p in &w.bitext {
            for (x, y) in p.source.iter().zip(p.target.iter()) {
                assert_eq!(w.lexicon[x].search, y);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_config() {
        let bad = WorldConfig {
            docs_per_topic: 0,
            ..Default::default()
        };
        assert!(gen_synthetic(&bad, 0).is_err());
        let bad = WorldConfig {
            polysemy: 1.5,
            ..Default::default()
        };
        assert!(gen_synthetic(&bad, 0).is_err());
    }
}
