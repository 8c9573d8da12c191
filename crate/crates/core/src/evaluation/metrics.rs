//! Ranked-retrieval metrics against relevance judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::mine::DocumentCollection;

/// Graded judgments per query; grade 0 means judged non-relevant.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    pub grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades.entry(query_id.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|g| g.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant(&self, query_id: &str) -> BTreeSet<&str> {
        self.grades
            .get(query_id)
            .map(|g| g.iter().filter(|(_, &v)| v > 0).map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }

    /// Fails on the first judged document missing from `docs`.
    pub fn validate(&self, docs: &DocumentCollection) -> Result<()> {
        for g in self.grades.values() {
            if let Some(d) = g.keys().find(|d| !docs.contains(d)) {
                return Err(Error::UnknownDocId(d.clone()));
            }
        }
        Ok(())
    }

    /// TSV `query_id<TAB>doc_id<TAB>grade`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut out = Self::default();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |msg: &str| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse("expected query_id, doc_id and grade"));
            }
            let grade = cols[2].trim().parse().map_err(|_| parse("grade is not a non-negative integer"))?;
            out.insert(cols[0], cols[1], grade);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for (q, g) in &self.grades {
            for (d, v) in g {
                writeln!(out, "{q}\t{d}\t{v}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Ranked doc ids per query id.
pub type RunResults = BTreeMap<String, Vec<String>>;

/// A macro-averaged metric. Queries without any relevant document are left
/// out of the average and counted in `excluded`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

fn macro_average(
    results: &RunResults,
    judgments: &RelevanceJudgments,
    per_query: impl Fn(&str, &[String], &BTreeSet<&str>) -> f64,
) -> Result<MetricValue> {
    if results.is_empty() {
        return Err(Error::EmptyInput("retrieval results"));
    }
    let mut sum = 0.0;
    let (mut evaluated, mut excluded) = (0, 0);
    for (q, ranked) in results {
        let rel = judgments.relevant(q);
        if rel.is_empty() {
            excluded += 1;
            continue;
        }
        sum += per_query(q, ranked, &rel);
        evaluated += 1;
    }
    let value = if evaluated == 0 { 0.0 } else { sum / evaluated as f64 };
    Ok(MetricValue {
        value,
        evaluated,
        excluded,
    })
}

/// Percentage of relevant documents found in the top `k`, macro-averaged.
pub fn recall_at_k(results: &RunResults, judgments: &RelevanceJudgments, k: usize) -> Result<MetricValue> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    macro_average(results, judgments, |_, ranked, rel| {
        let found = ranked.iter().take(k).filter(|d| rel.contains(d.as_str())).count();
        100.0 * found as f64 / rel.len() as f64
    })
}

pub fn average_precision(ranked: &[String], relevant: &BTreeSet<&str>) -> f64 {
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d.as_str()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

pub fn mean_average_precision(results: &RunResults, judgments: &RelevanceJudgments) -> Result<MetricValue> {
    macro_average(results, judgments, |_, ranked, rel| average_precision(ranked, rel))
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG at cutoff `k` with gain `2^grade - 1` and `log2(rank + 1)` discount.
pub fn ndcg_at(results: &RunResults, judgments: &RelevanceJudgments, k: usize) -> Result<MetricValue> {
    macro_average(results, judgments, |q, ranked, _| {
        let got = dcg(ranked.iter().take(k).map(|d| judgments.grade(q, d)));
        let mut ideal: Vec<u32> = judgments.grades[q].values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        got / dcg(ideal.into_iter().take(k))
    })
}

pub fn ndcg_at_10(results: &RunResults, judgments: &RelevanceJudgments) -> Result<MetricValue> {
    ndcg_at(results, judgments, 10)
}
