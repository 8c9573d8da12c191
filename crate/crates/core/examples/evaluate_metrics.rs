//! BLEU and ranked-retrieval metrics on hand-made data.
//!
//! ```text
//! cargo run --example evaluate_metrics
//! ```

use qtcand::evaluation::{bleu, mean_average_precision, ndcg_at_10, recall_at_k, BleuStats, RelevanceJudgments, RunResults};
use qtcand::textproc::{tokenize, Lang};

fn words(s: &str) -> Vec<String> {
    tokenize(s, Lang::Target).tokens
}

fn main() -> qtcand::Result<()> {
    let refs = [words("red shoes for women"), words("phone case meizu")];
    let hyps = [words("red shoes women"), words("meizu phone case")];
    println!("BLEU = {:.2}", bleu(&hyps, &refs)?);
    let stats = BleuStats::of_pair(&hyps[0], &refs[0]);
    println!("  first pair n-gram matches {:?} of {:?}", stats.matches, stats.totals);

    let mut judgments = RelevanceJudgments::default();
    for (q, doc, grade) in [("q1", "a", 2), ("q1", "b", 1), ("q2", "c", 1), ("q3", "x", 0)] {
        judgments.insert(q, doc, grade);
    }
    let run: RunResults = [
        ("q1", vec!["a", "z", "b"]),
        ("q2", vec!["y", "z", "c"]),
        ("q3", vec!["x"]),
    ]
    .into_iter()
    .map(|(q, d)| (q.to_string(), d.into_iter().map(String::from).collect()))
    .collect();

    let recall = recall_at_k(&run, &judgments, 2)?;
    let map = mean_average_precision(&run, &judgments)?;
    let ndcg = ndcg_at_10(&run, &judgments)?;
    println!("RECALL@2 = {:.2}%", recall.value);
    println!("MAP      = {:.4}", map.value);
    println!("NDCG@10  = {:.4}", ndcg.value);
    println!("{} queries evaluated, {} without relevant documents", map.evaluated, map.excluded);
    Ok(())
}
