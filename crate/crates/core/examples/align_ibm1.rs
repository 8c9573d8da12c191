//! IBM Model 1 word alignment, Viterbi links and translation candidates.
//!
//! ```text
//! cargo run --example align_ibm1
//! ```

use qtcand::align::{extract_candidates, train_ibm1_traced, viterbi_align};
use qtcand::io::SentencePair;

fn main() -> qtcand::Result<()> {
    let bitext: Vec<SentencePair> = [
        ("красные туфли", "red shoes"),
        ("красный чехол", "red case"),
        ("чехол для телефона", "phone case"),
        ("туфли для женщин", "shoes for women"),
        ("женские туфли", "women shoes"),
        ("чехол meizu", "meizu case"),
        ("красные женские туфли", "red women shoes"),
    ]
    .iter()
    .map(|(s, t)| SentencePair::from_raw(s, t))
    .collect();

    let trace = train_ibm1_traced(&bitext, 10)?;
    // entry i is the log-likelihood after i iterations; entry 0 is the uniform start
    println!("log-likelihood after each iteration:");
    for (i, ll) in trace.log_likelihood.iter().enumerate() {
        println!("  {i:>2}  {ll:.4}");
    }

    let table = &trace.table;
    for word in ["туфли", "чехол", "для"] {
        let cands = extract_candidates(table, word, 3, 0.05)?;
        let shown: Vec<String> = cands.candidates.iter().map(|(t, p)| format!("{t} {p:.3}")).collect();
        println!("{word:<8} -> {}", shown.join(", "));
    }

    let pair = &bitext[6];
    println!("\nViterbi alignment of `{}` / `{}`:", pair.source.joined(), pair.target.joined());
    for link in viterbi_align(table, pair).links {
        let src = link.source.map_or("NULL", |i| pair.source.tokens[i].as_str());
        println!("  {:<8} <- {src}", pair.target.tokens[link.target]);
    }
    Ok(())
}
