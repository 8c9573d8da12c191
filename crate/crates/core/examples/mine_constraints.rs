//! Mining constraint candidates from alignments and clicks.
//!
//! Builds a synthetic world in which some source words have a general-domain
//! translation that dominates the bitext and a different search-domain
//! translation that dominates clicked documents, then compares the alignment
//! ranking with the click-conditioned TF-IDF ranking.
//!
//! ```text
//! cargo run --example mine_constraints
//! ```

use qtcand::align::{extract_candidates, train_ibm1};
use qtcand::evaluation::{gen_synthetic, WorldConfig};
use qtcand::mine::{build_constraint_table, clicked_docs, query_constraint_set, score_tfidf, MaskOptions, MiningConfig};
use qtcand::textproc::{build_vocab, Vocabulary};

fn main() -> qtcand::Result<()> {
    let world = gen_synthetic(&WorldConfig::default(), 1)?;
    let table = train_ibm1(&world.bitext, 10)?;

    let (word, sense) = world.polysemous_words().next().expect("world has polysemous words");
    println!(
        "{word}: general sense {}, search sense {}",
        sense.general.as_deref().unwrap_or("-"),
        sense.search
    );
    let cands = extract_candidates(&table, word, 50, 0.01)?;
    println!("  by t(y|x):  {:?}", cands.candidates.iter().take(4).map(|(t, p)| format!("{t} {p:.3}")).collect::<Vec<_>>());
    let docs = clicked_docs(&world.click_log, &world.docs, word);
    let scored = score_tfidf(&cands, &docs)?;
    println!(
        "  by TF-IDF over {} clicked docs: {:?}",
        docs.len(),
        scored.entries.iter().take(4).map(|e| format!("{} {:.3}", e.target, e.score)).collect::<Vec<_>>()
    );

    let sources: Vec<_> = world.bitext.iter().map(|p| p.source.clone()).collect();
    let vocab_src = build_vocab(&sources, usize::MAX)?;
    let config = MiningConfig { m: 5, ..Default::default() };
    let constraints = build_constraint_table(&vocab_src, &table, &world.click_log, &world.docs, &config)?;
    println!(
        "\nconstraint table: {} rows, {} ranked by alignment only",
        constraints.rows.len(),
        constraints.fallback.len()
    );

    let targets: Vec<_> = world.bitext.iter().map(|p| p.target.clone()).collect();
    let vocab_tgt: Vocabulary = build_vocab(&targets, usize::MAX)?;
    let q = &world.test_queries[0];
    let mask = query_constraint_set(&constraints, &q.source, &vocab_tgt, None, MaskOptions::default());
    let allowed: Vec<&str> = mask.ids().map(|i| vocab_tgt.token(i)).collect();
    println!("query `{}` may translate into {} tokens: {allowed:?}", q.source.joined(), mask.count());
    Ok(())
}
