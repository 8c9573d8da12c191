//! BM25 search over a small product catalogue.
//!
//! ```text
//! cargo run --example retrieval_search -- "red shoes"
//! ```

use qtcand::mine::{Document, DocumentCollection};
use qtcand::retrieval::{build_index, search};
use qtcand::textproc::{tokenize, Lang};

fn main() -> qtcand::Result<()> {
    let catalogue = [
        ("p1", "red leather shoes for women"),
        ("p2", "women running shoes lightweight"),
        ("p3", "phone case for meizu m3 red"),
        ("p4", "silicone phone case clear"),
        ("p5", "red dress summer women"),
        ("p6", "men shoes brown leather"),
    ];
    let docs = DocumentCollection::new(
        catalogue
            .iter()
            .map(|(id, text)| Document::new(*id, tokenize(text, Lang::Target)))
            .collect(),
    )?;
    let index = build_index(docs.iter())?;
    println!("{} documents indexed", index.doc_count());

    let query = std::env::args().nth(1).unwrap_or_else(|| "red shoes".into());
    println!("query: {query}");
    for (rank, (doc, score)) in search(&index, &tokenize(&query, Lang::Target), 5)?.into_iter().enumerate() {
        let text = &docs.get(&doc).expect("indexed doc").text;
        println!("{}\t{doc}\t{score:.4}\t{}", rank + 1, text.joined());
    }
    Ok(())
}
