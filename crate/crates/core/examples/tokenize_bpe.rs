//! Tokenization, BPE subwords and vocabularies.
//!
//! ```text
//! cargo run --example tokenize_bpe
//! ```

use qtcand::textproc::{apply_bpe, build_vocab, learn_bpe, merge_subwords, tokenize, Lang};

fn main() -> qtcand::Result<()> {
    let raw = [
        "Красные туфли женские",
        "чехол,для телефона meizu",
        "Red Shoes for Women!",
        "phone case for meizu m3",
        "women's running shoes",
        "leather phone cases",
    ];
    let corpus: Vec<_> = raw
        .iter()
        .enumerate()
        .map(|(i, s)| tokenize(s, if i < 2 { Lang::Source } else { Lang::Target }))
        .collect();
    for (r, t) in raw.iter().zip(&corpus) {
        println!("{r:<28} -> {:?}", t.tokens);
    }

    let english = &corpus[2..];
    let bpe = learn_bpe(english, 30)?;
    println!("\nfirst merges: {:?}", &bpe.merges()[..5]);
    for s in english {
        let pieces = apply_bpe(&bpe, s);
        assert_eq!(merge_subwords(&pieces), *s);
        println!("{:<32} -> {}", s.joined(), pieces.joined());
    }

    let vocab = build_vocab(english, 12)?;
    println!("\nvocabulary ({} ids): {:?}", vocab.len(), vocab.words().collect::<Vec<_>>());
    let q = tokenize("cheap phone shoes", Lang::Target);
    println!("encode {:?} -> {:?}", q.tokens, vocab.encode(&q));
    Ok(())
}
