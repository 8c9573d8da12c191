//! Train a baseline and a candidate-constrained translator, then compare
//! their translations.
//!
//! ```text
//! cargo run --release --example train_translate
//! ```

use qtcand::align::train_ibm1;
use qtcand::evaluation::{bleu, gen_synthetic, ModelShape, Pipeline, WorldConfig};
use qtcand::mine::{build_constraint_table, MaskOptions, MiningConfig};
use qtcand::nmt::{train, DecodeConfig, TrainConfig, TransformerParams};
use qtcand::textproc::build_vocab;

fn main() -> qtcand::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let world = gen_synthetic(&WorldConfig::default(), 2)?;

    let align = train_ibm1(&world.bitext, 10)?;
    let sources: Vec<_> = world.bitext.iter().map(|p| p.source.clone()).collect();
    let constraints = build_constraint_table(
        &build_vocab(&sources, usize::MAX)?,
        &align,
        &world.click_log,
        &world.docs,
        &MiningConfig::default(),
    )?;

    let pipeline = Pipeline::from_bitext(&world.bitext, 0, 10_000, MaskOptions::default())?;
    let shape = ModelShape::default().with_vocab(pipeline.vocab_src.len(), pipeline.vocab_tgt.len());
    let config = TrainConfig {
        seed: 2,
        ..Default::default()
    };

    let mut baseline = TransformerParams::init(shape, 2)?;
    let b = train(&mut baseline, &pipeline.examples(&world.bitext, None), &config, None)?;
    let mut constrained = TransformerParams::init(shape, 2)?;
    let c = train(&mut constrained, &pipeline.examples(&world.bitext, Some(&constraints)), &config, None)?;
    println!("final loss: baseline {:.3}, constrained {:.3}", b.final_loss(20), c.final_loss(20));

    let decode = DecodeConfig::default();
    let (mut hyp_b, mut hyp_c, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, q) in world.test_queries.iter().enumerate() {
        let (tb, _) = pipeline.translate(&baseline, &q.source, &decode, None)?;
        let (tc, _) = pipeline.translate(&constrained, &q.source, &decode, Some(&constraints))?;
        if i < 8 {
            println!("{:<14} | ref {:<14} | base {:<14} | +TC {}", q.source.joined(), q.reference.joined(), tb.joined(), tc.joined());
        }
        hyp_b.push(tb.tokens);
        hyp_c.push(tc.tokens);
        refs.push(q.reference.tokens.clone());
    }
    println!("BLEU: baseline {:.2}, +TC {:.2}", bleu(&hyp_b, &refs)?, bleu(&hyp_c, &refs)?);
    Ok(())
}
