//! Tokenization, byte-pair encoding and vocabularies.

mod bpe;
mod tokenize;
mod vocab;

pub use bpe::{apply_bpe, learn_bpe, merge_subwords, BpeModel, END_OF_WORD};
pub use tokenize::{tokenize, Lang, TokenSequence};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, UNK};
