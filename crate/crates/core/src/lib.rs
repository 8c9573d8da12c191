//! Constraint translation candidates for neural query translation.
//!
//! The crate mines, for every source-language query word, a short list of
//! target-language words that are both plausible translations (from EM word
//! alignment over a bitext) and important in the documents users actually
//! clicked (click-conditioned TF-IDF). The lists are then used twice by a
//! small transformer translator:
//!
//! * during training, as extra smoothing targets next to the gold label;
//! * during decoding, as the only vocabulary the softmax may normalise over.
//!
//! Everything needed to measure the effect end to end lives here too: a BM25
//! search engine, BLEU and ranked-retrieval metrics, a planted synthetic world
//! generator and an ablation harness.
//!
//! Module map:
//!
//! | module | role |
//! | --- | --- |
//! | [`textproc`] | tokenization, BPE, vocabularies |
//! | [`align`] | IBM Model 1 EM, Viterbi alignment, candidate extraction |
//! | [`mine`] | click log, TF-IDF re-ranking, constraint tables and masks |
//! | [`nmt`] | transformer, candidate-smoothed loss, Adam, beam search |
//! | [`retrieval`] | inverted index with BM25 |
//! | [`evaluation`] | BLEU, recall/MAP/NDCG, synthetic world, experiments |
//! | [`cli`] | the `qtcand` command line front end |

pub mod align;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod mine;
pub mod nmt;
pub mod retrieval;
pub mod textproc;

pub use error::{Error, Result};
