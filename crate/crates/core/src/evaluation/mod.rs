mod bleu;
mod experiment;
mod metrics;
mod world;

pub use bleu::*;
pub use experiment::*;
pub use metrics::*;
pub use world::*;
