mod checkpoint;
mod decode;
mod loss;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::*;
pub use decode::*;
pub use loss::*;
pub use model::*;
pub use optim::*;
pub use params::*;
pub use train::*;
