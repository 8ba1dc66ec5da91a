//! Per-stream MLP encoders, momentum SGD and checkpoints.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use mlp::{ForwardCache, Mlp, MlpGrads, MlpSpec, Standardizer};
pub use model::{init_model, Gradients, TwoStreamModel};
pub use optim::Sgd;
