//! Training orchestration and convergence instrumentation.

pub mod batch;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod trainer;

pub use config::{LossKind, TrainConfig};
pub use eval::{evaluate_ordering, ordering_rates, AnchorDistances, OrderingRates};
pub use trainer::{build_model, split_by_id_hash, train, EvalRecord, StepRecord, TrainLog, Trainer};
pub use gradcheck::{run_gradcheck, GradCheckConfig, TrialReport};
