pub mod chain;
pub mod dataset;
pub mod kan;
pub mod spin_chain;
pub mod training;
pub use chain::ChainModel;
pub use dataset::{Dataset, DatasetRecipe, ScalerParams};
pub use kan::{KanNetwork, LayerKind, SplineGrid};
pub use spin_chain::{DriveSignal, QuantumState, SpinChainParams, TrajectorySample};
pub use training::{Model, TrainConfig};
