//! Head-only training with a triplet margin loss over frozen tokens.

mod grad;
mod loss;
mod mining;
mod optim;
mod train;

pub use grad::{head_grad, HeadForward, Triplet};
pub use loss::{euclidean, triplet_loss, DEFAULT_MARGIN};
pub use mining::{heading_difference, mine_triplets, Mined, MinedTriplet, MiningConfig, MiningMode};
pub use optim::OptimState;
pub use train::{current_globals, train_head, TrainConfig, TrainOutcome};
