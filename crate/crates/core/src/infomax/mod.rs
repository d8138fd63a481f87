//! Contrastive heads, pairwise scores, the infoNCE bound, and the
//! temporal-difference feature variant.

pub mod heads;
pub mod loss;
pub mod tdiff;

pub use heads::{apply_heads, flatten_locations, unflatten_locations, ContrastiveHeads};
pub use loss::{infonce, pair_scores, score_grads, InfoNce, LayerPairSpec, NegativeMode, PairScores};
pub use tdiff::{temporal_difference, temporal_difference_backward};
