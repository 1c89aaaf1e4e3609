//! Synthetic preference data generation and reward-model analysis.
//!
//! The crate covers four ways of manufacturing preference pairs (judge
//! labelling, best/worst of a pool, contrastive prompts, and
//! preference-conditioned rewriting of a first response), a linear
//! Bradley-Terry reward model trained on the result, and the analyses used to
//! compare the strategies. A small enumerable simulation world makes every
//! generating distribution exact, so re-weighting factors and label-noise
//! rates can be computed rather than estimated.

pub mod analysis;
pub mod data;
pub mod llm;
pub mod par;
pub mod repro;
pub mod rm;
pub mod seeds;
pub mod sim;
pub mod strategies;
