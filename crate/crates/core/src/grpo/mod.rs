//! Group-relative policy optimization: group sampling, normalized advantages,
//! the clipped token-level loss with a KL penalty, and the training loop.

mod advantage;
mod config;
mod group;
mod loss;
mod train;

pub use advantage::compute_advantages;
pub use config::TrainConfig;
pub use group::{build_group, CompletionGroup, GroupMember};
pub use loss::{
    dapo_loss, importance_ratios, kl_term, kl_token, token_objective, token_term, DapoLoss,
    LossError, TokenTerm,
};
pub use train::{grpo_step, grpo_train, GroupStats};
