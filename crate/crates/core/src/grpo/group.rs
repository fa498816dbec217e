use rand::Rng;

use super::TrainConfig;
use crate::policy::{sample, Policy, PolicyError};
use crate::scalar::Real;
use crate::vocab::{TokenId, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember<F> {
    pub tokens: Vec<TokenId>,
    /// Per-token log-probabilities under the policy that produced the
    /// tokens; all zero for the off-policy reference (`π_φ = 1`).
    pub old_logprobs: Vec<F>,
    pub off_policy: bool,
}

impl<F: Real> GroupMember<F> {
    /// The ground-truth reference as an off-policy member, EOS-terminated and
    /// cut to `max_len` tokens. The flag is true when tokens were dropped.
    pub fn reference(reference: &[TokenId], max_len: usize) -> (Self, bool) {
        let mut tokens: Vec<TokenId> = reference.iter().copied().chain([EOS]).collect();
        let truncated = tokens.len() > max_len;
        tokens.truncate(max_len);
        let n = tokens.len();
        (
            Self {
                tokens,
                old_logprobs: vec![F::zero(); n],
                off_policy: true,
            },
            truncated,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionGroup<F> {
    pub prompt: Vec<TokenId>,
    pub members: Vec<GroupMember<F>>,
    pub reference_truncated: bool,
}

impl<F: Real> CompletionGroup<F> {
    pub fn group_size(&self) -> usize {
        self.members.len()
    }

    pub fn off_policy_count(&self) -> usize {
        self.members.iter().filter(|m| m.off_policy).count()
    }

    /// Total completion tokens over all members.
    pub fn token_count(&self) -> usize {
        self.members.iter().map(|m| m.tokens.len()).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.members.len() < 2 {
            return Err(format!("group of {} members", self.members.len()));
        }
        if self.off_policy_count() > 1 {
            return Err("more than one off-policy member".into());
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.tokens.is_empty() {
                return Err(format!("member {i} is empty"));
            }
            if m.tokens.len() != m.old_logprobs.len() {
                return Err(format!("member {i}: {} tokens, {} log-probs", m.tokens.len(), m.old_logprobs.len()));
            }
            if m.off_policy && m.old_logprobs.iter().any(|&l| l != F::zero()) {
                return Err(format!("off-policy member {i} has nonzero behaviour log-probs"));
            }
        }
        Ok(())
    }
}

/// Samples a group for one prompt: `G` on-policy completions, or `G − 1`
/// plus the reference as the single off-policy member in mixed mode.
pub fn build_group<F, P, R>(
    prompt: &[TokenId],
    reference: &[TokenId],
    snapshot: &P,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<CompletionGroup<F>, PolicyError>
where
    F: Real,
    P: Policy<F> + ?Sized,
    R: Rng + ?Sized,
{
    if prompt.len() > config.max_prompt_len {
        return Err(PolicyError::ShapeMismatch {
            expected: config.max_prompt_len,
            got: prompt.len(),
        });
    }
    let on_policy = if config.mixed_policy {
        config.group_size - 1
    } else {
        config.group_size
    };
    let mut members: Vec<GroupMember<F>> = sample(snapshot, prompt, on_policy, &config.train_sampling(), rng)?
        .into_iter()
        .map(|s| GroupMember {
            tokens: s.tokens,
            old_logprobs: s.logprobs,
            off_policy: false,
        })
        .collect();
    let mut reference_truncated = false;
    if config.mixed_policy {
        let (member, truncated) = GroupMember::reference(reference, config.max_completion_len);
        if truncated {
            log::warn!(
                "reference of {} tokens truncated to {}",
                reference.len(),
                config.max_completion_len
            );
        }
        reference_truncated = truncated;
        members.push(member);
    }
    Ok(CompletionGroup {
        prompt: prompt.to_vec(),
        members,
        reference_truncated,
    })
}
