//! Group-relative policy optimization: rewards within one sampled group are
//! centered into advantages, each token carries a clipped importance-ratio
//! surrogate plus a KL drag toward a reference policy, and the whole thing
//! reduces to a scalar objective to maximize together with the exact partial
//! derivative with respect to every new-policy token logprob.

use crate::domain::GroupBatch;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("degenerate group: {0} rewards (need at least 2)")]
    DegenerateGroup(usize),
    #[error("invalid logprob: {0}")]
    InvalidLogprob(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

/// How per-sequence sums are reduced into the group objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Mean over each sequence's tokens, then mean over the group; advantages
    /// divided by the group's reward standard deviation.
    Grpo,
    /// Sum over tokens divided by a fixed constant; advantages are plain
    /// reward deviations. Removes the per-sequence length bias.
    DrGrpo,
}

/// Stabilizer added to the reward standard deviation in grpo scaling.
pub const STD_STABILIZER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub group_size: usize,
    /// Downward ratio clip: ratios below 1 - eps_low stop contributing.
    pub eps_low: f64,
    /// Upward ratio clip, opened wider than eps_low so rare upward moves
    /// keep gradient signal and entropy doesn't collapse.
    pub eps_high: f64,
    /// Weight of the KL drag toward the reference policy.
    pub kl_coeff: f64,
    pub mode: NormalizationMode,
    /// Fixed token-count divisor used by dr_grpo instead of sequence length;
    /// matched to the generation token budget.
    pub length_norm_constant: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            group_size: 4,
            eps_low: 0.2,
            eps_high: 0.28,
            kl_coeff: 0.001,
            mode: NormalizationMode::DrGrpo,
            length_norm_constant: 512.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.group_size < 2 {
            return Err(OptimizerError::InvalidConfig(format!(
                "group_size {} (need at least 2)",
                self.group_size
            )));
        }
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high && self.eps_high < 1.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "need 0 < eps_low <= eps_high < 1 (got {} / {})",
                self.eps_low, self.eps_high
            )));
        }
        if self.kl_coeff < 0.0 {
            return Err(OptimizerError::InvalidConfig(format!("kl_coeff {}", self.kl_coeff)));
        }
        if !(self.length_norm_constant > 0.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "length_norm_constant {}",
                self.length_norm_constant
            )));
        }
        Ok(())
    }
}

/// Center group rewards into advantages. Both modes subtract the group mean;
/// grpo additionally divides by the population standard deviation (plus a
/// stabilizer), which makes it invariant to reward rescaling.
pub fn group_advantages(rewards: &[f64], mode: NormalizationMode) -> Result<Vec<f64>, OptimizerError> {
    let g = rewards.len();
    if g < 2 {
        return Err(OptimizerError::DegenerateGroup(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    match mode {
        NormalizationMode::DrGrpo => Ok(centered),
        NormalizationMode::Grpo => {
            let var = centered.iter().map(|d| d * d).sum::<f64>() / g as f64;
            let scale = var.sqrt() + STD_STABILIZER;
            Ok(centered.into_iter().map(|d| d / scale).collect())
        }
    }
}

/// Importance ratio of one token between the current and snapshot policies.
pub fn token_ratio(logp_new: f64, logp_old: f64) -> Result<f64, OptimizerError> {
    if !logp_new.is_finite() {
        return Err(OptimizerError::InvalidLogprob(logp_new));
    }
    if !logp_old.is_finite() {
        return Err(OptimizerError::InvalidLogprob(logp_old));
    }
    Ok((logp_new - logp_old).exp())
}

/// Pessimistic clipped surrogate for one token:
/// `min(ratio * A, clamp(ratio, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clamped * advantage)
}

/// Derivative of [`clipped_term`] with respect to the new logprob (the ratio
/// is exp(new - old), so d ratio / d new = ratio). Zero whenever the clamped
/// branch is active, since there the ratio is saturated.
fn clipped_term_grad(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    if ratio * advantage <= clamped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Non-negative per-token KL estimate toward the reference policy:
/// `exp(ref - new) - (ref - new) - 1`. Zero iff the logprobs agree.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> Result<f64, OptimizerError> {
    if !logp_new.is_finite() {
        return Err(OptimizerError::InvalidLogprob(logp_new));
    }
    if !logp_ref.is_finite() {
        return Err(OptimizerError::InvalidLogprob(logp_ref));
    }
    let delta = logp_ref - logp_new;
    Ok(delta.exp() - delta - 1.0)
}

/// d kl_estimate / d logp_new = 1 - exp(ref - new).
fn kl_grad(logp_new: f64, logp_ref: f64) -> f64 {
    1.0 - (logp_ref - logp_new).exp()
}

/// Scalar objective for one group plus the exact partial derivative of that
/// scalar with respect to each new-policy token logprob. Callers chain these
/// through their policy's own d logprob / d parameter map and own the
/// reduction across groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    /// Value to maximize.
    pub objective: f64,
    /// `token_grads[i][t]` = d objective / d new_logprobs[i][t].
    pub token_grads: Vec<Vec<f64>>,
    /// Mean per-token KL estimate, for diagnostics.
    pub mean_kl: f64,
    /// Fraction of tokens where the clamp branch was active.
    pub clip_fraction: f64,
}

/// Evaluate the group objective. Per token:
/// `clipped_term(ratio, advantage) - kl_coeff * kl_estimate`, where the
/// sequence advantage is broadcast to its tokens. Sequence sums reduce per
/// the configured mode: grpo averages over each sequence's length then over
/// the group; dr_grpo sums tokens and divides by
/// `group_size * length_norm_constant`.
pub fn group_objective(
    batch: &GroupBatch,
    new_logprobs: &[Vec<f64>],
    config: &OptimizerConfig,
) -> Result<ObjectiveEvaluation, OptimizerError> {
    config.validate()?;
    let g = batch.rollouts.len();
    if new_logprobs.len() != g {
        return Err(OptimizerError::ShapeMismatch(format!(
            "{g} rollouts vs {} new logprob sequences",
            new_logprobs.len()
        )));
    }
    if batch.advantages.len() != g || batch.ref_logprobs.len() != g {
        return Err(OptimizerError::ShapeMismatch(format!(
            "{g} rollouts vs {} advantages / {} ref sequences",
            batch.advantages.len(),
            batch.ref_logprobs.len()
        )));
    }

    let mut objective = 0.0;
    let mut token_grads = Vec::with_capacity(g);
    let mut kl_sum = 0.0;
    let mut clipped_tokens = 0usize;
    let mut token_total = 0usize;

    for i in 0..g {
        let old = &batch.rollouts[i].token_logprobs;
        let new = &new_logprobs[i];
        let refs = &batch.ref_logprobs[i];
        if new.len() != old.len() || refs.len() != old.len() {
            return Err(OptimizerError::ShapeMismatch(format!(
                "rollout {i}: {} old vs {} new vs {} ref logprobs",
                old.len(),
                new.len(),
                refs.len()
            )));
        }
        let advantage = batch.advantages[i];
        let weight = match config.mode {
            NormalizationMode::Grpo => {
                if old.is_empty() {
                    0.0
                } else {
                    1.0 / (g as f64 * old.len() as f64)
                }
            }
            NormalizationMode::DrGrpo => 1.0 / (g as f64 * config.length_norm_constant),
        };

        let mut grads = Vec::with_capacity(old.len());
        for t in 0..old.len() {
            let ratio = token_ratio(new[t], old[t])?;
            let surrogate = clipped_term(ratio, advantage, config.eps_low, config.eps_high);
            let kl = kl_estimate(new[t], refs[t])?;
            objective += weight * (surrogate - config.kl_coeff * kl);
            grads.push(
                weight
                    * (clipped_term_grad(ratio, advantage, config.eps_low, config.eps_high)
                        - config.kl_coeff * kl_grad(new[t], refs[t])),
            );
            kl_sum += kl;
            token_total += 1;
            let clamped = ratio.clamp(1.0 - config.eps_low, 1.0 + config.eps_high);
            if clamped != ratio {
                clipped_tokens += 1;
            }
        }
        token_grads.push(grads);
    }

    Ok(ObjectiveEvaluation {
        objective,
        token_grads,
        mean_kl: if token_total == 0 { 0.0 } else { kl_sum / token_total as f64 },
        clip_fraction: if token_total == 0 { 0.0 } else { clipped_tokens as f64 / token_total as f64 },
    })
}

/// Entropy summarized over one sampled sequence. Exact mode consumes per-step
/// full-distribution entropies; proxy mode consumes sampled-token logprobs and
/// negates their mean. The two are different estimators and get reported under
/// different metric names, never compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMode {
    Exact,
    Proxy,
}

pub fn sequence_entropy(values: &[f64], mode: EntropyMode) -> Result<f64, OptimizerError> {
    if values.is_empty() {
        return Err(OptimizerError::ShapeMismatch("empty sequence".to_string()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(match mode {
        EntropyMode::Exact => mean,
        EntropyMode::Proxy => -mean,
    })
}

/// Version stamp of the exported training-batch JSONL layout.
pub const BATCH_EXPORT_VERSION: u32 = 1;

/// One exported rollout, ready for an external trainer: the sampled tokens,
/// the logprobs they were sampled under, reference logprobs, the sequence
/// advantage broadcast per token, and the optimizer config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchExportRecord {
    pub version: u32,
    pub sample_id: String,
    pub rollout_index: usize,
    pub tokens: Vec<u32>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub config: OptimizerConfig,
}

impl BatchExportRecord {
    pub fn from_group(batch: &GroupBatch, config: &OptimizerConfig) -> Vec<BatchExportRecord> {
        batch
            .rollouts
            .iter()
            .enumerate()
            .map(|(i, rollout)| BatchExportRecord {
                version: BATCH_EXPORT_VERSION,
                sample_id: batch.sample_id.clone(),
                rollout_index: i,
                tokens: rollout.tokens.clone(),
                old_logprobs: rollout.token_logprobs.clone(),
                ref_logprobs: batch.ref_logprobs[i].clone(),
                advantages: vec![batch.advantages[i]; rollout.tokens.len()],
                config: *config,
            })
            .collect()
    }
}
