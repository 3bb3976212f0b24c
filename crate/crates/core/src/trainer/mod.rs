//! The rollout, reward, update loop. Toy mode trains the built-in softmax
//! policy end to end; remote mode orchestrates sampling and scoring against
//! served models and exports ready-to-train batches instead of updating
//! weights locally.

pub mod metrics;
pub mod remote;
pub mod toy_env;

pub use metrics::{
    metrics_match_ignoring_wall_clock, smooth_series, write_metrics_csv, MetricsRecord,
    SMOOTHING_WINDOW,
};
pub use remote::{
    evaluate_remote, run_remote_rollout, score_listwise_rollout, score_pointwise_rollout,
    RemoteRolloutReport, RemoteSampleSet,
};
pub use toy_env::{ToyEnvConfig, ToyEnvironment, ToyRewardKind};

use crate::backend::BackendError;
use crate::dataset::DatasetError;
use crate::domain::{DomainError, GroupBatch, RewardFlags, Rollout};
use crate::optimizer::{
    group_advantages, group_objective, sequence_entropy, EntropyMode, OptimizerConfig,
    OptimizerError,
};
use crate::policy::{mix_seed, PolicyCheckpoint, PolicyError, ToyPolicy};
use crate::reward::{compose_total, RewardError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainerError::Io { path: path.display().to_string(), source }
    }
}

/// Which reward the remote judge produces for each synopsis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    PointwiseString,
    PointwiseLogprob,
    Listwise,
}

/// Every random stream in a run is derived from one of these named seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSeeds {
    /// Rollout sampling.
    pub sampling: u64,
    /// Validation rollouts, kept separate so evaluation never perturbs
    /// training streams.
    pub evaluation: u64,
    /// Context/persona selection.
    pub data: u64,
}

impl Default for TrainSeeds {
    fn default() -> Self {
        TrainSeeds { sampling: 42, evaluation: 43, data: 44 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub mini_batch: usize,
    pub micro_batch: usize,
    /// Hard cap on optimization steps; the only stopping rule.
    pub max_steps: usize,
    pub learning_rate: f64,
    pub group_size: usize,
    pub reward_mode: RewardMode,
    pub length_budget: usize,
    pub lambda: f64,
    pub format_penalty_on: bool,
    /// Validation rollouts drawn per recorded step.
    pub eval_rollouts: usize,
    pub optimizer: OptimizerConfig,
    pub seeds: TrainSeeds,
}

impl TrainConfig {
    /// Settings for preparing batches for an externally served policy.
    pub fn remote_default() -> Self {
        TrainConfig {
            epochs: 8,
            mini_batch: 768,
            micro_batch: 32,
            max_steps: 10_000,
            learning_rate: 3e-7,
            group_size: 4,
            reward_mode: RewardMode::PointwiseLogprob,
            length_budget: 150,
            lambda: 1e-5,
            format_penalty_on: true,
            eval_rollouts: 32,
            optimizer: OptimizerConfig::default(),
            seeds: TrainSeeds::default(),
        }
    }

    /// Settings for the built-in desk-scale policy. The learning rate is
    /// large because the toy softmax sees raw logits, not transformer
    /// parameters, and its objective weights are 1/(G * C).
    pub fn toy_default() -> Self {
        TrainConfig {
            epochs: 8,
            mini_batch: 8,
            micro_batch: 4,
            max_steps: 400,
            learning_rate: 16.0,
            group_size: 4,
            reward_mode: RewardMode::PointwiseString,
            length_budget: 8,
            lambda: 0.0,
            format_penalty_on: false,
            eval_rollouts: 32,
            optimizer: OptimizerConfig { length_norm_constant: 16.0, ..OptimizerConfig::default() },
            seeds: TrainSeeds::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.epochs == 0 {
            return Err(TrainerError::Config("epochs must be positive".into()));
        }
        if self.mini_batch == 0 || self.micro_batch == 0 {
            return Err(TrainerError::Config("batch sizes must be positive".into()));
        }
        if self.mini_batch % self.micro_batch != 0 {
            return Err(TrainerError::Config(format!(
                "micro_batch {} must divide mini_batch {}",
                self.micro_batch, self.mini_batch
            )));
        }
        if self.max_steps == 0 {
            return Err(TrainerError::Config("max_steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainerError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.length_budget == 0 {
            return Err(TrainerError::Config("length_budget must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainerError::Config(format!("lambda {} must not be negative", self.lambda)));
        }
        if self.eval_rollouts == 0 {
            return Err(TrainerError::Config("eval_rollouts must be positive".into()));
        }
        self.optimizer.validate()?;
        if self.group_size != self.optimizer.group_size {
            return Err(TrainerError::Config(format!(
                "group_size {} disagrees with optimizer group_size {}",
                self.group_size, self.optimizer.group_size
            )));
        }
        Ok(())
    }
}

/// Result of a toy training run: the trained policy, the frozen reference it
/// started from, and the per-step metrics history.
#[derive(Debug, Clone)]
pub struct ToyTrainingOutcome {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub metrics: Vec<MetricsRecord>,
}

impl ToyTrainingOutcome {
    /// Persist checkpoint plus metrics (JSONL and CSV) under `dir`.
    pub fn save(&self, dir: &Path, seeds: &TrainSeeds) -> Result<(), TrainerError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainerError::io(dir, e))?;
        let checkpoint =
            PolicyCheckpoint::capture(&self.policy, seeds.sampling, self.metrics.len() as u64);
        checkpoint.save(&dir.join("checkpoint.json"))?;
        crate::dataset::jsonl::write_jsonl(&dir.join("metrics.jsonl"), &self.metrics)?;
        write_metrics_csv(&dir.join("metrics.csv"), &self.metrics)?;
        Ok(())
    }
}

/// Mean reward and length of fresh rollouts, with no parameter updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub mean_length: f64,
    pub count: usize,
}

/// Composed reward and length of `count` held-out rollouts, one pair per
/// rollout. Contexts cycle through the personas; randomness comes only from
/// `eval_seed`. This is the population behind [`evaluate_toy`], exposed so
/// callers can resample it (for example to bootstrap a standard error).
pub fn toy_validation_rewards(
    policy: &ToyPolicy,
    env: &ToyEnvironment,
    config: &TrainConfig,
    eval_seed: u64,
    count: usize,
) -> Result<Vec<(f64, usize)>, TrainerError> {
    if count == 0 {
        return Err(TrainerError::EmptyValidation);
    }
    let mut rewards = Vec::with_capacity(count);
    for ordinal in 0..count {
        let persona = ordinal % env.config().persona_count;
        let rollout = policy
            .sample(
                persona as u64,
                env.config().temperature,
                1,
                mix_seed(eval_seed, ordinal as u64),
            )
            .pop()
            .expect("one rollout requested");
        let base = env.base_reward(persona, &rollout)?;
        let breakdown = compose_total(
            base,
            rollout.token_count,
            &rollout.text,
            config.lambda,
            config.length_budget,
            config.format_penalty_on,
            RewardFlags::NONE,
        );
        rewards.push((breakdown.total, rollout.token_count));
    }
    Ok(rewards)
}

/// Score `count` held-out rollouts under the current policy. Contexts cycle
/// through the personas; randomness comes only from `eval_seed`.
pub fn evaluate_toy(
    policy: &ToyPolicy,
    env: &ToyEnvironment,
    config: &TrainConfig,
    eval_seed: u64,
    count: usize,
) -> Result<EvalSummary, TrainerError> {
    let rewards = toy_validation_rewards(policy, env, config, eval_seed, count)?;
    let reward_sum: f64 = rewards.iter().map(|(r, _)| r).sum();
    let length_sum: f64 = rewards.iter().map(|(_, n)| *n as f64).sum();
    Ok(EvalSummary {
        mean_reward: reward_sum / count as f64,
        mean_length: length_sum / count as f64,
        count,
    })
}

/// Incremental driver for toy training. Construction freezes the reference
/// policy; every [`ToyTrainer::step`] call runs exactly one optimizer update
/// and appends one metrics record, so callers can persist state between
/// steps. [`run_toy_training`] is the plain run-to-completion wrapper.
pub struct ToyTrainer<'a> {
    config: TrainConfig,
    env: &'a ToyEnvironment,
    reference: ToyPolicy,
    policy: ToyPolicy,
    metrics: Vec<MetricsRecord>,
}

impl<'a> ToyTrainer<'a> {
    pub fn new(config: &TrainConfig, env: &'a ToyEnvironment) -> Result<Self, TrainerError> {
        config.validate()?;
        let reference = env.init_policy()?;
        let policy = reference.snapshot();
        Ok(ToyTrainer {
            config: config.clone(),
            env,
            reference,
            policy,
            metrics: Vec::with_capacity(config.max_steps),
        })
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    /// True once `max_steps` updates have been applied.
    pub fn is_done(&self) -> bool {
        self.metrics.len() >= self.config.max_steps
    }

    pub fn into_outcome(self) -> ToyTrainingOutcome {
        ToyTrainingOutcome {
            policy: self.policy,
            reference: self.reference,
            metrics: self.metrics,
        }
    }

    /// Run one full optimizer step and return its metrics record.
    pub fn step(&mut self) -> Result<&MetricsRecord, TrainerError> {
        let config = &self.config;
        let env = self.env;
        let step = self.metrics.len() as u64;
        let started = Instant::now();
        let old = self.policy.snapshot();
        let mut grad = self.policy.zero_gradient();
        let mut group_count = 0usize;
        let mut rollout_count = 0usize;
        let mut reward_sum = 0.0;
        let mut length_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut entropy_exact_sum = 0.0;
        let mut entropy_proxy_sum = 0.0;

        let ordinals: Vec<u64> =
            (0..config.mini_batch as u64).map(|ci| step * config.mini_batch as u64 + ci).collect();
        for micro in ordinals.chunks(config.micro_batch) {
            for &ordinal in micro {
                let persona = env.persona_at(config.seeds.data, ordinal);
                let sampled = old.sample(
                    persona as u64,
                    env.config().temperature,
                    config.group_size,
                    mix_seed(config.seeds.sampling, ordinal),
                );
                // Re-derive logprobs at temperature one under the snapshot:
                // these are the "old" terms of the ratio regardless of the
                // sampling temperature.
                let mut rollouts = Vec::with_capacity(sampled.len());
                for r in &sampled {
                    let logprobs = old.logprob_of(&r.tokens)?;
                    rollouts.push(Rollout::new(r.tokens.clone(), r.text.clone(), logprobs)?);
                }

                let mut totals = Vec::with_capacity(rollouts.len());
                for r in &rollouts {
                    let base = env.base_reward(persona, r)?;
                    let breakdown = compose_total(
                        base,
                        r.token_count,
                        &r.text,
                        config.lambda,
                        config.length_budget,
                        config.format_penalty_on,
                        RewardFlags::NONE,
                    );
                    totals.push(breakdown.total);
                }
                let advantages = group_advantages(&totals, config.optimizer.mode)?;

                for r in &rollouts {
                    let step_entropies: Vec<f64> =
                        (0..r.tokens.len()).map(|p| old.step_entropy(p)).collect();
                    entropy_exact_sum += sequence_entropy(&step_entropies, EntropyMode::Exact)?;
                    entropy_proxy_sum += sequence_entropy(&r.token_logprobs, EntropyMode::Proxy)?;
                }
                reward_sum += totals.iter().sum::<f64>();
                length_sum += rollouts.iter().map(|r| r.token_count as f64).sum::<f64>();
                rollout_count += rollouts.len();

                let ref_logprobs: Vec<Vec<f64>> = rollouts
                    .iter()
                    .map(|r| self.reference.logprob_of(&r.tokens))
                    .collect::<Result<_, _>>()?;
                let batch = GroupBatch::new(
                    format!("step{step}-ctx{ordinal}"),
                    rollouts,
                    totals,
                    advantages,
                    ref_logprobs,
                )?;
                let new_logprobs: Vec<Vec<f64>> = batch
                    .rollouts
                    .iter()
                    .map(|r| self.policy.logprob_of(&r.tokens))
                    .collect::<Result<_, _>>()?;
                let eval = group_objective(&batch, &new_logprobs, &config.optimizer)?;
                // Pre-update policies coincide, so no ratio can be clipped.
                debug_assert_eq!(eval.clip_fraction, 0.0);
                for (i, r) in batch.rollouts.iter().enumerate() {
                    self.policy.accumulate_logprob_grad(
                        &r.tokens,
                        &eval.token_grads[i],
                        &mut grad,
                    )?;
                }
                kl_sum += eval.mean_kl;
                group_count += 1;
            }
        }

        grad.scale(1.0 / group_count as f64);
        self.policy.apply_update(&grad, config.learning_rate)?;

        let val = evaluate_toy(
            &self.policy,
            env,
            config,
            config.seeds.evaluation,
            config.eval_rollouts,
        )?;
        self.metrics.push(MetricsRecord {
            step,
            train_reward: reward_sum / rollout_count as f64,
            val_reward: val.mean_reward,
            mean_length: length_sum / rollout_count as f64,
            mean_kl: kl_sum / group_count as f64,
            entropy_exact: Some(entropy_exact_sum / rollout_count as f64),
            entropy_proxy: Some(entropy_proxy_sum / rollout_count as f64),
            parse_failure_rate: 0.0,
            wall_clock_ms: started.elapsed().as_millis() as u64,
        });
        Ok(self.metrics.last().expect("record just pushed"))
    }
}

/// Train the toy policy. Each step snapshots the current policy, samples
/// `group_size` rollouts for each of `mini_batch` contexts (accumulated in
/// `micro_batch` chunks), scores them with the environment oracle plus the
/// configured penalties, and applies exactly one gradient update.
pub fn run_toy_training(
    config: &TrainConfig,
    env: &ToyEnvironment,
) -> Result<ToyTrainingOutcome, TrainerError> {
    let mut trainer = ToyTrainer::new(config, env)?;
    while !trainer.is_done() {
        trainer.step()?;
    }
    Ok(trainer.into_outcome())
}
