//! One TOML file, one table per concern. Every field is optional: missing
//! values fall back to the subcommand's own defaults, and command line flags
//! override whatever the file says. Unknown keys are rejected so a typo
//! fails loudly instead of silently training with a default.

use serde::{Deserialize, Serialize};
use std::path::Path;
use synopsis_core::backend::BackendEndpoint;
use synopsis_core::dataset::GeneratorConfig;
use synopsis_core::optimizer::{NormalizationMode, OptimizerConfig};
use synopsis_core::trainer::{RewardMode, ToyEnvConfig, ToyRewardKind, TrainConfig, TrainSeeds};

use crate::error::CliError;

/// Fallback seed for the train-side label balancing subsample when the
/// config file does not name one.
pub const DEFAULT_DOWNSAMPLE_SEED: u64 = 99;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub gen: GenSection,
    pub train: TrainSection,
    pub toy_env: ToyEnvSection,
    pub optimizer: OptimizerSection,
    pub seeds: SeedsSection,
    pub backend: BackendSection,
}

impl CliConfig {
    /// Parse `path` if given; no file means every field takes its default.
    pub fn load(path: Option<&Path>) -> Result<CliConfig, CliError> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub seed: Option<u64>,
    pub member_count: Option<usize>,
    /// Inclusive [min, max] events per member.
    pub jobs_per_member: Option<[usize; 2]>,
    pub apply_prob: Option<f64>,
    pub view_prob: Option<f64>,
    pub skip_prob: Option<f64>,
    pub persona_count: Option<usize>,
    pub observation_days: Option<u32>,
    pub validation_days: Option<u32>,
    pub context_token_target: Option<usize>,
    pub downsample_seed: Option<u64>,
}

impl GenSection {
    pub fn resolve(&self) -> GeneratorConfig {
        let base = GeneratorConfig::default();
        GeneratorConfig {
            seed: self.seed.unwrap_or(base.seed),
            member_count: self.member_count.unwrap_or(base.member_count),
            jobs_per_member: self
                .jobs_per_member
                .map(|[lo, hi]| (lo, hi))
                .unwrap_or(base.jobs_per_member),
            apply_prob: self.apply_prob.unwrap_or(base.apply_prob),
            view_prob: self.view_prob.unwrap_or(base.view_prob),
            skip_prob: self.skip_prob.unwrap_or(base.skip_prob),
            persona_count: self.persona_count.unwrap_or(base.persona_count),
            observation_days: self.observation_days.unwrap_or(base.observation_days),
            validation_days: self.validation_days.unwrap_or(base.validation_days),
            context_token_target: self
                .context_token_target
                .unwrap_or(base.context_token_target),
        }
    }

    pub fn downsample_seed(&self) -> u64 {
        self.downsample_seed.unwrap_or(DEFAULT_DOWNSAMPLE_SEED)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<u32>,
    pub mini_batch: Option<usize>,
    pub micro_batch: Option<usize>,
    pub max_steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub group_size: Option<usize>,
    pub reward_mode: Option<RewardMode>,
    pub length_budget: Option<usize>,
    pub lambda: Option<f64>,
    pub format_penalty_on: Option<bool>,
    pub eval_rollouts: Option<usize>,
}

impl TrainSection {
    /// Overlay the file values onto `base`, then fold in the optimizer and
    /// seed tables. A bare `group_size` here also retunes the optimizer's
    /// unless `[optimizer]` pins its own (the final validate catches a
    /// genuine mismatch).
    pub fn resolve(
        &self,
        base: TrainConfig,
        optimizer: &OptimizerSection,
        seeds: &SeedsSection,
    ) -> TrainConfig {
        let mut config = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            mini_batch: self.mini_batch.unwrap_or(base.mini_batch),
            micro_batch: self.micro_batch.unwrap_or(base.micro_batch),
            max_steps: self.max_steps.unwrap_or(base.max_steps),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            group_size: self.group_size.unwrap_or(base.group_size),
            reward_mode: self.reward_mode.unwrap_or(base.reward_mode),
            length_budget: self.length_budget.unwrap_or(base.length_budget),
            lambda: self.lambda.unwrap_or(base.lambda),
            format_penalty_on: self.format_penalty_on.unwrap_or(base.format_penalty_on),
            eval_rollouts: self.eval_rollouts.unwrap_or(base.eval_rollouts),
            optimizer: optimizer.resolve(base.optimizer),
            seeds: seeds.resolve(base.seeds),
        };
        if optimizer.group_size.is_none() {
            config.optimizer.group_size = config.group_size;
        }
        config
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyEnvSection {
    pub vocab_size: Option<usize>,
    pub max_length: Option<usize>,
    pub persona_count: Option<usize>,
    pub reward_kind: Option<ToyRewardKind>,
    pub stop_bias: Option<f64>,
    pub temperature: Option<f64>,
    pub per_position: Option<bool>,
}

impl ToyEnvSection {
    pub fn resolve(&self) -> ToyEnvConfig {
        let base = ToyEnvConfig::default();
        ToyEnvConfig {
            vocab_size: self.vocab_size.unwrap_or(base.vocab_size),
            max_length: self.max_length.unwrap_or(base.max_length),
            persona_count: self.persona_count.unwrap_or(base.persona_count),
            reward_kind: self.reward_kind.unwrap_or(base.reward_kind),
            stop_bias: self.stop_bias.unwrap_or(base.stop_bias),
            temperature: self.temperature.unwrap_or(base.temperature),
            per_position: self.per_position.unwrap_or(base.per_position),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub group_size: Option<usize>,
    pub eps_low: Option<f64>,
    pub eps_high: Option<f64>,
    pub kl_coeff: Option<f64>,
    pub mode: Option<NormalizationMode>,
    pub length_norm_constant: Option<f64>,
}

impl OptimizerSection {
    pub fn resolve(&self, base: OptimizerConfig) -> OptimizerConfig {
        OptimizerConfig {
            group_size: self.group_size.unwrap_or(base.group_size),
            eps_low: self.eps_low.unwrap_or(base.eps_low),
            eps_high: self.eps_high.unwrap_or(base.eps_high),
            kl_coeff: self.kl_coeff.unwrap_or(base.kl_coeff),
            mode: self.mode.unwrap_or(base.mode),
            length_norm_constant: self
                .length_norm_constant
                .unwrap_or(base.length_norm_constant),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub sampling: Option<u64>,
    pub evaluation: Option<u64>,
    pub data: Option<u64>,
}

impl SeedsSection {
    pub fn resolve(&self, base: TrainSeeds) -> TrainSeeds {
        TrainSeeds {
            sampling: self.sampling.unwrap_or(base.sampling),
            evaluation: self.evaluation.unwrap_or(base.evaluation),
            data: self.data.unwrap_or(base.data),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub actor: Option<EndpointSection>,
    pub reward: Option<EndpointSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
}

impl EndpointSection {
    /// Build the endpoint, picking up the bearer token from the environment.
    /// The token never appears in config files or manifests.
    pub fn resolve(&self) -> Result<BackendEndpoint, CliError> {
        let mut endpoint = BackendEndpoint::new(&self.base_url, &self.model);
        if let Some(t) = self.timeout_secs {
            endpoint.timeout_secs = t;
        }
        if let Some(r) = self.max_retries {
            endpoint.max_retries = r;
        }
        let endpoint = endpoint.with_env_auth();
        endpoint.validate().map_err(CliError::from)?;
        Ok(endpoint)
    }
}

/// Fetch the `[backend.<role>]` table or fail with a config error that names
/// the missing section.
pub fn require_endpoint(
    section: &Option<EndpointSection>,
    role: &str,
) -> Result<BackendEndpoint, CliError> {
    section
        .as_ref()
        .ok_or_else(|| {
            CliError::Config(format!(
                "[backend.{role}] section is required (base_url and model)"
            ))
        })?
        .resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg: CliConfig = toml::from_str("").unwrap();
        let gen = cfg.gen.resolve();
        assert_eq!(gen, GeneratorConfig::default());
        let train = cfg
            .train
            .resolve(TrainConfig::toy_default(), &cfg.optimizer, &cfg.seeds);
        assert_eq!(train, TrainConfig::toy_default());
    }

    #[test]
    fn file_values_override_defaults_and_unknown_keys_fail() {
        let cfg: CliConfig = toml::from_str(
            "[gen]\nseed = 11\nmember_count = 50\n\n[train]\nmax_steps = 7\n\n[optimizer]\nmode = \"grpo\"\n",
        )
        .unwrap();
        assert_eq!(cfg.gen.resolve().seed, 11);
        assert_eq!(cfg.gen.resolve().member_count, 50);
        let train = cfg
            .train
            .resolve(TrainConfig::toy_default(), &cfg.optimizer, &cfg.seeds);
        assert_eq!(train.max_steps, 7);
        assert_eq!(train.optimizer.mode, NormalizationMode::Grpo);

        let err = toml::from_str::<CliConfig>("[gen]\nseeed = 11\n").unwrap_err();
        assert!(err.to_string().contains("seeed"));
    }

    #[test]
    fn train_group_size_follows_into_the_optimizer() {
        let cfg: CliConfig = toml::from_str("[train]\ngroup_size = 8\n").unwrap();
        let train = cfg
            .train
            .resolve(TrainConfig::toy_default(), &cfg.optimizer, &cfg.seeds);
        assert_eq!(train.group_size, 8);
        assert_eq!(train.optimizer.group_size, 8);
        assert!(train.validate().is_ok());
    }

    #[test]
    fn auth_token_never_round_trips_through_serialization() {
        let section = EndpointSection {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            timeout_secs: None,
            max_retries: None,
        };
        let mut endpoint = section.resolve().unwrap();
        endpoint.auth_token = Some("secret-token".into());
        let json = serde_json::to_string(&endpoint).unwrap();
        assert!(!json.contains("secret-token"));
        assert!(!json.contains("auth_token"));
    }
}
