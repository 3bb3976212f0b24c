//! Scripted desk-scale environment for exercising the full training loop.
//! Contexts are persona ids; the oracle rewards rollouts for containing (or
//! repeating) the persona's target symbol, or ranks five symbol-keyed items
//! by how often each item's symbol occurs. Ground truth is exact, so
//! learning curves are attributable to the optimizer alone.

use crate::domain::{ActionLabel, Rollout, LISTWISE_ARITY};
use crate::policy::{mix_seed, ToyPolicy, MAX_TOY_LENGTH, PARAGRAPH_TOKEN, STOP_TOKEN};
use crate::reward::{listwise_reward, RelevanceGains};
use crate::trainer::TrainerError;
use serde::{Deserialize, Serialize};

/// Symbols 0 and 1 are reserved (stop, paragraph break); targets start here.
pub const FIRST_TARGET_TOKEN: u32 = 2;

/// Label pattern rotated per persona for the ranking oracle. Deliberately
/// not gain-descending in input order, so a policy that never influences the
/// ranking scores well below the ceiling.
const LISTWISE_LABEL_BASE: [ActionLabel; LISTWISE_ARITY] = [
    ActionLabel::Skip,
    ActionLabel::View,
    ActionLabel::Apply,
    ActionLabel::View,
    ActionLabel::Skip,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyRewardKind {
    /// 1.0 iff the persona's target symbol appears at least once.
    Presence,
    /// One point per occurrence of the target symbol; rewards verbosity.
    PerOccurrence,
    /// Entropy-weighted ranking quality of five symbol-keyed items.
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEnvConfig {
    pub vocab_size: usize,
    pub max_length: usize,
    pub persona_count: usize,
    pub reward_kind: ToyRewardKind,
    /// Added to the stop symbol's initial logit; the toy analogue of
    /// prompting the actor for short outputs.
    pub stop_bias: f64,
    pub temperature: f64,
    pub per_position: bool,
}

impl Default for ToyEnvConfig {
    fn default() -> Self {
        ToyEnvConfig {
            vocab_size: 10,
            max_length: 16,
            persona_count: 2,
            reward_kind: ToyRewardKind::Presence,
            stop_bias: 1.5,
            temperature: 1.0,
            per_position: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyEnvironment {
    config: ToyEnvConfig,
    gains: RelevanceGains,
}

impl ToyEnvironment {
    pub fn new(config: ToyEnvConfig) -> Result<Self, TrainerError> {
        let span = config.vocab_size.saturating_sub(FIRST_TARGET_TOKEN as usize);
        if span == 0 {
            return Err(TrainerError::Config(format!(
                "vocab_size {} leaves no target symbols",
                config.vocab_size
            )));
        }
        if config.persona_count == 0 {
            return Err(TrainerError::Config("persona_count must be positive".into()));
        }
        if config.max_length == 0 || config.max_length > MAX_TOY_LENGTH {
            return Err(TrainerError::Config(format!(
                "max_length {} outside 1..={MAX_TOY_LENGTH}",
                config.max_length
            )));
        }
        if !(config.temperature > 0.0) {
            return Err(TrainerError::Config(format!(
                "temperature {} must be positive",
                config.temperature
            )));
        }
        if config.reward_kind == ToyRewardKind::Listwise && span < LISTWISE_ARITY {
            return Err(TrainerError::Config(format!(
                "ranking oracle needs {LISTWISE_ARITY} distinct symbols, vocab_size {} offers {span}",
                config.vocab_size
            )));
        }
        Ok(ToyEnvironment { config, gains: RelevanceGains::default() })
    }

    pub fn config(&self) -> &ToyEnvConfig {
        &self.config
    }

    fn symbol_span(&self) -> usize {
        self.config.vocab_size - FIRST_TARGET_TOKEN as usize
    }

    /// Fresh policy at the committed initialization: flat logits except for
    /// the stop bias that keeps early rollouts short.
    pub fn init_policy(&self) -> Result<ToyPolicy, TrainerError> {
        let mut policy = if self.config.per_position {
            ToyPolicy::per_position(self.config.vocab_size, self.config.max_length)?
        } else {
            ToyPolicy::shared(self.config.vocab_size, self.config.max_length)?
        };
        policy.add_logit_bias(STOP_TOKEN, self.config.stop_bias)?;
        Ok(policy)
    }

    /// Deterministic persona stream: the ordinal-th context of a run.
    pub fn persona_at(&self, data_seed: u64, ordinal: u64) -> usize {
        (mix_seed(data_seed, ordinal) % self.config.persona_count as u64) as usize
    }

    pub fn target_symbol(&self, persona: usize) -> u32 {
        FIRST_TARGET_TOKEN + (persona % self.symbol_span()) as u32
    }

    /// Labels for the persona's five ranked items (always non-uniform).
    pub fn listwise_labels(&self, persona: usize) -> Vec<ActionLabel> {
        (0..LISTWISE_ARITY).map(|j| LISTWISE_LABEL_BASE[(j + persona) % LISTWISE_ARITY]).collect()
    }

    /// Symbol keying ranked item `j` for the persona; distinct across j.
    pub fn item_symbol(&self, persona: usize, j: usize) -> u32 {
        FIRST_TARGET_TOKEN + ((persona + j) % self.symbol_span()) as u32
    }

    /// The oracle's ranking: items sorted by how often their symbol occurs,
    /// most frequent first, ties kept in input order.
    pub fn ranking(&self, persona: usize, tokens: &[u32]) -> Vec<usize> {
        let counts: Vec<usize> = (0..LISTWISE_ARITY)
            .map(|j| {
                let symbol = self.item_symbol(persona, j);
                tokens.iter().filter(|&&t| t == symbol).count()
            })
            .collect();
        let mut order: Vec<usize> = (0..LISTWISE_ARITY).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
        order
    }

    /// Scripted base reward, before length and format penalties.
    pub fn base_reward(&self, persona: usize, rollout: &Rollout) -> Result<f64, TrainerError> {
        match self.config.reward_kind {
            ToyRewardKind::Presence => {
                let target = self.target_symbol(persona);
                Ok(rollout.tokens.iter().any(|&t| t == target) as u8 as f64)
            }
            ToyRewardKind::PerOccurrence => {
                let target = self.target_symbol(persona);
                Ok(rollout.tokens.iter().filter(|&&t| t == target).count() as f64)
            }
            ToyRewardKind::Listwise => {
                let order = self.ranking(persona, &rollout.tokens);
                let labels = self.listwise_labels(persona);
                Ok(listwise_reward(&order, &labels, &self.gains)?)
            }
        }
    }

    /// Fraction of sampled rollouts rendering as two or more paragraphs;
    /// used to compare format-penalty runs.
    pub fn multi_paragraph_frequency(&self, policy: &ToyPolicy, seed: u64, samples: usize) -> f64 {
        let mut hits = 0usize;
        for ordinal in 0..samples {
            let rollout = &policy.sample(
                (ordinal % self.config.persona_count) as u64,
                self.config.temperature,
                1,
                mix_seed(seed, ordinal as u64),
            )[0];
            if crate::reward::format_penalty(&rollout.text) < 0.0 {
                hits += 1;
            }
        }
        hits as f64 / samples.max(1) as f64
    }
}

// Quiet use of the reserved paragraph symbol so the constant is clearly part
// of this module's vocabulary contract.
const _: () = assert!(PARAGRAPH_TOKEN == 1 && STOP_TOKEN == 0);
