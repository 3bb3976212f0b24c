//! Differentiable toy sequence policy: softmax over a small vocabulary with
//! a reserved stop symbol, either one shared logit row or one row per
//! position. Small enough that objective gradients can be checked against
//! finite differences, yet it exercises the full sample/score/update loop.

use crate::domain::Rollout;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Reserved stop symbol; sampling it ends the rollout (it is kept in the
/// token sequence so the stop decision receives gradient).
pub const STOP_TOKEN: u32 = 0;

/// Hard ceiling on rollout length for the toy policy.
pub const MAX_TOY_LENGTH: usize = 32;

/// Which frozen copy of the policy a logprob sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyRole {
    Current,
    Old,
    Reference,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy shape: {0}")]
    InvalidShape(String),
    #[error("token {0} out of vocabulary (size {1})")]
    OutOfVocab(u32, usize),
    #[error("gradient shape mismatch: {0}")]
    GradientShape(String),
    #[error("checkpoint version {0} unsupported (expected {CHECKPOINT_VERSION})")]
    CheckpointVersion(u32),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// SplitMix64 step; used to fold several named seeds into one rng stream so
/// every random draw in the system traces back to explicit seed values.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub rows: Vec<Vec<f64>>,
}

impl PolicyGradient {
    pub fn norm(&self) -> f64 {
        self.rows.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.rows {
            for g in row {
                *g *= factor;
            }
        }
    }

    pub fn add(&mut self, other: &PolicyGradient) -> Result<(), PolicyError> {
        if self.rows.len() != other.rows.len() {
            return Err(PolicyError::GradientShape(format!(
                "{} rows vs {}",
                self.rows.len(),
                other.rows.len()
            )));
        }
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab_size: usize,
    max_length: usize,
    /// One row for a shared table, `max_length` rows for per-position logits.
    logits: Vec<Vec<f64>>,
}

impl ToyPolicy {
    /// Policy with a single logit row shared across positions.
    pub fn shared(vocab_size: usize, max_length: usize) -> Result<Self, PolicyError> {
        Self::validate_dims(vocab_size, max_length)?;
        Ok(ToyPolicy { vocab_size, max_length, logits: vec![vec![0.0; vocab_size]] })
    }

    /// Policy with an independent logit row per position.
    pub fn per_position(vocab_size: usize, max_length: usize) -> Result<Self, PolicyError> {
        Self::validate_dims(vocab_size, max_length)?;
        Ok(ToyPolicy { vocab_size, max_length, logits: vec![vec![0.0; vocab_size]; max_length] })
    }

    fn validate_dims(vocab_size: usize, max_length: usize) -> Result<(), PolicyError> {
        if vocab_size < 2 {
            return Err(PolicyError::InvalidShape(format!(
                "vocab_size {vocab_size} (need at least 2: stop symbol plus content)"
            )));
        }
        if max_length == 0 || max_length > MAX_TOY_LENGTH {
            return Err(PolicyError::InvalidShape(format!(
                "max_length {max_length} (need 1..={MAX_TOY_LENGTH})"
            )));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn parameter_count(&self) -> usize {
        self.logits.len() * self.vocab_size
    }

    pub fn is_per_position(&self) -> bool {
        self.logits.len() > 1
    }

    /// Add a fixed bias to one symbol's logit in every row. Used to model
    /// prompt-level steering (a raised stop logit shortens rollouts).
    pub fn add_logit_bias(&mut self, symbol: u32, bias: f64) -> Result<(), PolicyError> {
        if symbol as usize >= self.vocab_size {
            return Err(PolicyError::OutOfVocab(symbol, self.vocab_size));
        }
        for row in &mut self.logits {
            row[symbol as usize] += bias;
        }
        Ok(())
    }

    fn row(&self, position: usize) -> &[f64] {
        if self.logits.len() == 1 {
            &self.logits[0]
        } else {
            &self.logits[position]
        }
    }

    fn row_index(&self, position: usize) -> usize {
        if self.logits.len() == 1 {
            0
        } else {
            position
        }
    }

    /// Log-probabilities at one position under temperature scaling. The
    /// resulting distribution is exactly what sampling at this temperature
    /// draws from.
    pub fn step_logprobs(&self, position: usize, temperature: f64) -> Vec<f64> {
        assert!(temperature > 0.0, "temperature must be positive");
        let row = self.row(position);
        let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = scaled.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        scaled.iter().map(|l| l - log_z).collect()
    }

    pub fn step_probs(&self, position: usize, temperature: f64) -> Vec<f64> {
        self.step_logprobs(position, temperature).iter().map(|lp| lp.exp()).collect()
    }

    /// Entropy (nats) of the full step distribution at temperature 1.
    pub fn step_entropy(&self, position: usize) -> f64 {
        self.step_logprobs(position, 1.0)
            .iter()
            .map(|lp| {
                let p = lp.exp();
                if p > 0.0 {
                    -p * lp
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Draw `count` rollouts. Generation walks positions left to right,
    /// stops at the stop symbol (recorded, so it gets gradient) or at
    /// `max_length`. Logprobs are recorded under the tempered distribution
    /// actually sampled from, so importance ratios later line up with it.
    /// The stream is fully determined by (context_seed, rng_seed).
    pub fn sample(
        &self,
        context_seed: u64,
        temperature: f64,
        count: usize,
        rng_seed: u64,
    ) -> Vec<Rollout> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, context_seed));
        (0..count).map(|_| self.sample_one(temperature, &mut rng)).collect()
    }

    fn sample_one(&self, temperature: f64, rng: &mut ChaCha8Rng) -> Rollout {
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        for position in 0..self.max_length {
            let step = self.step_logprobs(position, temperature);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = self.vocab_size - 1;
            for (v, lp) in step.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    chosen = v;
                    break;
                }
            }
            // Clamp a zero logprob so the recorded value stays <= 0 even
            // after the exp/ln round trip of a saturated softmax.
            tokens.push(chosen as u32);
            logprobs.push(step[chosen].min(0.0));
            if chosen as u32 == STOP_TOKEN {
                break;
            }
        }
        let text = render_symbols(&tokens);
        Rollout::new(tokens, text, logprobs).expect("sampled rollout is well formed")
    }

    /// Exact per-token logprobs of an existing token sequence at temperature
    /// one. Rejects out-of-vocabulary tokens and over-long sequences.
    pub fn logprob_of(&self, tokens: &[u32]) -> Result<Vec<f64>, PolicyError> {
        if tokens.len() > self.max_length {
            return Err(PolicyError::InvalidShape(format!(
                "{} tokens exceed max_length {}",
                tokens.len(),
                self.max_length
            )));
        }
        let mut out = Vec::with_capacity(tokens.len());
        for (position, &tok) in tokens.iter().enumerate() {
            if tok as usize >= self.vocab_size {
                return Err(PolicyError::OutOfVocab(tok, self.vocab_size));
            }
            let step = self.step_logprobs(position, 1.0);
            out.push(step[tok as usize].min(0.0));
        }
        Ok(out)
    }

    /// Zeroed gradient buffer matching this policy's parameter shape.
    pub fn zero_gradient(&self) -> PolicyGradient {
        PolicyGradient { rows: self.logits.iter().map(|row| vec![0.0; row.len()]).collect() }
    }

    /// Accumulate d(sum_t coeff[t] * log pi(tokens[t] | position t)) / d theta
    /// into `grad`. For a softmax row, d log pi(v*) / d logit(v) is
    /// indicator(v = v*) - pi(v).
    pub fn accumulate_logprob_grad(
        &self,
        tokens: &[u32],
        coeffs: &[f64],
        grad: &mut PolicyGradient,
    ) -> Result<(), PolicyError> {
        if tokens.len() != coeffs.len() {
            return Err(PolicyError::GradientShape(format!(
                "{} tokens vs {} coefficients",
                tokens.len(),
                coeffs.len()
            )));
        }
        if grad.rows.len() != self.logits.len() {
            return Err(PolicyError::GradientShape(format!(
                "{} gradient rows vs {} parameter rows",
                grad.rows.len(),
                self.logits.len()
            )));
        }
        for (position, (&tok, &coeff)) in tokens.iter().zip(coeffs).enumerate() {
            if tok as usize >= self.vocab_size {
                return Err(PolicyError::OutOfVocab(tok, self.vocab_size));
            }
            if coeff == 0.0 {
                continue;
            }
            let probs = self.step_probs(position, 1.0);
            let row = &mut grad.rows[self.row_index(position)];
            for v in 0..self.vocab_size {
                let indicator = (v == tok as usize) as u8 as f64;
                row[v] += coeff * (indicator - probs[v]);
            }
        }
        Ok(())
    }

    /// Plain gradient ascent: theta += learning_rate * grad.
    pub fn apply_update(
        &mut self,
        grad: &PolicyGradient,
        learning_rate: f64,
    ) -> Result<(), PolicyError> {
        if grad.rows.len() != self.logits.len() {
            return Err(PolicyError::GradientShape(format!(
                "{} gradient rows vs {} parameter rows",
                grad.rows.len(),
                self.logits.len()
            )));
        }
        for (row, grow) in self.logits.iter_mut().zip(&grad.rows) {
            if grow.len() != row.len() {
                return Err(PolicyError::GradientShape(format!(
                    "{} gradient columns vs {} parameters",
                    grow.len(),
                    row.len()
                )));
            }
            for (theta, g) in row.iter_mut().zip(grow) {
                *theta += learning_rate * g;
            }
        }
        Ok(())
    }

    /// Deep frozen copy; snapshotting a snapshot yields an equal policy.
    pub fn snapshot(&self) -> ToyPolicy {
        self.clone()
    }
}

/// Text rendering of toy tokens: the stop symbol is silent, symbol 1 renders
/// as a paragraph break and everything else as a word, so format and length
/// penalties both have something real to act on.
pub const PARAGRAPH_TOKEN: u32 = 1;

pub fn render_symbols(tokens: &[u32]) -> String {
    let mut out = String::new();
    let mut need_space = false;
    for &tok in tokens {
        if tok == STOP_TOKEN {
            continue;
        }
        if tok == PARAGRAPH_TOKEN {
            out.push_str("\n\n");
            need_space = false;
            continue;
        }
        if need_space {
            out.push(' ');
        }
        out.push_str(&format!("w{tok}"));
        need_space = true;
    }
    out
}

/// Version stamp of the checkpoint layout.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized training state: policy parameters plus the named rng position
/// (seed and completed-step counter) so a run can be inspected or resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub vocab_size: usize,
    pub max_length: usize,
    pub logits: Vec<Vec<f64>>,
    pub rng_seed: u64,
    pub rng_counter: u64,
}

impl PolicyCheckpoint {
    pub fn capture(policy: &ToyPolicy, rng_seed: u64, rng_counter: u64) -> Self {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            vocab_size: policy.vocab_size,
            max_length: policy.max_length,
            logits: policy.logits.clone(),
            rng_seed,
            rng_counter,
        }
    }

    pub fn restore(&self) -> Result<ToyPolicy, PolicyError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::CheckpointVersion(self.version));
        }
        ToyPolicy::validate_dims(self.vocab_size, self.max_length)?;
        for row in &self.logits {
            if row.len() != self.vocab_size {
                return Err(PolicyError::InvalidShape(format!(
                    "checkpoint row of {} logits vs vocab_size {}",
                    row.len(),
                    self.vocab_size
                )));
            }
        }
        Ok(ToyPolicy {
            vocab_size: self.vocab_size,
            max_length: self.max_length,
            logits: self.logits.clone(),
        })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
