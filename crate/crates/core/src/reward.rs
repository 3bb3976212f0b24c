//! Reward stack for scored rollouts. Base rewards come in three shapes
//! (exact-match string, log-probability margin, entropy-weighted ranking
//! quality); on top of those sit a quadratic over-length penalty and a flat
//! multi-paragraph penalty, combined by [`compose_total`].

use crate::domain::{ActionLabel, RewardBreakdown, RewardFlags};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("empty label list")]
    EmptyLabels,
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("undefined ideal: all gains are zero")]
    UndefinedIdeal,
    #[error("invalid clip interval: low {low} must be below high {high}")]
    InvalidClipInterval { low: f64, high: f64 },
}

/// Closed clipping interval for the log-probability reward.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClipInterval {
    pub low: f64,
    pub high: f64,
}

impl ClipInterval {
    pub fn new(low: f64, high: f64) -> Result<Self, RewardError> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(RewardError::InvalidClipInterval { low, high });
        }
        Ok(ClipInterval { low, high })
    }
}

/// Empirically chosen bounds keeping the margin reward in a trainable range.
pub const REWARD_CLIP: ClipInterval = ClipInterval { low: -4.0, high: 6.0 };

/// Linear relevance gains per action; apply must outrank view outrank skip.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RelevanceGains {
    pub apply: f64,
    pub view: f64,
    pub skip: f64,
}

impl Default for RelevanceGains {
    fn default() -> Self {
        RelevanceGains { apply: 5.0, view: 1.0, skip: 0.0 }
    }
}

impl RelevanceGains {
    pub fn gain(&self, label: ActionLabel) -> f64 {
        match label {
            ActionLabel::Apply => self.apply,
            ActionLabel::View => self.view,
            ActionLabel::Skip => self.skip,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.apply > self.view && self.view > self.skip
    }
}

/// Tokens per rollout before the over-length penalty starts to bind.
pub const DEFAULT_LENGTH_BUDGET: usize = 150;

/// Weight of the length penalty inside the composed total.
pub const DEFAULT_LENGTH_LAMBDA: f64 = 1e-5;

fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase()
}

/// Exact-match reward on the judge's one-word verdict. "yes"/"no" (any case,
/// surrounding whitespace or punctuation ignored) map to a 0/1 agreement
/// check against the label; anything else scores 0 with `parse_failure` set.
pub fn pointwise_string_reward(predicted_word: &str, label: u8) -> (f64, RewardFlags) {
    let mut flags = RewardFlags::NONE;
    let predicted = match normalize_word(predicted_word).as_str() {
        "yes" => 1u8,
        "no" => 0u8,
        _ => {
            flags.parse_failure = true;
            return (0.0, flags);
        }
    };
    ((predicted == label) as u8 as f64, flags)
}

/// Signed margin used by [`pointwise_logprob_reward`] before clipping.
/// Antisymmetric in the label: flipping it negates the value.
pub fn logprob_margin(logp_yes: f64, logp_no: f64, label: u8) -> f64 {
    (2.0 * label as f64 - 1.0) * (logp_yes - logp_no)
}

/// Soft reward from the judge's yes/no log-probabilities: the label-signed
/// margin, clipped to `clip`. Missing tokens arrive as -inf; when only one
/// side is missing the margin saturates at the matching clip bound exactly,
/// and when both are missing there is no signal, so the reward is 0 with
/// `logprob_missing_both` set.
pub fn pointwise_logprob_reward(
    logp_yes: f64,
    logp_no: f64,
    label: u8,
    clip: ClipInterval,
) -> (f64, RewardFlags) {
    let mut flags = RewardFlags::NONE;
    if logp_yes == f64::NEG_INFINITY && logp_no == f64::NEG_INFINITY {
        flags.logprob_missing_both = true;
        return (0.0, flags);
    }
    let raw = logprob_margin(logp_yes, logp_no, label);
    if raw < clip.low {
        flags.clipped = true;
        (clip.low, flags)
    } else if raw > clip.high {
        flags.clipped = true;
        (clip.high, flags)
    } else {
        (raw, flags)
    }
}

/// Shannon entropy (nats) of the empirical label distribution. Ranges over
/// [0, ln 3] for three action classes; 0 iff all labels agree.
pub fn label_entropy(labels: &[ActionLabel]) -> Result<f64, RewardError> {
    if labels.is_empty() {
        return Err(RewardError::EmptyLabels);
    }
    let n = labels.len() as f64;
    let mut entropy = 0.0;
    for class in ActionLabel::ALL {
        let count = labels.iter().filter(|l| **l == class).count();
        if count > 0 {
            let f = count as f64 / n;
            entropy -= f * f.ln();
        }
    }
    Ok(entropy)
}

fn dcg(order: &[usize], labels: &[ActionLabel], gains: &RelevanceGains) -> f64 {
    order
        .iter()
        .enumerate()
        .map(|(k, &j)| gains.gain(labels[j]) / ((k + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain of `predicted_order` against the
/// labels, with linear gains and log2(rank+1) discounts. The ideal ordering
/// lists gains descending, so any gain-descending prediction scores exactly 1.
pub fn ndcg(
    predicted_order: &[usize],
    labels: &[ActionLabel],
    gains: &RelevanceGains,
) -> Result<f64, RewardError> {
    check_permutation(predicted_order, labels.len())?;
    if labels.iter().all(|l| gains.gain(*l) == 0.0) {
        return Err(RewardError::UndefinedIdeal);
    }
    let n = labels.len();
    // The ideal order sorts gains descending; computing it through the same
    // rank-ordered sum keeps ideal predictions at exactly 1.0.
    let mut ideal: Vec<usize> = (0..n).collect();
    ideal.sort_by(|&a, &b| {
        gains
            .gain(labels[b])
            .partial_cmp(&gains.gain(labels[a]))
            .expect("gains are finite")
    });
    Ok(dcg(predicted_order, labels, gains) / dcg(&ideal, labels, gains))
}

fn check_permutation(predicted_order: &[usize], n: usize) -> Result<(), RewardError> {
    if n == 0 {
        return Err(RewardError::EmptyLabels);
    }
    if predicted_order.len() != n {
        return Err(RewardError::InvalidRanking(format!(
            "order has {} entries for {} items",
            predicted_order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &j in predicted_order {
        if j >= n {
            return Err(RewardError::InvalidRanking(format!("index {j} out of range")));
        }
        if seen[j] {
            return Err(RewardError::InvalidRanking(format!("index {j} repeated")));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Ranking reward: label entropy times ranking quality. Uniform-label lists
/// carry zero entropy, so their reward is identically zero regardless of the
/// predicted order; that includes all-skip lists whose NDCG alone would be
/// undefined.
pub fn listwise_reward(
    predicted_order: &[usize],
    labels: &[ActionLabel],
    gains: &RelevanceGains,
) -> Result<f64, RewardError> {
    check_permutation(predicted_order, labels.len())?;
    let entropy = label_entropy(labels)?;
    if entropy == 0.0 {
        return Ok(0.0);
    }
    Ok(entropy * ndcg(predicted_order, labels, gains)?)
}

/// Quadratic penalty on tokens past the budget; zero at or under it.
pub fn length_penalty(token_count: usize, budget: usize) -> f64 {
    if token_count <= budget {
        0.0
    } else {
        let over = (token_count - budget) as f64;
        -(over * over)
    }
}

/// Splits on runs of two or more newline characters after trimming.
fn paragraph_count(text: &str) -> usize {
    let trimmed = text.trim();
    let mut count = 0;
    let mut segment_has_content = false;
    let mut newline_run = 0usize;
    for c in trimmed.chars() {
        if c == '\n' {
            newline_run += 1;
            continue;
        }
        if newline_run >= 2 && segment_has_content {
            count += 1;
            segment_has_content = false;
        }
        newline_run = 0;
        if !c.is_whitespace() {
            segment_has_content = true;
        }
    }
    if segment_has_content {
        count += 1;
    }
    count
}

/// Flat -1 penalty when the text forms two or more paragraphs (paragraph =
/// non-empty segment between runs of two or more newlines). Single newlines
/// do not split paragraphs.
pub fn format_penalty(text: &str) -> f64 {
    if paragraph_count(text) >= 2 {
        -1.0
    } else {
        0.0
    }
}

/// Combine a base reward with the auxiliary penalties:
/// `total = base + lambda * length_penalty + format_penalty`, evaluated once
/// so stored parts always reproduce the stored total bit-for-bit. The format
/// penalty only participates when `apply_format` is set (single-summary
/// scoring wants it, ranking runs don't).
pub fn compose_total(
    base: f64,
    token_count: usize,
    text: &str,
    lambda: f64,
    budget: usize,
    apply_format: bool,
    flags: RewardFlags,
) -> RewardBreakdown {
    let length = length_penalty(token_count, budget);
    let format = if apply_format { format_penalty(text) } else { 0.0 };
    RewardBreakdown {
        base,
        length_penalty: length,
        format_penalty: format,
        lambda,
        total: base + lambda * length + format,
        flags,
    }
}
