//! Shared data model: engagement records, training samples, rollouts and
//! reward breakdowns. Everything here serializes to JSONL with field names
//! matching the struct fields, so files written by one stage can be read
//! back by any other.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use thiserror::Error;

/// Advantage sums within a group must vanish to this absolute tolerance.
pub const ADVANTAGE_SUM_TOL: f64 = 1e-9;

/// Number of jobs in a listwise sample.
pub const LISTWISE_ARITY: usize = 5;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("rollout shape mismatch: {0} tokens vs {1} logprobs")]
    RolloutShape(usize, usize),
    #[error("rollout logprob at index {0} is positive ({1})")]
    PositiveLogprob(usize, f64),
    #[error("degenerate group: {0} rollouts (need at least 2)")]
    DegenerateGroup(usize),
    #[error("group fields misaligned: {0}")]
    GroupShape(String),
    #[error("group advantages sum to {0}, outside tolerance")]
    UnbalancedAdvantages(f64),
}

/// Engagement action recorded on a job. Relevance order: apply > view > skip.
/// Variants are declared in ascending relevance so the derived `Ord` agrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionLabel {
    Skip,
    View,
    Apply,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 3] = [ActionLabel::Apply, ActionLabel::View, ActionLabel::Skip];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionLabel::Apply => "apply",
            ActionLabel::View => "view",
            ActionLabel::Skip => "skip",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPosting {
    pub job_id: String,
    pub title: String,
    pub company: String,
    pub description: String,
}

impl JobPosting {
    /// Text fields must be non-empty after trimming.
    pub fn is_well_formed(&self) -> bool {
        !self.title.trim().is_empty()
            && !self.company.trim().is_empty()
            && !self.description.trim().is_empty()
    }
}

/// One historical action inside a member context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAction {
    pub job: JobPosting,
    pub action: ActionLabel,
    pub timestamp: i64,
}

/// Everything known about a member before the target activity. The four
/// source fields feed prompt rendering; at least one must carry content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberContext {
    pub member_id: String,
    pub profile_attributes: String,
    pub professional_content: String,
    pub job_search_actions: Vec<JobAction>,
    pub search_queries: Vec<String>,
}

impl MemberContext {
    pub fn has_content(&self) -> bool {
        !self.profile_attributes.trim().is_empty()
            || !self.professional_content.trim().is_empty()
            || !self.job_search_actions.is_empty()
            || self.search_queries.iter().any(|q| !q.trim().is_empty())
    }

    /// Timestamps of recorded actions must be non-decreasing.
    pub fn actions_sorted(&self) -> bool {
        self.job_search_actions
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp)
    }
}

/// Raw log line: a member acted on a job at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub member_id: String,
    pub job: JobPosting,
    pub action: ActionLabel,
    pub timestamp: i64,
}

/// Binary apply-prediction sample. `label` is 1 when the target action was
/// an apply, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSample {
    pub context: MemberContext,
    pub target_job: JobPosting,
    pub label: u8,
}

/// Ranking sample over exactly five jobs with their engagement labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListwiseSample {
    pub context: MemberContext,
    pub target_jobs: Vec<JobPosting>,
    pub labels: Vec<ActionLabel>,
}

/// One sampled completion with the log-probabilities recorded under the
/// policy that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub token_count: usize,
}

impl Rollout {
    pub fn new(tokens: Vec<u32>, text: String, token_logprobs: Vec<f64>) -> Result<Self, DomainError> {
        if tokens.len() != token_logprobs.len() {
            return Err(DomainError::RolloutShape(tokens.len(), token_logprobs.len()));
        }
        for (i, lp) in token_logprobs.iter().enumerate() {
            if *lp > 0.0 {
                return Err(DomainError::PositiveLogprob(i, *lp));
            }
        }
        let token_count = tokens.len();
        Ok(Rollout { tokens, text, token_logprobs, token_count })
    }

    pub fn is_well_formed(&self) -> bool {
        self.token_count == self.tokens.len()
            && self.token_logprobs.len() == self.token_count
            && self.token_logprobs.iter().all(|lp| *lp <= 0.0)
    }
}

/// Diagnostic markers attached to a reward breakdown. Serialized as a set
/// of marker names so the JSONL stream stays self-describing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RewardFlags {
    pub parse_failure: bool,
    pub logprob_missing_both: bool,
    pub clipped: bool,
}

impl RewardFlags {
    pub const NONE: RewardFlags =
        RewardFlags { parse_failure: false, logprob_missing_both: false, clipped: false };

    pub fn any(&self) -> bool {
        self.parse_failure || self.logprob_missing_both || self.clipped
    }

    pub fn merge(self, other: RewardFlags) -> RewardFlags {
        RewardFlags {
            parse_failure: self.parse_failure || other.parse_failure,
            logprob_missing_both: self.logprob_missing_both || other.logprob_missing_both,
            clipped: self.clipped || other.clipped,
        }
    }
}

const FLAG_NAMES: [(&str, fn(&RewardFlags) -> bool); 3] = [
    ("parse_failure", |f| f.parse_failure),
    ("logprob_missing_both", |f| f.logprob_missing_both),
    ("clipped", |f| f.clipped),
];

impl Serialize for RewardFlags {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let set: Vec<&str> =
            FLAG_NAMES.iter().filter(|(_, get)| get(self)).map(|(name, _)| *name).collect();
        let mut seq = serializer.serialize_seq(Some(set.len()))?;
        for name in set {
            seq.serialize_element(name)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for RewardFlags {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FlagsVisitor;
        impl<'de> Visitor<'de> for FlagsVisitor {
            type Value = RewardFlags;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a list of diagnostic flag names")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<RewardFlags, A::Error> {
                let mut flags = RewardFlags::NONE;
                while let Some(name) = seq.next_element::<String>()? {
                    match name.as_str() {
                        "parse_failure" => flags.parse_failure = true,
                        "logprob_missing_both" => flags.logprob_missing_both = true,
                        "clipped" => flags.clipped = true,
                        other => {
                            return Err(serde::de::Error::custom(format!(
                                "unknown reward flag: {other}"
                            )))
                        }
                    }
                }
                Ok(flags)
            }
        }
        deserializer.deserialize_seq(FlagsVisitor)
    }
}

/// Additive decomposition of a scored rollout. The invariant
/// `total == base + lambda * length_penalty + format_penalty` holds exactly,
/// with no re-rounding, so breakdowns are bit-reproducible from their parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub base: f64,
    pub length_penalty: f64,
    pub format_penalty: f64,
    pub lambda: f64,
    pub total: f64,
    pub flags: RewardFlags,
}

impl RewardBreakdown {
    /// Recompute the total from the stored parts; equality with `total` is
    /// bit-for-bit because both sides evaluate the same expression.
    pub fn recomputed_total(&self) -> f64 {
        self.base + self.lambda * self.length_penalty + self.format_penalty
    }
}

/// Aligned group of rollouts for one sample: rewards, zero-sum advantages
/// and reference-policy logprobs, all indexed the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub sample_id: String,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub ref_logprobs: Vec<Vec<f64>>,
}

impl GroupBatch {
    pub fn new(
        sample_id: String,
        rollouts: Vec<Rollout>,
        rewards: Vec<f64>,
        advantages: Vec<f64>,
        ref_logprobs: Vec<Vec<f64>>,
    ) -> Result<Self, DomainError> {
        let g = rollouts.len();
        if g < 2 {
            return Err(DomainError::DegenerateGroup(g));
        }
        if rewards.len() != g || advantages.len() != g || ref_logprobs.len() != g {
            return Err(DomainError::GroupShape(format!(
                "{g} rollouts, {} rewards, {} advantages, {} ref sequences",
                rewards.len(),
                advantages.len(),
                ref_logprobs.len()
            )));
        }
        for (i, (r, refs)) in rollouts.iter().zip(&ref_logprobs).enumerate() {
            if refs.len() != r.tokens.len() {
                return Err(DomainError::GroupShape(format!(
                    "rollout {i}: {} tokens vs {} ref logprobs",
                    r.tokens.len(),
                    refs.len()
                )));
            }
        }
        let sum: f64 = advantages.iter().sum();
        if sum.abs() > ADVANTAGE_SUM_TOL {
            return Err(DomainError::UnbalancedAdvantages(sum));
        }
        Ok(GroupBatch { sample_id, rollouts, rewards, advantages, ref_logprobs })
    }

    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }
}

/// A violated sample invariant. `Display` gives the human verdict text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleViolation {
    UniformLabels,
    TargetArity { field: &'static str, got: usize },
    TargetLeakage { job_id: String },
    EmptyContext,
    UnsortedActions,
    MalformedJob { job_id: String },
    BadLabel { got: u8 },
    NonPositiveTimestamp { timestamp: i64 },
}

impl fmt::Display for SampleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleViolation::UniformLabels => write!(f, "uniform labels"),
            SampleViolation::TargetArity { field, got } => {
                write!(f, "{field} length ≠ {LISTWISE_ARITY} (got {got})")
            }
            SampleViolation::TargetLeakage { job_id } => {
                write!(f, "target job {job_id} appears in context actions")
            }
            SampleViolation::EmptyContext => write!(f, "all context sources empty"),
            SampleViolation::UnsortedActions => {
                write!(f, "context actions not sorted by timestamp")
            }
            SampleViolation::MalformedJob { job_id } => {
                write!(f, "job {job_id} has an empty text field")
            }
            SampleViolation::BadLabel { got } => write!(f, "label must be 0 or 1 (got {got})"),
            SampleViolation::NonPositiveTimestamp { timestamp } => {
                write!(f, "non-positive timestamp {timestamp}")
            }
        }
    }
}

fn context_violations(context: &MemberContext, out: &mut Vec<SampleViolation>) {
    if !context.has_content() {
        out.push(SampleViolation::EmptyContext);
    }
    if !context.actions_sorted() {
        out.push(SampleViolation::UnsortedActions);
    }
    for action in &context.job_search_actions {
        if action.timestamp <= 0 {
            out.push(SampleViolation::NonPositiveTimestamp { timestamp: action.timestamp });
        }
    }
}

impl PointwiseSample {
    /// Verdict-returning check of every sample invariant. Empty = valid.
    pub fn validate(&self) -> Vec<SampleViolation> {
        let mut out = Vec::new();
        context_violations(&self.context, &mut out);
        if !self.target_job.is_well_formed() {
            out.push(SampleViolation::MalformedJob { job_id: self.target_job.job_id.clone() });
        }
        if self.label > 1 {
            out.push(SampleViolation::BadLabel { got: self.label });
        }
        if self
            .context
            .job_search_actions
            .iter()
            .any(|a| a.job.job_id == self.target_job.job_id)
        {
            out.push(SampleViolation::TargetLeakage { job_id: self.target_job.job_id.clone() });
        }
        out
    }
}

impl ListwiseSample {
    /// Verdict-returning check of every sample invariant. Empty = valid.
    pub fn validate(&self) -> Vec<SampleViolation> {
        let mut out = Vec::new();
        context_violations(&self.context, &mut out);
        if self.target_jobs.len() != LISTWISE_ARITY {
            out.push(SampleViolation::TargetArity {
                field: "target_jobs",
                got: self.target_jobs.len(),
            });
        }
        if self.labels.len() != LISTWISE_ARITY {
            out.push(SampleViolation::TargetArity { field: "labels", got: self.labels.len() });
        }
        if !self.labels.is_empty() && self.labels.iter().all(|l| *l == self.labels[0]) {
            out.push(SampleViolation::UniformLabels);
        }
        for job in &self.target_jobs {
            if !job.is_well_formed() {
                out.push(SampleViolation::MalformedJob { job_id: job.job_id.clone() });
            }
            if self.context.job_search_actions.iter().any(|a| a.job.job_id == job.job_id) {
                out.push(SampleViolation::TargetLeakage { job_id: job.job_id.clone() });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn job(id: &str) -> JobPosting {
        JobPosting {
            job_id: id.to_string(),
            title: format!("Title {id}"),
            company: "Acme".to_string(),
            description: format!("Description for {id}"),
        }
    }

    pub(crate) fn context(member: &str, actions: Vec<JobAction>) -> MemberContext {
        MemberContext {
            member_id: member.to_string(),
            profile_attributes: "Senior engineer in Denver".to_string(),
            professional_content: "Writes about distributed systems".to_string(),
            job_search_actions: actions,
            search_queries: vec!["backend engineer".to_string()],
        }
    }

    #[test]
    fn action_label_relevance_order() {
        assert!(ActionLabel::Apply > ActionLabel::View);
        assert!(ActionLabel::View > ActionLabel::Skip);
    }

    #[test]
    fn action_label_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&ActionLabel::Apply).unwrap(), "\"apply\"");
        assert_eq!(serde_json::from_str::<ActionLabel>("\"skip\"").unwrap(), ActionLabel::Skip);
    }

    #[test]
    fn rollout_constructor_checks_shape_and_sign() {
        let ok = Rollout::new(vec![1, 2], "ab".into(), vec![-0.5, -1.0]).unwrap();
        assert_eq!(ok.token_count, 2);
        assert!(ok.is_well_formed());
        assert!(Rollout::new(vec![1], "a".into(), vec![-0.5, -1.0]).is_err());
        assert!(Rollout::new(vec![1], "a".into(), vec![0.25]).is_err());
        // Exactly zero is a legal logprob (probability one).
        assert!(Rollout::new(vec![1], "a".into(), vec![0.0]).is_ok());
    }

    #[test]
    fn pointwise_record_shape() {
        let sample = PointwiseSample {
            context: context("m1", vec![]),
            target_job: job("j9"),
            label: 1,
        };
        let value = serde_json::to_value(&sample).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["context", "label", "target_job"]);
        let mut ctx_keys: Vec<&str> =
            value["context"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
        ctx_keys.sort_unstable();
        assert_eq!(
            ctx_keys,
            vec![
                "job_search_actions",
                "member_id",
                "professional_content",
                "profile_attributes",
                "search_queries"
            ]
        );
        let parsed: PointwiseSample = serde_json::from_value(value).unwrap();
        assert_eq!(parsed, sample);
    }

    #[test]
    fn rollout_record_shape() {
        let r = Rollout::new(vec![3, 7], "xy".into(), vec![-0.1, -0.2]).unwrap();
        let value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["text", "token_count", "token_logprobs", "tokens"]);
        assert_eq!(serde_json::from_value::<Rollout>(value).unwrap(), r);
    }

    #[test]
    fn reward_flags_roundtrip_as_name_set() {
        let flags = RewardFlags { parse_failure: true, logprob_missing_both: false, clipped: true };
        let json = serde_json::to_string(&flags).unwrap();
        assert_eq!(json, "[\"parse_failure\",\"clipped\"]");
        assert_eq!(serde_json::from_str::<RewardFlags>(&json).unwrap(), flags);
        assert_eq!(serde_json::to_string(&RewardFlags::NONE).unwrap(), "[]");
        assert!(serde_json::from_str::<RewardFlags>("[\"bogus\"]").is_err());
    }

    #[test]
    fn breakdown_total_recomputes_bit_identical() {
        let b = RewardBreakdown {
            base: 0.9,
            length_penalty: -100.0,
            format_penalty: -1.0,
            lambda: 1e-5,
            total: 0.9 + 1e-5 * -100.0 + -1.0,
            flags: RewardFlags::NONE,
        };
        assert_eq!(b.total.to_bits(), b.recomputed_total().to_bits());
    }

    #[test]
    fn listwise_uniform_labels_verdict() {
        let sample = ListwiseSample {
            context: context("m1", vec![]),
            target_jobs: (0..5).map(|i| job(&format!("j{i}"))).collect(),
            labels: vec![ActionLabel::View; 5],
        };
        let verdict = sample.validate();
        assert_eq!(verdict.len(), 1);
        assert_eq!(verdict[0].to_string(), "uniform labels");
    }

    #[test]
    fn listwise_arity_verdict_names_length() {
        let sample = ListwiseSample {
            context: context("m1", vec![]),
            target_jobs: (0..4).map(|i| job(&format!("j{i}"))).collect(),
            labels: vec![
                ActionLabel::Apply,
                ActionLabel::View,
                ActionLabel::Skip,
                ActionLabel::View,
            ],
        };
        let verdict = sample.validate();
        assert!(verdict.iter().any(|v| v.to_string().contains("length ≠ 5")));
    }

    #[test]
    fn pointwise_leakage_verdict() {
        let target = job("j1");
        let action = JobAction { job: target.clone(), action: ActionLabel::View, timestamp: 5 };
        let sample = PointwiseSample {
            context: context("m1", vec![action]),
            target_job: target,
            label: 0,
        };
        let verdict = sample.validate();
        assert!(matches!(verdict[0], SampleViolation::TargetLeakage { .. }));
    }

    #[test]
    fn unsorted_actions_flagged() {
        let mk = |ts| JobAction { job: job(&format!("j{ts}")), action: ActionLabel::Skip, timestamp: ts };
        let sample = PointwiseSample {
            context: context("m1", vec![mk(9), mk(4)]),
            target_job: job("jt"),
            label: 1,
        };
        assert!(sample.validate().contains(&SampleViolation::UnsortedActions));
    }

    #[test]
    fn group_batch_enforces_size_and_balance() {
        let r = |lp: f64| Rollout::new(vec![1], "a".into(), vec![lp]).unwrap();
        let err = GroupBatch::new("s".into(), vec![r(-0.1)], vec![1.0], vec![0.0], vec![vec![-0.1]]);
        assert!(matches!(err, Err(DomainError::DegenerateGroup(1))));

        let err = GroupBatch::new(
            "s".into(),
            vec![r(-0.1), r(-0.2)],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![vec![-0.1], vec![-0.2]],
        );
        assert!(matches!(err, Err(DomainError::UnbalancedAdvantages(_))));

        let ok = GroupBatch::new(
            "s".into(),
            vec![r(-0.1), r(-0.2)],
            vec![1.0, 0.0],
            vec![0.5, -0.5],
            vec![vec![-0.1], vec![-0.2]],
        )
        .unwrap();
        assert_eq!(ok.group_size(), 2);
    }
}
