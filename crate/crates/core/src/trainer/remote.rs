//! Rollout orchestration against served models: sample a group of synopses
//! per member, score each against the member's target jobs, and export
//! advantage-annotated batches for the external trainer. No weights move
//! here; the export file is the hand-off.

use crate::backend::{
    render_actor_prompt, render_listwise_prompt, render_pointwise_prompt, BackendClient,
    BackendError,
};
use crate::domain::{
    GroupBatch, ListwiseSample, PointwiseSample, RewardBreakdown, RewardFlags, Rollout,
};
use crate::optimizer::{group_advantages, BatchExportRecord};
use crate::reward::{
    compose_total, listwise_reward, pointwise_logprob_reward, pointwise_string_reward,
    RelevanceGains, REWARD_CLIP,
};
use crate::trainer::{RewardMode, TrainConfig, TrainerError};
use std::io::Write;

/// Sampling temperature for the served actor.
pub const REMOTE_TEMPERATURE: f64 = 1.0;
/// Completion budget for one synopsis.
pub const REMOTE_MAX_TOKENS: u32 = 256;

/// Validation or training samples, matching the configured reward mode.
#[derive(Debug, Clone)]
pub enum RemoteSampleSet {
    Pointwise(Vec<PointwiseSample>),
    Listwise(Vec<ListwiseSample>),
}

impl RemoteSampleSet {
    pub fn len(&self) -> usize {
        match self {
            RemoteSampleSet::Pointwise(s) => s.len(),
            RemoteSampleSet::Listwise(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_mode(&self, mode: RewardMode) -> Result<(), TrainerError> {
        let ok = matches!(
            (self, mode),
            (RemoteSampleSet::Pointwise(_), RewardMode::PointwiseString)
                | (RemoteSampleSet::Pointwise(_), RewardMode::PointwiseLogprob)
                | (RemoteSampleSet::Listwise(_), RewardMode::Listwise)
        );
        if ok {
            Ok(())
        } else {
            Err(TrainerError::Config(format!(
                "reward mode {mode:?} does not match the provided sample kind"
            )))
        }
    }
}

/// Outcome counters of one orchestration pass. `rollout_rewards` keeps each
/// scored rollout's composed total in scoring order so callers can resample
/// the population (for example to bootstrap a standard error).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RemoteRolloutReport {
    pub samples_seen: usize,
    pub groups_exported: usize,
    pub failed_samples: usize,
    pub rollouts_scored: usize,
    pub parse_failures: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub rollout_rewards: Vec<f64>,
}

impl RemoteRolloutReport {
    pub fn failure_rate(&self) -> f64 {
        if self.samples_seen == 0 {
            0.0
        } else {
            self.failed_samples as f64 / self.samples_seen as f64
        }
    }

    pub fn parse_failure_rate(&self) -> f64 {
        if self.rollouts_scored == 0 {
            0.0
        } else {
            self.parse_failures as f64 / self.rollouts_scored as f64
        }
    }
}

/// Score one synopsis against one pointwise target.
pub fn score_pointwise_rollout(
    reward_client: &BackendClient,
    mode: RewardMode,
    rollout: &Rollout,
    sample: &PointwiseSample,
) -> Result<(f64, RewardFlags), BackendError> {
    let prompt = match render_pointwise_prompt(&rollout.text, &sample.target_job) {
        Ok(p) => p,
        // An unusable (empty) synopsis cannot be judged; treat it like an
        // unparseable verdict rather than failing the whole sample.
        Err(BackendError::EmptyPrompt(_)) => {
            let mut flags = RewardFlags::NONE;
            flags.parse_failure = true;
            return Ok((0.0, flags));
        }
        Err(e) => return Err(e),
    };
    let scored = reward_client.score_pointwise(&prompt)?;
    Ok(match mode {
        RewardMode::PointwiseString => pointwise_string_reward(&scored.predicted_word, sample.label),
        RewardMode::PointwiseLogprob => {
            pointwise_logprob_reward(scored.logp_yes, scored.logp_no, sample.label, REWARD_CLIP)
        }
        RewardMode::Listwise => unreachable!("mode checked upstream"),
    })
}

/// Score one synopsis against one five-job ranking target.
pub fn score_listwise_rollout(
    reward_client: &BackendClient,
    rollout: &Rollout,
    sample: &ListwiseSample,
    gains: &RelevanceGains,
) -> Result<(f64, RewardFlags), TrainerError> {
    let mut flags = RewardFlags::NONE;
    let prompt = match render_listwise_prompt(&rollout.text, &sample.target_jobs) {
        Ok(p) => p,
        Err(BackendError::EmptyPrompt(_)) => {
            flags.parse_failure = true;
            return Ok((0.0, flags));
        }
        Err(e) => return Err(e.into()),
    };
    match reward_client.score_listwise(&prompt) {
        Ok(order) => Ok((listwise_reward(&order, &sample.labels, gains)?, flags)),
        // The judge failed to produce a valid permutation twice: a scoring
        // outcome, not a transport failure.
        Err(BackendError::Parse(_)) => {
            flags.parse_failure = true;
            Ok((0.0, flags))
        }
        Err(e) => Err(e.into()),
    }
}

struct ScoredGroup {
    rollouts: Vec<Rollout>,
    breakdowns: Vec<RewardBreakdown>,
}

fn sample_and_score(
    config: &TrainConfig,
    actor: &BackendClient,
    context: &crate::domain::MemberContext,
    score: impl Fn(&Rollout) -> Result<(f64, RewardFlags), TrainerError>,
) -> Result<ScoredGroup, TrainerError> {
    let prompt = render_actor_prompt(context)?;
    let rollouts = actor.sample_actor(&prompt, config.group_size, REMOTE_TEMPERATURE, REMOTE_MAX_TOKENS)?;
    let mut breakdowns = Vec::with_capacity(rollouts.len());
    for rollout in &rollouts {
        let (base, flags) = score(rollout)?;
        breakdowns.push(compose_total(
            base,
            rollout.token_count,
            &rollout.text,
            config.lambda,
            config.length_budget,
            config.format_penalty_on,
            flags,
        ));
    }
    Ok(ScoredGroup { rollouts, breakdowns })
}

/// Sample and score every input sample, exporting one advantage-annotated
/// record per rollout as JSONL to `export`. Backend failures (after the
/// client's retries) mark that sample failed and the pass continues; parse
/// failures score zero with a flag and still export.
pub fn run_remote_rollout(
    config: &TrainConfig,
    actor: &BackendClient,
    reward: &BackendClient,
    samples: &RemoteSampleSet,
    export: &mut dyn Write,
) -> Result<RemoteRolloutReport, TrainerError> {
    config.validate()?;
    samples.check_mode(config.reward_mode)?;
    let gains = RelevanceGains::default();
    let mut report = RemoteRolloutReport::default();
    let mut reward_sum = 0.0;
    let mut length_sum = 0.0;

    let mut process = |sample_id: String,
                       context: &crate::domain::MemberContext,
                       score: &dyn Fn(&Rollout) -> Result<(f64, RewardFlags), TrainerError>|
     -> Result<(), TrainerError> {
        report.samples_seen += 1;
        let scored = match sample_and_score(config, actor, context, score) {
            Ok(s) => s,
            Err(TrainerError::Backend(_)) => {
                report.failed_samples += 1;
                return Ok(());
            }
            Err(other) => return Err(other),
        };
        report.rollouts_scored += scored.rollouts.len();
        report.parse_failures +=
            scored.breakdowns.iter().filter(|b| b.flags.parse_failure).count();
        let totals: Vec<f64> = scored.breakdowns.iter().map(|b| b.total).collect();
        report.rollout_rewards.extend_from_slice(&totals);
        reward_sum += totals.iter().sum::<f64>();
        length_sum += scored.rollouts.iter().map(|r| r.token_count as f64).sum::<f64>();
        let advantages = group_advantages(&totals, config.optimizer.mode)?;
        // The served weights are frozen during orchestration, so the policy
        // that sampled is also the reference policy.
        let ref_logprobs: Vec<Vec<f64>> =
            scored.rollouts.iter().map(|r| r.token_logprobs.clone()).collect();
        let batch =
            GroupBatch::new(sample_id, scored.rollouts, totals, advantages, ref_logprobs)?;
        for record in BatchExportRecord::from_group(&batch, &config.optimizer) {
            let line = serde_json::to_string(&record)
                .map_err(|e| TrainerError::Config(format!("export serialization: {e}")))?;
            export
                .write_all(line.as_bytes())
                .and_then(|_| export.write_all(b"\n"))
                .map_err(|e| TrainerError::Io { path: "<export sink>".into(), source: e })?;
        }
        report.groups_exported += 1;
        Ok(())
    };

    match samples {
        RemoteSampleSet::Pointwise(list) => {
            for sample in list {
                let id = format!("{}:{}", sample.context.member_id, sample.target_job.job_id);
                process(id, &sample.context, &|rollout| {
                    score_pointwise_rollout(reward, config.reward_mode, rollout, sample)
                        .map_err(TrainerError::from)
                })?;
            }
        }
        RemoteSampleSet::Listwise(list) => {
            for sample in list {
                let first_job =
                    sample.target_jobs.first().map(|j| j.job_id.as_str()).unwrap_or("none");
                let id = format!("{}:{}", sample.context.member_id, first_job);
                process(id, &sample.context, &|rollout| {
                    score_listwise_rollout(reward, rollout, sample, &gains)
                })?;
            }
        }
    }

    if report.rollouts_scored > 0 {
        report.mean_reward = reward_sum / report.rollouts_scored as f64;
        report.mean_length = length_sum / report.rollouts_scored as f64;
    }
    Ok(report)
}

/// Mean composed reward of served-policy rollouts over a validation set;
/// nothing is exported and nothing is updated.
pub fn evaluate_remote(
    config: &TrainConfig,
    actor: &BackendClient,
    reward: &BackendClient,
    samples: &RemoteSampleSet,
) -> Result<crate::trainer::EvalSummary, TrainerError> {
    if samples.is_empty() {
        return Err(TrainerError::EmptyValidation);
    }
    let mut sink = std::io::sink();
    let report = run_remote_rollout(config, actor, reward, samples, &mut sink)?;
    if report.rollouts_scored == 0 {
        return Err(TrainerError::EmptyValidation);
    }
    Ok(crate::trainer::EvalSummary {
        mean_reward: report.mean_reward,
        mean_length: report.mean_length,
        count: report.rollouts_scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{completion_body, single_token_body, MockResponse, MockServer};
    use crate::backend::BackendEndpoint;
    use crate::domain::{ActionLabel, JobPosting, MemberContext};
    use crate::reward::label_entropy;

    fn test_config(mode: RewardMode) -> TrainConfig {
        let mut config = TrainConfig::remote_default();
        config.group_size = 2;
        config.optimizer.group_size = 2;
        config.reward_mode = mode;
        config
    }

    fn client(server: &MockServer) -> BackendClient {
        let mut endpoint = BackendEndpoint::new(server.base_url(), "mock");
        endpoint.max_retries = 0;
        endpoint.timeout_secs = 5.0;
        BackendClient::new(endpoint).unwrap()
    }

    fn job(id: &str) -> JobPosting {
        JobPosting {
            job_id: id.into(),
            title: "Backend Engineer".into(),
            company: "Initech".into(),
            description: "Builds services.".into(),
        }
    }

    fn member(id: &str) -> MemberContext {
        MemberContext {
            member_id: id.into(),
            profile_attributes: "Engineer in Austin".into(),
            professional_content: "Writes about APIs".into(),
            job_search_actions: vec![],
            search_queries: vec!["backend".into()],
        }
    }

    fn pointwise_sample(label: u8) -> PointwiseSample {
        PointwiseSample { context: member("member-000001"), target_job: job("j-1"), label }
    }

    fn actor_script(n: usize) -> Vec<MockResponse> {
        (0..n)
            .map(|i| {
                MockResponse::ok(completion_body(
                    &format!("synopsis variant {i}"),
                    &[("synopsis", -0.2), (" variant", -0.4), (&format!(" {i}"), -0.1)],
                ))
            })
            .collect()
    }

    #[test]
    fn string_mode_exports_groups_and_counts_rewards() {
        let actor_server = MockServer::start(actor_script(2));
        let reward_server = MockServer::start(vec![
            MockResponse::ok(single_token_body(&[(" yes", -0.1), (" no", -2.0)])),
            MockResponse::ok(single_token_body(&[(" no", -0.3), (" yes", -1.5)])),
        ]);
        let config = test_config(RewardMode::PointwiseString);
        let samples = RemoteSampleSet::Pointwise(vec![pointwise_sample(1)]);

        let mut export = Vec::new();
        let report = run_remote_rollout(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &samples,
            &mut export,
        )
        .unwrap();

        assert_eq!(report.samples_seen, 1);
        assert_eq!(report.groups_exported, 1);
        assert_eq!(report.rollouts_scored, 2);
        assert_eq!(report.failed_samples, 0);
        assert_eq!(report.parse_failures, 0);
        // Verdicts yes/no against label 1: rewards 1 and 0.
        assert_eq!(report.mean_reward, 0.5);

        let lines: Vec<&str> = std::str::from_utf8(&export).unwrap().lines().collect();
        assert_eq!(lines.len(), 2);
        let first: BatchExportRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.sample_id, "member-000001:j-1");
        assert_eq!(first.tokens.len(), 3);
        // Group of two with rewards {1, 0}: centered advantages are +-0.5.
        assert_eq!(first.advantages, vec![0.5; 3]);
        assert_eq!(first.old_logprobs, first.ref_logprobs);
    }

    #[test]
    fn export_is_byte_stable_across_reruns() {
        let config = test_config(RewardMode::PointwiseString);
        let samples = RemoteSampleSet::Pointwise(vec![pointwise_sample(1), pointwise_sample(0)]);
        let run = || {
            let actor_server = MockServer::start(actor_script(4));
            let reward_server = MockServer::start(vec![
                MockResponse::ok(single_token_body(&[(" yes", -0.1), (" no", -2.0)])),
                MockResponse::ok(single_token_body(&[(" no", -0.3), (" yes", -1.5)])),
                MockResponse::ok(single_token_body(&[(" yes", -0.7), (" no", -0.9)])),
                MockResponse::ok(single_token_body(&[(" no", -0.2), (" yes", -1.9)])),
            ]);
            let mut export = Vec::new();
            run_remote_rollout(
                &config,
                &client(&actor_server),
                &client(&reward_server),
                &samples,
                &mut export,
            )
            .unwrap();
            export
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn listwise_mode_composes_the_ranking_reward() {
        let labels = vec![
            ActionLabel::Apply,
            ActionLabel::Apply,
            ActionLabel::View,
            ActionLabel::Skip,
            ActionLabel::Skip,
        ];
        let sample = ListwiseSample {
            context: member("member-000002"),
            target_jobs: (0..5).map(|i| job(&format!("j-{i}"))).collect(),
            labels: labels.clone(),
        };
        let actor_server = MockServer::start(actor_script(2));
        // Identity ranking on gains [5,5,1,0,0] is ideal, so the base reward
        // equals the label entropy exactly.
        let ranking = completion_body("The order is [0, 1, 2, 3, 4]", &[]);
        let reward_server =
            MockServer::start(vec![MockResponse::ok(ranking.clone()), MockResponse::ok(ranking)]);
        let config = test_config(RewardMode::Listwise);

        let mut export = Vec::new();
        let report = run_remote_rollout(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &RemoteSampleSet::Listwise(vec![sample]),
            &mut export,
        )
        .unwrap();
        let expected = label_entropy(&labels).unwrap();
        assert!((report.mean_reward - expected).abs() < 1e-12);
        assert_eq!(report.groups_exported, 1);
    }

    #[test]
    fn unparseable_verdict_scores_zero_with_flag() {
        let actor_server = MockServer::start(actor_script(2));
        let reward_server = MockServer::start(vec![
            MockResponse::ok(single_token_body(&[(" maybe", -0.1)])),
            MockResponse::ok(single_token_body(&[(" maybe", -0.2)])),
        ]);
        let config = test_config(RewardMode::PointwiseString);
        let mut export = Vec::new();
        let report = run_remote_rollout(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &RemoteSampleSet::Pointwise(vec![pointwise_sample(1)]),
            &mut export,
        )
        .unwrap();
        assert_eq!(report.parse_failures, 2);
        assert_eq!(report.parse_failure_rate(), 1.0);
        assert_eq!(report.mean_reward, 0.0);
        // Still exported: a zero reward is a reward, not a failure.
        assert_eq!(report.groups_exported, 1);
    }

    #[test]
    fn transport_failure_skips_the_sample_and_continues() {
        // First sample's actor call gets a 500 (no retries); second works.
        let mut script = vec![MockResponse::error(500)];
        script.extend(actor_script(2));
        let actor_server = MockServer::start(script);
        let reward_server = MockServer::start(vec![
            MockResponse::ok(single_token_body(&[(" yes", -0.1), (" no", -2.0)])),
            MockResponse::ok(single_token_body(&[(" yes", -0.4), (" no", -1.0)])),
        ]);
        let config = test_config(RewardMode::PointwiseString);
        let mut export = Vec::new();
        let report = run_remote_rollout(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &RemoteSampleSet::Pointwise(vec![pointwise_sample(1), pointwise_sample(1)]),
            &mut export,
        )
        .unwrap();
        assert_eq!(report.samples_seen, 2);
        assert_eq!(report.failed_samples, 1);
        assert_eq!(report.groups_exported, 1);
        assert_eq!(report.failure_rate(), 0.5);
    }

    #[test]
    fn sample_kind_must_match_reward_mode() {
        let actor_server = MockServer::start(vec![]);
        let reward_server = MockServer::start(vec![]);
        let config = test_config(RewardMode::Listwise);
        let mut export = Vec::new();
        let err = run_remote_rollout(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &RemoteSampleSet::Pointwise(vec![pointwise_sample(1)]),
            &mut export,
        )
        .unwrap_err();
        assert!(matches!(err, TrainerError::Config(_)));
    }

    #[test]
    fn evaluate_remote_rejects_empty_sets_and_reports_means() {
        let actor_server = MockServer::start(actor_script(2));
        let reward_server = MockServer::start(vec![
            MockResponse::ok(single_token_body(&[(" yes", -0.1), (" no", -2.0)])),
            MockResponse::ok(single_token_body(&[(" yes", -0.2), (" no", -1.0)])),
        ]);
        let config = test_config(RewardMode::PointwiseString);
        let empty = RemoteSampleSet::Pointwise(vec![]);
        assert!(matches!(
            evaluate_remote(&config, &client(&actor_server), &client(&reward_server), &empty),
            Err(TrainerError::EmptyValidation)
        ));
        let summary = evaluate_remote(
            &config,
            &client(&actor_server),
            &client(&reward_server),
            &RemoteSampleSet::Pointwise(vec![pointwise_sample(1)]),
        )
        .unwrap();
        assert_eq!(summary.count, 2);
        assert_eq!(summary.mean_reward, 1.0);
        assert_eq!(summary.mean_length, 3.0);
    }
}
