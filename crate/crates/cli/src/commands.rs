//! The six subcommand bodies. Each run-producing command (gen-data,
//! train-toy, export-batches) writes its manifest before the first artifact
//! and flips it to complete as the last action, so an interrupted run is
//! always distinguishable from a finished one.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use synopsis_core::backend::mock::{MockResponse, MockServer};
use synopsis_core::backend::{BackendClient, BackendEndpoint};
use synopsis_core::dataset::{
    build_dataset, generate_logs, read_jsonl, write_jsonl, audit_split,
};
use synopsis_core::domain::{RewardBreakdown, Rollout};
use synopsis_core::policy::PolicyCheckpoint;
use synopsis_core::reward::{compose_total, RelevanceGains};
use synopsis_core::trainer::{
    run_remote_rollout, score_listwise_rollout, score_pointwise_rollout, smooth_series,
    toy_validation_rewards, write_metrics_csv, MetricsRecord, RemoteSampleSet, RewardMode,
    ToyEnvironment, ToyRewardKind, ToyTrainer, TrainConfig,
};

use crate::config::{require_endpoint, CliConfig, EndpointSection};
use crate::error::CliError;
use crate::manifest::RunManifest;

const LOG_FILE: &str = "logs.jsonl";
const SAMPLE_FILES: [&str; 4] = [
    "train_pointwise.jsonl",
    "train_listwise.jsonl",
    "val_pointwise.jsonl",
    "val_listwise.jsonl",
];

pub fn parse_reward_mode(s: &str) -> Result<RewardMode, CliError> {
    match s {
        "pointwise_string" => Ok(RewardMode::PointwiseString),
        "pointwise_logprob" => Ok(RewardMode::PointwiseLogprob),
        "listwise" => Ok(RewardMode::Listwise),
        other => Err(CliError::Config(format!(
            "unknown reward mode {other:?}; expected pointwise_string, pointwise_logprob, or listwise"
        ))),
    }
}

pub fn parse_reward_kind(s: &str) -> Result<ToyRewardKind, CliError> {
    match s {
        "presence" => Ok(ToyRewardKind::Presence),
        "per_occurrence" => Ok(ToyRewardKind::PerOccurrence),
        "listwise" => Ok(ToyRewardKind::Listwise),
        other => Err(CliError::Config(format!(
            "unknown toy reward kind {other:?}; expected presence, per_occurrence, or listwise"
        ))),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Serialize to a sibling temp file, then rename into place.
fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let tmp = tmp_sibling(path);
    write_jsonl(&tmp, items)?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = std::ffi::OsString::from(".");
    name.push(path.file_name().unwrap_or_else(|| "out".as_ref()));
    name.push(".tmp");
    path.with_file_name(name)
}

// ---------------------------------------------------------------------------
// gen-data

pub fn cmd_gen_data(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    members: Option<usize>,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(config)?;
    let mut gen = cfg.gen.resolve();
    if let Some(s) = seed {
        gen.seed = s;
    }
    if let Some(m) = members {
        gen.member_count = m;
    }
    gen.validate()?;
    let downsample_seed = cfg.gen.downsample_seed();

    ensure_dir(out)?;
    let mut artifacts = vec![LOG_FILE.to_string()];
    artifacts.extend(SAMPLE_FILES.iter().map(|s| s.to_string()));
    let mut manifest = RunManifest::begin(
        "gen-data",
        json!({ "gen": &gen, "downsample_seed": downsample_seed }),
        BTreeMap::from([
            ("generator".to_string(), gen.seed),
            ("downsample".to_string(), downsample_seed),
        ]),
        artifacts,
    );
    manifest.save(out)?;

    let logs = generate_logs(&gen)?;
    let cutoff = gen.cutoff_timestamp();
    let split = build_dataset(&logs, cutoff, downsample_seed);
    let problems = audit_split(&split, cutoff);
    if !problems.is_empty() {
        return Err(CliError::Validation(format!(
            "dataset audit found {} problems; first: {}",
            problems.len(),
            problems[0]
        )));
    }

    write_jsonl_atomic(&out.join(LOG_FILE), &logs)?;
    write_jsonl_atomic(&out.join(SAMPLE_FILES[0]), &split.train_pointwise)?;
    write_jsonl_atomic(&out.join(SAMPLE_FILES[1]), &split.train_listwise)?;
    write_jsonl_atomic(&out.join(SAMPLE_FILES[2]), &split.val_pointwise)?;
    write_jsonl_atomic(&out.join(SAMPLE_FILES[3]), &split.val_listwise)?;

    manifest.mark_complete();
    manifest.save(out)?;
    println!(
        "gen-data: {} members -> train {} pointwise / {} listwise, val {} pointwise / {} listwise ({})",
        logs.len(),
        split.train_pointwise.len(),
        split.train_listwise.len(),
        split.val_pointwise.len(),
        split.val_listwise.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-toy

pub struct TrainToyFlags {
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub length_budget: Option<usize>,
    pub format_penalty: Option<bool>,
    pub reward_kind: Option<String>,
    pub sampling_seed: Option<u64>,
}

pub fn cmd_train_toy(
    config: Option<&Path>,
    out: &Path,
    flags: TrainToyFlags,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(config)?;
    let mut train = cfg
        .train
        .resolve(TrainConfig::toy_default(), &cfg.optimizer, &cfg.seeds);
    if let Some(v) = flags.steps {
        train.max_steps = v;
    }
    if let Some(v) = flags.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = flags.lambda {
        train.lambda = v;
    }
    if let Some(v) = flags.length_budget {
        train.length_budget = v;
    }
    if let Some(v) = flags.format_penalty {
        train.format_penalty_on = v;
    }
    if let Some(v) = flags.sampling_seed {
        train.seeds.sampling = v;
    }
    let mut env_cfg = cfg.toy_env.resolve();
    if let Some(kind) = &flags.reward_kind {
        env_cfg.reward_kind = parse_reward_kind(kind)?;
    }
    train.validate()?;
    let env = ToyEnvironment::new(env_cfg.clone())?;

    ensure_dir(out)?;
    let mut manifest = RunManifest::begin(
        "train-toy",
        json!({ "train": &train, "toy_env": &env_cfg }),
        BTreeMap::from([
            ("sampling".to_string(), train.seeds.sampling),
            ("evaluation".to_string(), train.seeds.evaluation),
            ("data".to_string(), train.seeds.data),
        ]),
        vec![
            "checkpoint.json".to_string(),
            "metrics.jsonl".to_string(),
            "metrics.csv".to_string(),
        ],
    );
    manifest.save(out)?;

    let mut trainer = ToyTrainer::new(&train, &env)?;
    while !trainer.is_done() {
        trainer.step()?;
        // Persist after every completed step so a killed run keeps the last
        // finished state: checkpoint saves are already atomic, metrics go
        // through a temp file rename.
        let completed = trainer.metrics().len() as u64;
        PolicyCheckpoint::capture(trainer.policy(), train.seeds.sampling, completed)
            .save(&out.join("checkpoint.json"))?;
        write_metrics_files(out, trainer.metrics())?;
    }

    manifest.mark_complete();
    manifest.save(out)?;
    let last = trainer
        .metrics()
        .last()
        .ok_or_else(|| CliError::Validation("no steps were run".into()))?;
    println!(
        "train-toy: {} steps, final train_reward {:.4}, val_reward {:.4}, mean_length {:.2} ({})",
        trainer.metrics().len(),
        last.train_reward,
        last.val_reward,
        last.mean_length,
        out.display()
    );
    Ok(())
}

fn write_metrics_files(out: &Path, metrics: &[MetricsRecord]) -> Result<(), CliError> {
    write_jsonl_atomic(&out.join("metrics.jsonl"), metrics)?;
    let csv_tmp = tmp_sibling(&out.join("metrics.csv"));
    write_metrics_csv(&csv_tmp, metrics)?;
    std::fs::rename(&csv_tmp, out.join("metrics.csv"))
        .map_err(|e| CliError::io(&out.join("metrics.csv"), e))
}

// ---------------------------------------------------------------------------
// remote plumbing shared by export-batches, score, and eval

/// Entry in a mock backend script file: a JSON array of
/// `{"status": 200, "body": {...}}` objects, answered in order.
#[derive(Deserialize)]
struct ScriptEntry {
    status: u16,
    #[serde(default)]
    body: Option<serde_json::Value>,
}

fn load_mock_script(path: &Path) -> Result<Vec<MockResponse>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(entries
        .into_iter()
        .map(|e| match (e.status, e.body) {
            (200, Some(serde_json::Value::String(s))) => MockResponse::ok(s),
            (200, Some(v)) => MockResponse::ok(v.to_string()),
            (200, None) => MockResponse::ok("{}"),
            (status, _) => MockResponse::error(status),
        })
        .collect())
}

/// Build a client for one backend role. A mock script spins up a local
/// scripted server; the returned guard keeps it alive for the run.
fn client_for(
    section: &Option<EndpointSection>,
    role: &str,
    mock_script: Option<&Path>,
) -> Result<(BackendClient, Option<MockServer>), CliError> {
    if let Some(script) = mock_script {
        let responses = load_mock_script(script)?;
        let server = MockServer::start(responses);
        let endpoint = BackendEndpoint::new(server.base_url(), format!("mock-{role}"));
        let client = BackendClient::new(endpoint)?;
        Ok((client, Some(server)))
    } else {
        let endpoint = require_endpoint(section, role)?;
        Ok((BackendClient::new(endpoint)?, None))
    }
}

fn load_samples(path: &Path, mode: RewardMode) -> Result<RemoteSampleSet, CliError> {
    let set = match mode {
        RewardMode::Listwise => RemoteSampleSet::Listwise(read_jsonl(path)?),
        _ => RemoteSampleSet::Pointwise(read_jsonl(path)?),
    };
    if set.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: sample file is empty",
            path.display()
        )));
    }
    Ok(set)
}

pub fn cmd_export_batches(
    config: Option<&Path>,
    samples: &Path,
    out: &Path,
    mode: Option<&str>,
    mock_actor: Option<&Path>,
    mock_reward: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(config)?;
    let mut train = cfg
        .train
        .resolve(TrainConfig::remote_default(), &cfg.optimizer, &cfg.seeds);
    if let Some(m) = mode {
        train.reward_mode = parse_reward_mode(m)?;
    }
    train.validate()?;
    let sample_set = load_samples(samples, train.reward_mode)?;
    let (actor, _actor_guard) = client_for(&cfg.backend.actor, "actor", mock_actor)?;
    let (reward, _reward_guard) = client_for(&cfg.backend.reward, "reward", mock_reward)?;

    ensure_dir(out)?;
    let mut manifest = RunManifest::begin(
        "export-batches",
        json!({ "train": &train, "samples": samples.display().to_string() }),
        BTreeMap::from([
            ("sampling".to_string(), train.seeds.sampling),
            ("evaluation".to_string(), train.seeds.evaluation),
            ("data".to_string(), train.seeds.data),
        ]),
        vec!["batches.jsonl".to_string()],
    );
    manifest.save(out)?;

    let export_path = out.join("batches.jsonl");
    let tmp = tmp_sibling(&export_path);
    let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let mut writer = BufWriter::new(file);
    let report = run_remote_rollout(&train, &actor, &reward, &sample_set, &mut writer)?;
    writer.flush().map_err(|e| CliError::io(&tmp, e))?;
    drop(writer);
    std::fs::rename(&tmp, &export_path).map_err(|e| CliError::io(&export_path, e))?;

    manifest.mark_complete();
    manifest.save(out)?;
    println!(
        "export-batches: {} samples seen, {} groups exported, {} failed, {} rollouts scored ({} parse failures), mean reward {:.4}, mean length {:.2} ({})",
        report.samples_seen,
        report.groups_exported,
        report.failed_samples,
        report.rollouts_scored,
        report.parse_failures,
        report.mean_reward,
        report.mean_length,
        export_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// score

/// One scored summary/sample pair in the output file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub index: usize,
    pub sample_id: String,
    pub token_count: usize,
    pub breakdown: RewardBreakdown,
}

/// Wrap a standalone summary in a rollout shell: whitespace tokens hashed to
/// ids, flat zero logprobs (nothing downstream of scoring reads them).
fn pseudo_rollout(text: &str) -> Result<Rollout, CliError> {
    let tokens: Vec<u32> = text
        .split_whitespace()
        .map(synopsis_core::backend::token_id)
        .collect();
    let logprobs = vec![0.0; tokens.len()];
    Rollout::new(tokens, text.to_string(), logprobs)
        .map_err(|e| CliError::Validation(e.to_string()))
}

pub fn cmd_score(
    config: Option<&Path>,
    summaries: &Path,
    samples: &Path,
    out: &Path,
    mode: Option<&str>,
    mock_reward: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(config)?;
    let mut train = cfg
        .train
        .resolve(TrainConfig::remote_default(), &cfg.optimizer, &cfg.seeds);
    if let Some(m) = mode {
        train.reward_mode = parse_reward_mode(m)?;
    }
    train.validate()?;

    let texts: Vec<String> = read_jsonl(summaries)?;
    if texts.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: summaries file is empty",
            summaries.display()
        )));
    }
    let sample_set = load_samples(samples, train.reward_mode)?;
    if texts.len() != sample_set.len() {
        return Err(CliError::Validation(format!(
            "summaries ({}) and samples ({}) must align line for line",
            texts.len(),
            sample_set.len()
        )));
    }

    let (reward, _guard) = client_for(&cfg.backend.reward, "reward", mock_reward)?;
    let gains = RelevanceGains::default();
    let mut records = Vec::with_capacity(texts.len());
    for (index, text) in texts.iter().enumerate() {
        let rollout = pseudo_rollout(text)?;
        let (sample_id, base, flags) = match &sample_set {
            RemoteSampleSet::Pointwise(list) => {
                let sample = &list[index];
                let (base, flags) =
                    score_pointwise_rollout(&reward, train.reward_mode, &rollout, sample)?;
                let id = format!("{}:{}", sample.context.member_id, sample.target_job.job_id);
                (id, base, flags)
            }
            RemoteSampleSet::Listwise(list) => {
                let sample = &list[index];
                let (base, flags) = score_listwise_rollout(&reward, &rollout, sample, &gains)?;
                let first = sample
                    .target_jobs
                    .first()
                    .map(|j| j.job_id.as_str())
                    .unwrap_or("none");
                (format!("{}:{}", sample.context.member_id, first), base, flags)
            }
        };
        let breakdown = compose_total(
            base,
            rollout.token_count,
            &rollout.text,
            train.lambda,
            train.length_budget,
            train.format_penalty_on,
            flags,
        );
        records.push(ScoreRecord {
            index,
            sample_id,
            token_count: rollout.token_count,
            breakdown,
        });
    }

    write_jsonl_atomic(out, &records)?;
    let mean = records.iter().map(|r| r.breakdown.total).sum::<f64>() / records.len() as f64;
    let failures = records
        .iter()
        .filter(|r| r.breakdown.flags.parse_failure)
        .count();
    println!(
        "score: {} pairs, mean total {:.6}, {} parse failures ({})",
        records.len(),
        mean,
        failures,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub rollouts: usize,
    pub resamples: usize,
    pub bootstrap_seed: u64,
    pub mode: Option<String>,
    pub mock_actor: Option<PathBuf>,
    pub mock_reward: Option<PathBuf>,
}

/// Standard deviation of bootstrap means: resample the rewards with
/// replacement, take each resample's mean, report the spread.
pub fn bootstrap_stderr(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let n = values.len();
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sum: f64 = (0..n).map(|_| values[rng.gen_range(0..n)]).sum();
        means.push(sum / n as f64);
    }
    let grand = means.iter().sum::<f64>() / resamples as f64;
    let var = means
        .iter()
        .map(|m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (resamples - 1) as f64;
    var.sqrt()
}

pub fn cmd_eval(config: Option<&Path>, args: EvalArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(config)?;

    if let Some(checkpoint) = &args.checkpoint {
        let train = cfg
            .train
            .resolve(TrainConfig::toy_default(), &cfg.optimizer, &cfg.seeds);
        train.validate()?;
        let env = ToyEnvironment::new(cfg.toy_env.resolve())?;
        let policy = PolicyCheckpoint::load(checkpoint)?.restore()?;
        let rewards = toy_validation_rewards(
            &policy,
            &env,
            &train,
            train.seeds.evaluation,
            args.rollouts,
        )?;
        let totals: Vec<f64> = rewards.iter().map(|(r, _)| *r).collect();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let mean_length = rewards.iter().map(|(_, n)| *n as f64).sum::<f64>() / rewards.len() as f64;
        let stderr = bootstrap_stderr(&totals, args.resamples, args.bootstrap_seed);
        println!(
            "eval: mean reward {:.4} ± {:.4} (bootstrap stderr, {} resamples) over {} rollouts, mean length {:.2}",
            mean,
            stderr,
            args.resamples,
            totals.len(),
            mean_length
        );
        return Ok(());
    }

    let samples = args.samples.as_ref().ok_or_else(|| {
        CliError::Config("eval needs --checkpoint (toy policy) or --samples (remote)".into())
    })?;
    let mut train = cfg
        .train
        .resolve(TrainConfig::remote_default(), &cfg.optimizer, &cfg.seeds);
    if let Some(m) = &args.mode {
        train.reward_mode = parse_reward_mode(m)?;
    }
    train.validate()?;
    let sample_set = load_samples(samples, train.reward_mode)?;
    let (actor, _actor_guard) = client_for(&cfg.backend.actor, "actor", args.mock_actor.as_deref())?;
    let (reward, _reward_guard) =
        client_for(&cfg.backend.reward, "reward", args.mock_reward.as_deref())?;

    let mut sink = std::io::sink();
    let report = run_remote_rollout(&train, &actor, &reward, &sample_set, &mut sink)?;
    if report.rollouts_scored == 0 {
        return Err(CliError::Validation(
            "no rollouts scored (every sample failed)".into(),
        ));
    }
    let stderr = bootstrap_stderr(&report.rollout_rewards, args.resamples, args.bootstrap_seed);
    println!(
        "eval: mean reward {:.4} ± {:.4} (bootstrap stderr, {} resamples) over {} rollouts, mean length {:.2}, {} failed samples, parse failure rate {:.3}",
        report.mean_reward,
        stderr,
        args.resamples,
        report.rollouts_scored,
        report.mean_length,
        report.failed_samples,
        report.parse_failure_rate()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// smooth-metrics

pub const METRIC_FIELDS: [&str; 7] = [
    "train_reward",
    "val_reward",
    "mean_length",
    "mean_kl",
    "entropy_exact",
    "entropy_proxy",
    "parse_failure_rate",
];

fn extract_field(records: &[MetricsRecord], field: &str) -> Result<Vec<f64>, CliError> {
    records
        .iter()
        .map(|r| match field {
            "train_reward" => Ok(r.train_reward),
            "val_reward" => Ok(r.val_reward),
            "mean_length" => Ok(r.mean_length),
            "mean_kl" => Ok(r.mean_kl),
            "parse_failure_rate" => Ok(r.parse_failure_rate),
            "entropy_exact" => r.entropy_exact.ok_or_else(|| {
                CliError::Validation(format!("entropy_exact missing at step {}", r.step))
            }),
            "entropy_proxy" => r.entropy_proxy.ok_or_else(|| {
                CliError::Validation(format!("entropy_proxy missing at step {}", r.step))
            }),
            other => Err(CliError::Config(format!(
                "unknown metrics field {other:?}; expected one of {}",
                METRIC_FIELDS.join(", ")
            ))),
        })
        .collect()
}

pub fn cmd_smooth_metrics(
    input: &Path,
    window: usize,
    field: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let records: Vec<MetricsRecord> = read_jsonl(input)?;
    if records.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no metrics records",
            input.display()
        )));
    }
    let values = extract_field(&records, field)?;
    let smoothed = smooth_series(&values, window)?;

    let mut text = format!("step,{field},{field}_smoothed\n");
    for (i, record) in records.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", record.step, values[i], smoothed[i]));
    }
    match out {
        Some(path) => {
            std::fs::write(path, text.as_bytes()).map_err(|e| CliError::io(path, e))?;
            println!(
                "smooth-metrics: {} rows of {field} (window {window}) -> {}",
                records.len(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}
