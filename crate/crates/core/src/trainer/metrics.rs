//! Per-step training metrics, their file sinks, and the smoothing helper
//! used when plotting reward and length curves.

use crate::trainer::TrainerError;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Window used for the plotted moving averages.
pub const SMOOTHING_WINDOW: usize = 50;

/// One optimization step's worth of diagnostics. `entropy_exact` is the mean
/// full-distribution entropy (only available when the policy exposes its
/// distributions); `entropy_proxy` is the mean negative sampled-token
/// log-probability. They are different estimators and are never merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_reward: f64,
    pub val_reward: f64,
    pub mean_length: f64,
    pub mean_kl: f64,
    pub entropy_exact: Option<f64>,
    pub entropy_proxy: Option<f64>,
    pub parse_failure_rate: f64,
    pub wall_clock_ms: u64,
}

/// Equality over everything that is supposed to be reproducible; wall-clock
/// time is measurement noise and is excluded.
pub fn metrics_match_ignoring_wall_clock(a: &[MetricsRecord], b: &[MetricsRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.step == y.step
                && x.train_reward == y.train_reward
                && x.val_reward == y.val_reward
                && x.mean_length == y.mean_length
                && x.mean_kl == y.mean_kl
                && x.entropy_exact == y.entropy_exact
                && x.entropy_proxy == y.entropy_proxy
                && x.parse_failure_rate == y.parse_failure_rate
        })
}

/// Trailing moving average: element i averages the last `window` values up
/// to and including i, using the available prefix while i + 1 < window.
pub fn smooth_series(values: &[f64], window: usize) -> Result<Vec<f64>, TrainerError> {
    if window == 0 {
        return Err(TrainerError::Config("smoothing window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut running = 0.0;
    for i in 0..values.len() {
        running += values[i];
        if i >= window {
            running -= values[i - window];
        }
        let span = (i + 1).min(window);
        out.push(running / span as f64);
    }
    Ok(out)
}

fn cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Plot-ready CSV: one header row, one row per record, empty cells for
/// metrics a mode does not produce.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), TrainerError> {
    let mut out = String::from(
        "step,train_reward,val_reward,mean_length,mean_kl,entropy_exact,entropy_proxy,parse_failure_rate,wall_clock_ms\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.train_reward,
            r.val_reward,
            r.mean_length,
            r.mean_kl,
            cell(r.entropy_exact),
            cell(r.entropy_proxy),
            r.parse_failure_rate,
            r.wall_clock_ms
        ));
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| TrainerError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| TrainerError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_examples() {
        let constant = vec![2.5; 10];
        assert_eq!(smooth_series(&constant, 50).unwrap(), constant);

        let series = vec![3.0, -1.0, 4.0];
        assert_eq!(smooth_series(&series, 1).unwrap(), series);

        let alternating: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        let smoothed = smooth_series(&alternating, 2).unwrap();
        assert_eq!(smoothed[0], 0.0);
        for v in &smoothed[1..] {
            assert_eq!(*v, 0.5);
        }

        // Prefix shorter than the window averages what exists so far.
        let ramp = vec![1.0, 2.0, 3.0, 4.0];
        let smoothed = smooth_series(&ramp, 3).unwrap();
        assert_eq!(smoothed, vec![1.0, 1.5, 2.0, 3.0]);

        assert!(smooth_series(&ramp, 0).is_err());
        assert!(smooth_series(&[], 5).unwrap().is_empty());
    }

    fn record(step: u64, wall_clock_ms: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            train_reward: 0.5,
            val_reward: 0.4,
            mean_length: 3.25,
            mean_kl: 0.001,
            entropy_exact: Some(1.2),
            entropy_proxy: Some(1.1),
            parse_failure_rate: 0.0,
            wall_clock_ms,
        }
    }

    #[test]
    fn wall_clock_is_ignored_in_comparison() {
        let a = vec![record(0, 10), record(1, 11)];
        let b = vec![record(0, 99), record(1, 3)];
        assert!(metrics_match_ignoring_wall_clock(&a, &b));

        let mut c = b.clone();
        c[1].train_reward += 1e-12;
        assert!(!metrics_match_ignoring_wall_clock(&a, &c));
        assert!(!metrics_match_ignoring_wall_clock(&a, &b[..1]));
    }

    #[test]
    fn csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut with_none = record(0, 7);
        with_none.entropy_exact = None;
        write_metrics_csv(&path, &[with_none, record(1, 8)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("step,train_reward,val_reward"));
        assert_eq!(lines[1], "0,0.5,0.4,3.25,0.001,,1.1,0,7");
        assert_eq!(lines[2], "1,0.5,0.4,3.25,0.001,1.2,1.1,0,8");
    }
}
