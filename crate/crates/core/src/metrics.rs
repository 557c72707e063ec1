//! Regulation metrics over reproduction logs: per-keypoint accuracy and
//! precision in the end window, and the success rate of a batch.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintKind;
use crate::geometry::Vec3;
use crate::sim::SimLog;

/// Default success tolerance as a fraction of the slave scale.
pub const DEFAULT_TOLERANCE: f64 = 2e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// Mean distance to the goal over the end window, per keypoint.
    pub accuracy: Vec<f64>,
    /// RMS deviation from the end-window mean position, per keypoint.
    pub precision: Vec<f64>,
    /// Distance to the goal at the last step, per keypoint.
    pub final_error: Vec<f64>,
    pub success: bool,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointMetrics {
    pub slave: String,
    pub descriptor_id: u64,
    pub kind: ConstraintKind,
    pub accuracy: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tolerance: f64,
    pub keypoints: Vec<KeypointMetrics>,
    pub trials: Vec<TrialMetrics>,
    pub success_rate: f64,
}

pub fn trial_metrics(log: &SimLog, tolerance: f64) -> TrialMetrics {
    let window = log.end_window();
    let l = log.header.keypoints.len();
    let mut accuracy = vec![f64::INFINITY; l];
    let mut precision = vec![f64::INFINITY; l];
    let mut final_error = vec![f64::INFINITY; l];
    if !window.is_empty() {
        let n = window.len() as f64;
        for i in 0..l {
            accuracy[i] = window.iter().map(|r| (r.goals[i] - r.keypoints[i]).norm()).sum::<f64>() / n;
            let mean = window.iter().map(|r| r.keypoints[i]).sum::<Vec3>() / n;
            precision[i] = (window.iter().map(|r| (r.keypoints[i] - mean).norm_squared()).sum::<f64>() / n).sqrt();
            let last = window.last().expect("non-empty");
            final_error[i] = (last.goals[i] - last.keypoints[i]).norm();
        }
    }
    let failed = log.failed() || window.is_empty();
    let success = !failed
        && final_error
            .iter()
            .zip(&log.header.keypoints)
            .all(|(e, k)| *e <= tolerance * k.scale);
    TrialMetrics {
        accuracy,
        precision,
        final_error,
        success,
        failed,
    }
}

/// Aggregates a batch of trials of the same task. Accuracy is the mean over
/// trials; precision pools the squared deviations of all trials.
pub fn evaluate(logs: &[SimLog], tolerance: f64) -> Metrics {
    let trials: Vec<TrialMetrics> = logs.iter().map(|log| trial_metrics(log, tolerance)).collect();
    let keypoints = match logs.first() {
        Some(first) => first
            .header
            .keypoints
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let n = trials.len() as f64;
                KeypointMetrics {
                    slave: k.slave.clone(),
                    descriptor_id: k.descriptor_id,
                    kind: k.kind,
                    accuracy: trials.iter().map(|t| t.accuracy[i]).sum::<f64>() / n,
                    precision: (trials.iter().map(|t| t.precision[i] * t.precision[i]).sum::<f64>() / n).sqrt(),
                }
            })
            .collect(),
        None => Vec::new(),
    };
    let success_rate = if trials.is_empty() {
        0.0
    } else {
        trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64
    };
    Metrics {
        tolerance,
        keypoints,
        trials,
        success_rate,
    }
}

/// Plain-text table: accuracy and precision in millimeters per keypoint,
/// then the success rate.
pub fn render_table(metrics: &Metrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<4} {:<12} {:<5} {:>10} {:>10}", "k", "keypoint", "kind", "Acc [mm]", "Prec [mm]");
    for (i, k) in metrics.keypoints.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<4} {:<12} {:<5} {:>10.3} {:>10.3}",
            format!("k{}", i + 1),
            format!("{}:{}", k.slave, k.descriptor_id),
            k.kind.as_str(),
            k.accuracy * 1e3,
            k.precision * 1e3
        );
    }
    let passed = metrics.trials.iter().filter(|t| t.success).count();
    let _ = writeln!(
        out,
        "R = {:.1} % ({}/{} trials, tolerance {}·φ)",
        metrics.success_rate * 100.0,
        passed,
        metrics.trials.len(),
        metrics.tolerance
    );
    out
}
