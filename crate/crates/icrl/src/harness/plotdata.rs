//! Cross-seed aggregation of metrics into plot-ready CSV series.

use crate::error::{IcrlError, Result};
use crate::harness::metrics::MetricsRecord;
use crate::stats::{mean, std_sample};

/// Metrics fields addressable by name on the command line.
pub const METRIC_NAMES: &[&str] = &[
    "success_rate",
    "mean_return",
    "time_in_goal",
    "critic_loss",
    "actor_loss",
    "mean_positive_energy",
    "mean_negative_energy",
    "alpha",
];

pub fn metric_value(rec: &MetricsRecord, metric: &str) -> Result<f64> {
    Ok(match metric {
        "success_rate" => rec.success_rate,
        "mean_return" => rec.mean_return,
        "time_in_goal" => rec.time_in_goal,
        "critic_loss" => rec.critic_loss,
        "actor_loss" => rec.actor_loss,
        "mean_positive_energy" => rec.mean_positive_energy,
        "mean_negative_energy" => rec.mean_negative_energy,
        "alpha" => rec.alpha,
        other => {
            return Err(IcrlError::invalid(
                "metric_value",
                format!("unknown metric `{other}`; expected one of {METRIC_NAMES:?}"),
            ))
        }
    })
}

/// Align runs on a shared step grid and emit `step,mean,std,n` rows.
///
/// The standard deviation is the sample convention (n − 1 denominator),
/// reported as zero for a single run. Runs with mismatched grids are
/// rejected, naming the first divergent step.
pub fn emit_plotdata(runs: &[Vec<MetricsRecord>], metric: &str) -> Result<String> {
    if runs.is_empty() {
        return Err(IcrlError::invalid("emit_plotdata", "no runs given"));
    }
    let grid: Vec<u64> = runs[0].iter().map(|r| r.step).collect();
    for (k, run) in runs.iter().enumerate().skip(1) {
        let other: Vec<u64> = run.iter().map(|r| r.step).collect();
        if other != grid {
            let divergent = grid
                .iter()
                .zip(&other)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("run 0 has step {a}, run {k} has step {b}"))
                .unwrap_or_else(|| format!("run 0 has {} records, run {k} has {}", grid.len(), other.len()));
            return Err(IcrlError::invalid("emit_plotdata", format!("step grids differ: {divergent}")));
        }
    }
    let mut out = String::from("step,mean,std,n\n");
    for (i, &step) in grid.iter().enumerate() {
        let values: Vec<f64> = runs
            .iter()
            .map(|run| metric_value(&run[i], metric))
            .collect::<Result<_>>()?;
        out.push_str(&format!("{step},{},{},{}\n", mean(&values), std_sample(&values), values.len()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(steps: &[u64], values: &[f64]) -> Vec<MetricsRecord> {
        steps
            .iter()
            .zip(values)
            .map(|(&step, &v)| MetricsRecord {
                step,
                success_rate: v,
                mean_return: 0.0,
                time_in_goal: 0.0,
                critic_loss: 0.0,
                actor_loss: 0.0,
                mean_positive_energy: 0.0,
                mean_negative_energy: 0.0,
                alpha: 0.0,
                buffer_episodes: 0,
                updates: 0,
            })
            .collect()
    }

    #[test]
    fn single_run_has_zero_std() {
        let csv = emit_plotdata(&[series(&[0, 10], &[0.5, 0.75])], "success_rate").unwrap();
        assert_eq!(csv, "step,mean,std,n\n0,0.5,0,1\n10,0.75,0,1\n");
    }

    #[test]
    fn identical_runs_have_zero_std_and_shared_mean() {
        let a = series(&[0, 10], &[0.25, 0.5]);
        let csv = emit_plotdata(&[a.clone(), a], "success_rate").unwrap();
        assert!(csv.contains("0,0.25,0,2\n"));
        assert!(csv.contains("10,0.5,0,2\n"));
    }

    /// Three constant series {0, 1, 2}: mean 1, and under the documented
    /// sample-standard-deviation convention (n − 1) the spread is exactly 1.
    #[test]
    fn three_constant_series_aggregate_by_hand() {
        let runs = vec![
            series(&[0, 5], &[0.0, 0.0]),
            series(&[0, 5], &[1.0, 1.0]),
            series(&[0, 5], &[2.0, 2.0]),
        ];
        let csv = emit_plotdata(&runs, "success_rate").unwrap();
        assert_eq!(csv, "step,mean,std,n\n0,1,1,3\n5,1,1,3\n");
    }

    #[test]
    fn mismatched_grids_name_the_first_divergent_step() {
        let a = series(&[0, 10], &[0.0, 0.0]);
        let b = series(&[0, 12], &[0.0, 0.0]);
        let err = emit_plotdata(&[a, b], "success_rate").unwrap_err();
        assert!(err.to_string().contains("step 10"), "{err}");
        assert!(err.to_string().contains("step 12"), "{err}");
    }

    #[test]
    fn unknown_metric_is_rejected() {
        let a = series(&[0], &[0.0]);
        assert!(emit_plotdata(&[a], "win_rate").is_err());
    }
}
