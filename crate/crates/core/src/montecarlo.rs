//! Batches of independent mission runs over consecutive seeds.
//!
//! Each run owns its own world, so runs are embarrassingly parallel. With the
//! `parallel` feature they are spread over the rayon pool; results are
//! always collected in seed order, so output does not depend on scheduling.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::{ConfigError, MissionConfig};
use crate::mission::MissionRun;
use crate::report::RunReport;

/// State dimension of the filter, i.e. NEES degrees of freedom per sample.
pub const NEES_DOF: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub completed: bool,
    pub cross_track_mean_m: f64,
    pub cross_track_variance_m2: f64,
    pub final_nees: Option<f64>,
    pub mean_nees: Option<f64>,
    pub gps_rejected: u64,
    pub plants_sprayed: usize,
    /// Covariance trace sampled once per simulated second.
    pub trace_profile: Vec<f64>,
    /// NEES sampled once per simulated second, aligned with `trace_profile`.
    pub nees_profile: Vec<Option<f64>>,
    /// Full report, kept only when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p95: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            min: sorted[0],
            max: sorted[n - 1],
            p95: sorted[idx],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeesSummary {
    /// Simulated time at which every run is still going; the headline check.
    pub eval_time_s: f64,
    /// Average over runs of the NEES at `eval_time_s`.
    pub mean_at_eval: f64,
    /// Two-sided 95% band for an average of `samples` chi2(3) samples.
    pub lower_95: f64,
    pub upper_95: f64,
    pub consistent: bool,
    pub samples: usize,
    /// Share of whole seconds (up to `eval_time_s`) whose across-run average
    /// falls inside the band.
    pub fraction_of_seconds_inside: f64,
    /// Average over runs of each run's time-averaged NEES.
    pub time_averaged_mean: f64,
    /// Average over runs of the NEES at each run's last tick. Runs end when
    /// the estimate passes the path end, so this is biased upwards by the
    /// stopping rule and is reported for information only.
    pub final_tick_mean: f64,
}

/// Two-sided 95% band for the mean of `n` independent chi2(`dof`) samples.
pub fn nees_band(n: usize, dof: usize) -> (f64, f64) {
    let total = ChiSquared::new((n * dof) as f64).expect("positive dof");
    (total.inverse_cdf(0.025) / n as f64, total.inverse_cdf(0.975) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub mission: String,
    pub runs: usize,
    pub base_seed: u64,
    pub failed_runs: usize,
    pub cross_track_mean: Distribution,
    pub cross_track_variance: Distribution,
    /// Fraction of runs whose mean cross-track error is below 10 cm.
    pub fraction_mean_below_10cm: f64,
    pub nees: Option<NeesSummary>,
    /// Covariance trace per simulated second, averaged over runs.
    pub trace_profile: Vec<f64>,
    pub per_run: Vec<RunSummary>,
}

pub fn run_one(config: &MissionConfig, seed: u64, keep_report: bool) -> Result<RunSummary, ConfigError> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let run = MissionRun::new(&cfg)?;
    let per_second = cfg.tick_rate_hz.round().max(1.0) as u64;
    let mut trace_profile = Vec::new();
    let mut nees_profile = Vec::new();
    let report = run.run_with(|s| {
        if s.tick % per_second == 0 {
            trace_profile.push(s.cov_diag.iter().sum());
            nees_profile.push(s.nees);
        }
    });
    Ok(RunSummary {
        seed,
        completed: report.completed,
        cross_track_mean_m: report.cross_track.mean_m,
        cross_track_variance_m2: report.cross_track.variance_m2,
        final_nees: report.final_nees,
        mean_nees: report.mean_nees,
        gps_rejected: report.gps.rejected,
        plants_sprayed: report.plants_sprayed,
        trace_profile,
        nees_profile,
        report: keep_report.then_some(report),
    })
}

fn run_all(
    config: &MissionConfig,
    seeds: Vec<u64>,
    execution: Execution,
    keep: bool,
) -> Vec<Result<RunSummary, ConfigError>> {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            seeds.into_par_iter().map(|s| run_one(config, s, keep)).collect()
        }
        _ => seeds.into_iter().map(|s| run_one(config, s, keep)).collect(),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Across-run NEES statistics, or `None` if some run never reached a whole
/// second with a NEES sample.
fn nees_summary(per_run: &[RunSummary]) -> Option<NeesSummary> {
    let horizon = per_run.iter().map(|r| r.nees_profile.len()).min()?;
    let at = |k: usize| -> Vec<f64> { per_run.iter().filter_map(|r| r.nees_profile[k]).collect() };
    let eval = (0..horizon).rev().find(|&k| !at(k).is_empty())?;
    let samples = at(eval);
    let (lower_95, upper_95) = nees_band(samples.len(), NEES_DOF);
    let mean_at_eval = mean(&samples);

    let mut seconds = 0;
    let mut inside = 0;
    for k in 0..=eval {
        let v = at(k);
        if v.is_empty() {
            continue;
        }
        let (lo, hi) = nees_band(v.len(), NEES_DOF);
        seconds += 1;
        inside += usize::from((lo..=hi).contains(&mean(&v)));
    }
    let time_avg: Vec<f64> = per_run.iter().filter_map(|r| r.mean_nees).collect();
    let finals: Vec<f64> = per_run.iter().filter_map(|r| r.final_nees).collect();
    Some(NeesSummary {
        eval_time_s: eval as f64,
        mean_at_eval,
        lower_95,
        upper_95,
        consistent: (lower_95..=upper_95).contains(&mean_at_eval),
        samples: samples.len(),
        fraction_of_seconds_inside: inside as f64 / seconds as f64,
        time_averaged_mean: mean(&time_avg),
        final_tick_mean: mean(&finals),
    })
}

/// Runs `runs` missions with seeds `base_seed, base_seed + 1, ...`.
pub fn montecarlo(
    config: &MissionConfig,
    runs: usize,
    base_seed: u64,
    execution: Execution,
    keep_reports: bool,
) -> Result<MonteCarloReport, ConfigError> {
    assert!(runs >= 1, "at least one run is required");
    config.resolve()?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let per_run = run_all(config, seeds, execution, keep_reports)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let failed_runs = per_run.iter().filter(|r| !r.completed).count();
    let means: Vec<f64> = per_run.iter().map(|r| r.cross_track_mean_m).collect();
    let vars: Vec<f64> = per_run.iter().map(|r| r.cross_track_variance_m2).collect();
    let below = means.iter().filter(|&&m| m < 0.10).count();

    let nees = nees_summary(&per_run);

    let longest = per_run.iter().map(|r| r.trace_profile.len()).max().unwrap_or(0);
    let trace_profile = (0..longest)
        .map(|k| {
            let vals: Vec<f64> = per_run.iter().filter_map(|r| r.trace_profile.get(k).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();

    Ok(MonteCarloReport {
        mission: config.name.clone(),
        runs,
        base_seed,
        failed_runs,
        cross_track_mean: Distribution::of(&means),
        cross_track_variance: Distribution::of(&vars),
        fraction_mean_below_10cm: below as f64 / runs as f64,
        nees,
        trace_profile,
        per_run,
    })
}
