//! Scaling laws, run normalization, speedup reports, energy and cost.

use crate::orchestrator::RunRecord;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("serial fraction {0} is not in [0, 1]")]
    Fraction(f64),
    #[error("node count must be at least 1, got {0}")]
    Nodes(f64),
    #[error("run {label}: {reason}")]
    Run { label: String, reason: String },
    #[error("need at least {need} runs, got {got}")]
    TooFewRuns { need: usize, got: usize },
    #[error("baseline run {0:?} not found")]
    NoBaseline(String),
    #[error("{0} must be positive, got {1}")]
    NotPositive(&'static str, f64),
    #[error("trend fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("trend points must span more than one year")]
    DegenerateYears,
}

fn check_scaling(f: f64, n: f64) -> Result<(), AnalysisError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(AnalysisError::Fraction(f));
    }
    if !(n >= 1.0) {
        return Err(AnalysisError::Nodes(n));
    }
    Ok(())
}

/// Fixed-size speedup with serial fraction `f` on `n` nodes.
pub fn amdahl(f: f64, n: f64) -> Result<f64, AnalysisError> {
    check_scaling(f, n)?;
    Ok(1.0 / (f + (1.0 - f) / n))
}

/// Scaled speedup with serial fraction `f` on `n` nodes.
pub fn gustafson(f: f64, n: f64) -> Result<f64, AnalysisError> {
    check_scaling(f, n)?;
    Ok(n - f * (n - 1.0))
}

/// Where a run's lost time came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LostKind {
    #[default]
    None,
    /// Tasks that ran without GPU acceleration.
    Outlier,
    /// Nodes withdrawn and later restored.
    Deallocation,
}

/// The quantities normalization needs from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub nodes: f64,
    pub run_time_s: f64,
    pub lost_time_s: f64,
    /// Run time with outlier tasks removed, when known.
    #[serde(default)]
    pub normalized_run_time_s: Option<f64>,
    #[serde(default)]
    pub lost_kind: LostKind,
}

impl RunSummary {
    /// Outlier ledger of a run; the normalized run time is the latest
    /// completion among non-outlier tasks.
    pub fn outliers_of(record: &RunRecord) -> Self {
        Self {
            label: record.run_id.clone(),
            nodes: record.node_count as f64,
            run_time_s: record.makespan_s,
            lost_time_s: record.outlier_lost_time_s,
            normalized_run_time_s: Some(record.non_outlier_makespan_s()),
            lost_kind: LostKind::Outlier,
        }
    }

    /// Deallocation ledger of a run.
    pub fn deallocations_of(record: &RunRecord) -> Self {
        Self {
            label: record.run_id.clone(),
            nodes: record.node_count as f64,
            run_time_s: record.makespan_s,
            lost_time_s: record.outage_lost_time_s,
            normalized_run_time_s: None,
            lost_kind: LostKind::Deallocation,
        }
    }

    /// Picks the ledger that has lost time, preferring outliers.
    pub fn of(record: &RunRecord) -> Self {
        if record.outlier_lost_time_s > 0.0 {
            Self::outliers_of(record)
        } else if record.outage_lost_time_s > 0.0 {
            Self::deallocations_of(record)
        } else {
            Self {
                lost_kind: LostKind::None,
                ..Self::deallocations_of(record)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRun {
    pub label: String,
    pub nodes: f64,
    pub run_time_s: f64,
    pub lost_time_s: f64,
    pub lost_nodes: f64,
    pub normalized_nodes: f64,
    pub normalized_run_time_s: f64,
}

/// Denominator for converting lost seconds into lost nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasis {
    Raw,
    #[default]
    Normalized,
}

fn finish(
    s: &RunSummary,
    lost_nodes: f64,
    normalized_run_time_s: f64,
) -> Result<NormalizedRun, AnalysisError> {
    let bad = |reason: String| AnalysisError::Run {
        label: s.label.clone(),
        reason,
    };
    if !(lost_nodes >= 0.0 && lost_nodes < s.nodes) {
        return Err(bad(format!(
            "lost nodes {lost_nodes} outside [0, {})",
            s.nodes
        )));
    }
    Ok(NormalizedRun {
        label: s.label.clone(),
        nodes: s.nodes,
        run_time_s: s.run_time_s,
        lost_time_s: s.lost_time_s,
        lost_nodes,
        normalized_nodes: s.nodes - lost_nodes,
        normalized_run_time_s,
    })
}

fn check_summary(s: &RunSummary) -> Result<(), AnalysisError> {
    let bad = |reason: String| AnalysisError::Run {
        label: s.label.clone(),
        reason,
    };
    if !(s.nodes >= 1.0) {
        return Err(bad(format!("node count {}", s.nodes)));
    }
    if !(s.run_time_s > 0.0) {
        return Err(bad(format!("run time {}", s.run_time_s)));
    }
    if !(s.lost_time_s >= 0.0) {
        return Err(bad(format!("lost time {}", s.lost_time_s)));
    }
    Ok(())
}

/// Removes outlier-task time from both the run time and the node count.
pub fn normalize_outliers(
    s: &RunSummary,
    basis: TimeBasis,
) -> Result<NormalizedRun, AnalysisError> {
    check_summary(s)?;
    let normalized = s.normalized_run_time_s.unwrap_or(s.run_time_s);
    if !(normalized > 0.0) {
        return Err(AnalysisError::Run {
            label: s.label.clone(),
            reason: "no non-outlier work (all tasks are outliers)".into(),
        });
    }
    let denom = match basis {
        TimeBasis::Raw => s.run_time_s,
        TimeBasis::Normalized => normalized,
    };
    finish(s, s.lost_time_s / denom, normalized)
}

/// Converts node-seconds lost to outages into lost nodes over the run.
pub fn normalize_deallocations(s: &RunSummary) -> Result<NormalizedRun, AnalysisError> {
    check_summary(s)?;
    finish(s, s.lost_time_s / s.run_time_s, s.run_time_s)
}

/// Dispatches on the summary's [`LostKind`].
pub fn normalize(s: &RunSummary, basis: TimeBasis) -> Result<NormalizedRun, AnalysisError> {
    match s.lost_kind {
        LostKind::Outlier => normalize_outliers(s, basis),
        LostKind::Deallocation | LostKind::None => normalize_deallocations(s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub label: String,
    pub nodes: f64,
    pub normalized_nodes: f64,
    pub run_time_s: f64,
    pub normalized_run_time_s: f64,
    /// Baseline raw time over this raw time.
    pub raw_speedup: f64,
    /// Raw node ratio to the baseline.
    pub raw_ideal: f64,
    pub speedup: f64,
    /// Normalized node ratio to the baseline.
    pub ideal: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub baseline: String,
    pub rows: Vec<ScalingRow>,
    /// Mean of `normalized_run_time * normalized_nodes` over all runs.
    pub single_node_equivalent_s: f64,
}

/// Speedup and efficiency of each run relative to `baseline`.
pub fn speedup_report(
    runs: &[NormalizedRun],
    baseline: &str,
) -> Result<ScalingReport, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns {
            need: 2,
            got: runs.len(),
        });
    }
    let base = runs
        .iter()
        .find(|r| r.label == baseline)
        .ok_or_else(|| AnalysisError::NoBaseline(baseline.to_string()))?;
    let rows = runs
        .iter()
        .map(|r| {
            let speedup = base.normalized_run_time_s / r.normalized_run_time_s;
            let ideal = r.normalized_nodes / base.normalized_nodes;
            ScalingRow {
                label: r.label.clone(),
                nodes: r.nodes,
                normalized_nodes: r.normalized_nodes,
                run_time_s: r.run_time_s,
                normalized_run_time_s: r.normalized_run_time_s,
                raw_speedup: base.run_time_s / r.run_time_s,
                raw_ideal: r.nodes / base.nodes,
                speedup,
                ideal,
                efficiency: speedup / ideal,
            }
        })
        .collect();
    let single = runs
        .iter()
        .map(|r| r.normalized_run_time_s * r.normalized_nodes)
        .sum::<f64>()
        / runs.len() as f64;
    Ok(ScalingReport {
        baseline: baseline.to_string(),
        rows,
        single_node_equivalent_s: single,
    })
}

impl ScalingReport {
    pub fn row(&self, label: &str) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# efficiency = speedup / ideal, both relative to run {:?}\n\
             # single_node_equivalent_s = {:.0}\n\
             label,nodes,normalized_nodes,run_time_s,normalized_run_time_s,raw_speedup,raw_ideal,speedup,ideal,efficiency\n",
            self.baseline, self.single_node_equivalent_s
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.1},{:.1},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.label,
                r.nodes,
                r.normalized_nodes,
                r.run_time_s,
                r.normalized_run_time_s,
                r.raw_speedup,
                r.raw_ideal,
                r.speedup,
                r.ideal,
                r.efficiency
            );
        }
        out
    }
}

/// Pixel count of the 12-level, 512 px tile pyramid's top level.
pub const TERAPIXEL_PIXELS: f64 = 1_099_511_627_776.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunCost {
    pub p_av_kw: f64,
    pub r_norm_hours: f64,
    pub energy_kwh: f64,
    pub c_hr: f64,
    pub cost: f64,
    pub pixels: f64,
    pub pixels_per_pound: f64,
}

/// Energy, cost and pixels per pound for one run.
pub fn energy_cost(
    r_norm_hours: f64,
    p_av_kw: f64,
    c_hr: f64,
    pixels: f64,
) -> Result<RunCost, AnalysisError> {
    for (name, v) in [
        ("r_norm", r_norm_hours),
        ("p_av", p_av_kw),
        ("c_hr", c_hr),
        ("pixels", pixels),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(AnalysisError::NotPositive(name, v));
        }
    }
    let cost = c_hr * r_norm_hours;
    Ok(RunCost {
        p_av_kw,
        r_norm_hours,
        energy_kwh: p_av_kw * r_norm_hours,
        c_hr,
        cost,
        pixels,
        pixels_per_pound: pixels / cost,
    })
}

pub fn cost_table_csv(rows: &[(String, RunCost)]) -> String {
    let mut out =
        String::from("label,p_av_kw,r_norm_hours,energy_kwh,c_hr,cost,pixels_per_pound_millions\n");
    for (label, c) in rows {
        let _ = writeln!(
            out,
            "{label},{:.3},{:.3},{:.2},{:.3},{:.2},{:.1}",
            c.p_av_kw,
            c.r_norm_hours,
            c.energy_kwh,
            c.c_hr,
            c.cost,
            c.pixels_per_pound / 1e6
        );
    }
    out
}

/// `ln(performance) = intercept + slope * year`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub intercept: f64,
    pub slope: f64,
}

impl TrendFit {
    /// Multiplicative growth per year.
    pub fn growth_per_year(&self) -> f64 {
        self.slope.exp()
    }

    pub fn predict(&self, year: f64) -> f64 {
        (self.intercept + self.slope * year).exp()
    }

    /// Year at which the fit reaches `target`.
    pub fn year_for(&self, target: f64) -> f64 {
        (target.ln() - self.intercept) / self.slope
    }
}

/// Least-squares exponential fit of `(year, performance)` points.
pub fn fit_trend(points: &[(f64, f64)]) -> Result<TrendFit, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    if let Some(&(_, p)) = points.iter().find(|(_, p)| !(*p > 0.0)) {
        return Err(AnalysisError::NotPositive("performance", p));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateYears);
    }
    let slope = sxy / sxx;
    Ok(TrendFit {
        intercept: my - slope * mx,
        slope,
    })
}

/// Fits the points and returns the fit with the year `target` is reached.
pub fn trend_forecast(
    points: &[(f64, f64)],
    target: f64,
) -> Result<(TrendFit, f64), AnalysisError> {
    if !(target > 0.0) {
        return Err(AnalysisError::NotPositive("target", target));
    }
    let fit = fit_trend(points)?;
    Ok((fit, fit.year_for(target)))
}
