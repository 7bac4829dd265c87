//! Versioned result files: pretty JSON for the structured form and CSV for
//! the tabular form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::iterative::{IterationTrace, IterativeOptions};
use crate::screening::{ScreenConfig, ScreeningResult, ThresholdRule};
use crate::simbench::{BenchmarkSummary, TruthScore};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    pub response: String,
    pub column_names: Vec<String>,
    pub config: ScreenConfig,
    pub threshold_rule: ThresholdRule,
    pub seed: u64,
    pub result: ScreeningResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateReport {
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    pub response: String,
    pub column_names: Vec<String>,
    pub config: ScreenConfig,
    pub options: IterativeOptions,
    /// Final model, sorted.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub trace: IterationTrace,
    /// Marginal screening of the first round.
    pub marginal: ScreeningResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub format_version: u32,
    pub summary: BenchmarkSummary,
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(mut out: impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")
}

fn num(v: f64) -> String {
    if v.is_finite() {
        // shortest representation that round-trips
        format!("{v:?}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn joined(indices: &[usize]) -> String {
    indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// `rank,index,name,statistic,status,selected`, one row per covariate in rank order.
pub fn write_screen_table(
    out: impl Write,
    result: &ScreeningResult,
    names: &[String],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "index", "name", "statistic", "status", "selected"])?;
    for (r, &j) in result.ranking.iter().enumerate() {
        let status = serde_json::to_value(result.status[j])
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        w.write_record([
            (r + 1).to_string(),
            j.to_string(),
            names[j].clone(),
            num(result.stats[j]),
            status,
            u8::from(result.selected.binary_search(&j).is_ok()).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `round,screened,selected,threshold,penalty`; index sets are `;`-separated.
pub fn write_trace_table(out: impl Write, trace: &IterationTrace) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "screened", "selected", "threshold", "penalty"])?;
    for r in &trace.rounds {
        w.write_record([
            r.round.to_string(),
            joined(&r.screened),
            joined(&r.selected),
            num(r.threshold),
            r.penalty.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `truth,replications,median,iqr,q05,q25,q75,q95,failed`, one row per truth set.
pub fn write_summary_table(out: impl Write, summary: &BenchmarkSummary) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "truth",
        "replications",
        "median",
        "iqr",
        "q05",
        "q25",
        "q75",
        "q95",
        "failed",
    ])?;
    let rows: Vec<&TruthScore> = std::iter::once(&summary.primary)
        .chain(summary.secondary.as_ref())
        .collect();
    for score in rows {
        let s = &score.summary;
        w.write_record([
            joined(&score.truth),
            score.sizes.len().to_string(),
            num(s.median),
            num(s.iqr),
            num(s.q05),
            num(s.q25),
            num(s.q75),
            num(s.q95),
            summary.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iterative::{RoundRecord, StopReason};
    use crate::loss::LossSpec;
    use crate::screening::CovariateStatus;

    fn sample_result() -> ScreeningResult {
        ScreeningResult::from_stats(
            vec![0.125, f64::NEG_INFINITY, 1.0 / 3.0],
            vec![
                CovariateStatus::Converged,
                CovariateStatus::Degenerate,
                CovariateStatus::NotConverged,
            ],
        )
        .with_threshold(0.2)
    }

    #[test]
    fn screen_report_round_trips() {
        let report = ScreenReport {
            format_version: FORMAT_VERSION,
            n: 10,
            p: 3,
            response: "y".into(),
            column_names: vec!["a".into(), "b".into(), "c".into()],
            config: ScreenConfig::new(LossSpec::quantile(0.75).unwrap(), 5),
            threshold_rule: ThresholdRule::Permutation { n_perm: 2, q: 0.95 },
            seed: u64::MAX,
            result: sample_result(),
        };
        let mut buf = Vec::new();
        write_json(&mut buf, &report).unwrap();
        let back: ScreenReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn iterate_report_round_trips_infinite_values() {
        let options = IterativeOptions {
            penalty_grid: crate::iterative::PenaltyGrid::Explicit(vec![f64::INFINITY, 0.5, 0.0]),
            ..IterativeOptions::default()
        };
        let report = IterateReport {
            format_version: FORMAT_VERSION,
            n: 10,
            p: 3,
            response: "y".into(),
            column_names: vec!["a".into(), "b".into(), "c".into()],
            config: ScreenConfig::new(LossSpec::Gaussian, 5),
            options,
            selected: vec![2],
            selected_names: vec!["c".into()],
            trace: IterationTrace {
                rounds: vec![
                    RoundRecord {
                        round: 1,
                        screened: vec![2],
                        selected: vec![2],
                        threshold: 0.1,
                        penalty: Some(f64::INFINITY),
                    },
                    RoundRecord {
                        round: 2,
                        screened: vec![],
                        selected: vec![2],
                        threshold: f64::INFINITY,
                        penalty: None,
                    },
                ],
                stop_reason: StopReason::NoNewCandidates,
            },
            marginal: sample_result(),
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: IterateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn screen_table_layout() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut buf = Vec::new();
        write_screen_table(&mut buf, &sample_result(), &names).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rank,index,name,statistic,status,selected");
        assert_eq!(lines[1], "1,2,c,0.3333333333333333,not_converged,1");
        assert_eq!(lines[2], "2,0,a,0.125,converged,0");
        assert_eq!(lines[3], "3,1,b,-inf,degenerate,0");
    }
}
