use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use super::{AnalysisError, BetaSummary, CostReport, HistogramSummary, WinRateReport};
use crate::sim::BetaStrategy;

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Row of `accuracy.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub strategy: String,
    pub condition: String,
    pub accuracy: f64,
}

pub fn write_accuracy_csv(path: impl AsRef<Path>, rows: &[AccuracyRow]) -> Result<(), AnalysisError> {
    write_rows(path.as_ref(), rows)
}

/// One comparison of `winrate.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinRateRow {
    pub seed: u64,
    pub system_a: String,
    pub system_b: String,
    pub report: WinRateReport,
}

pub fn write_winrate_csv(path: impl AsRef<Path>, rows: &[WinRateRow]) -> Result<(), AnalysisError> {
    #[derive(Serialize)]
    struct Flat<'a> {
        seed: u64,
        system_a: &'a str,
        system_b: &'a str,
        n_comparisons: usize,
        wins: usize,
        losses: usize,
        ties: usize,
        rater_failures: usize,
        win_rate: f64,
    }
    write_rows(
        path.as_ref(),
        rows.iter().map(|r| Flat {
            seed: r.seed,
            system_a: &r.system_a,
            system_b: &r.system_b,
            n_comparisons: r.report.n_comparisons,
            wins: r.report.wins,
            losses: r.report.losses,
            ties: r.report.ties,
            rater_failures: r.report.rater_failures,
            win_rate: r.report.win_rate,
        }),
    )
}

#[derive(Serialize)]
struct BinRow<'a> {
    seed: u64,
    strategy: &'a str,
    bin_lo: f64,
    bin_hi: f64,
    count: u64,
}

fn bin_rows<'a>(seed: u64, strategy: &'a str, h: &HistogramSummary) -> impl Iterator<Item = BinRow<'a>> + 'a {
    let edges = h.bin_edges.clone();
    let counts = h.counts.clone();
    (0..counts.len()).map(move |i| BinRow {
        seed,
        strategy,
        bin_lo: edges[i],
        bin_hi: edges[i + 1],
        count: counts[i],
    })
}

/// Writes `beta_hist.csv` (`seed,strategy,bin_lo,bin_hi,count`) and
/// `beta_summary.csv` into `dir`.
pub fn write_beta_csv(dir: impl AsRef<Path>, per_seed: &[(u64, BTreeMap<BetaStrategy, BetaSummary>)]) -> Result<(), AnalysisError> {
    let dir = dir.as_ref();
    let mut hist = Vec::new();
    for (seed, m) in per_seed {
        for (s, b) in m {
            hist.extend(bin_rows(*seed, s.as_str(), &b.hist));
        }
    }
    write_rows(&dir.join("beta_hist.csv"), hist)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        seed: u64,
        strategy: &'a str,
        n: usize,
        n_zero: usize,
        median_log_beta: f64,
        d: f64,
        iqr_log_beta: f64,
    }
    let rows = per_seed.iter().flat_map(|(seed, m)| {
        m.iter().map(move |(s, b)| Summary {
            seed: *seed,
            strategy: s.as_str(),
            n: b.hist.n,
            n_zero: b.n_zero,
            median_log_beta: b.median_log_beta,
            d: b.d,
            iqr_log_beta: b.iqr_log_beta,
        })
    });
    write_rows(&dir.join("beta_summary.csv"), rows)
}

/// Writes `lenratio_hist.csv` (`seed,strategy,bin_lo,bin_hi,count`) and
/// `lenratio_summary.csv` into `dir`.
pub fn write_lenratio_csv(dir: impl AsRef<Path>, rows: &[(u64, String, HistogramSummary)]) -> Result<(), AnalysisError> {
    let dir = dir.as_ref();
    write_rows(
        &dir.join("lenratio_hist.csv"),
        rows.iter().flat_map(|(seed, s, h)| bin_rows(*seed, s, h)),
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        seed: u64,
        strategy: &'a str,
        n: usize,
        median: f64,
        p25: f64,
        p75: f64,
        mode_bin_lo: Option<f64>,
        mode_bin_hi: Option<f64>,
    }
    write_rows(
        &dir.join("lenratio_summary.csv"),
        rows.iter().map(|(seed, s, h)| Summary {
            seed: *seed,
            strategy: s,
            n: h.n,
            median: h.median,
            p25: h.p25,
            p75: h.p75,
            mode_bin_lo: h.mode_bin.map(|i| h.bin_edges[i]),
            mode_bin_hi: h.mode_bin.map(|i| h.bin_edges[i + 1]),
        }),
    )
}

/// Writes `cost.csv` (per-strategy totals) and `cost_ratios.csv` (every
/// ordered pair of complete strategies) into `dir`.
pub fn write_cost_csv(dir: impl AsRef<Path>, per_seed: &[(u64, CostReport)]) -> Result<(), AnalysisError> {
    let dir = dir.as_ref();
    #[derive(Serialize)]
    struct Row<'a> {
        seed: u64,
        strategy: &'a str,
        n_examples: usize,
        prompt_tokens: u64,
        completion_tokens: u64,
        total_tokens: u64,
        complete: bool,
        tokens_per_example: f64,
    }
    write_rows(
        &dir.join("cost.csv"),
        per_seed.iter().flat_map(|(seed, r)| {
            r.rows.iter().map(move |c| Row {
                seed: *seed,
                strategy: c.strategy.as_str(),
                n_examples: c.n_examples,
                prompt_tokens: c.prompt_tokens,
                completion_tokens: c.completion_tokens,
                total_tokens: c.total_tokens,
                complete: c.complete,
                tokens_per_example: c.total_tokens as f64 / c.n_examples.max(1) as f64,
            })
        }),
    )?;

    #[derive(Serialize)]
    struct Ratio<'a> {
        seed: u64,
        numerator: &'a str,
        denominator: &'a str,
        ratio: f64,
    }
    let ratios: Vec<(u64, _)> = per_seed.iter().map(|(seed, r)| (*seed, r.ratios())).collect();
    write_rows(
        &dir.join("cost_ratios.csv"),
        ratios.iter().flat_map(|(seed, rs)| {
            rs.iter().map(move |(a, b, x)| Ratio {
                seed: *seed,
                numerator: a.as_str(),
                denominator: b.as_str(),
                ratio: *x,
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::{beta_summary, cost_report, histogram, LogBins};
    use super::*;
    use crate::data::{DatasetSplit, GenerationMeta, Label, PreferenceExample, SplitName, Strategy};
    use crate::sim::BetaRecord;

    fn read(p: &Path) -> String {
        std::fs::read_to_string(p).unwrap()
    }

    #[test]
    fn emitters_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            BetaRecord {
                example_id: "a".into(),
                strategy: BetaStrategy::Rlaif,
                beta: 0.8,
            },
            BetaRecord {
                example_id: "b".into(),
                strategy: BetaStrategy::Rmboost,
                beta: 2.0,
            },
        ];
        let b = beta_summary(&recs, &LogBins::beta()).unwrap();
        let mut meta = GenerationMeta::new(Strategy::Rlcd, 0);
        meta.prompt_tokens = Some(10);
        meta.completion_tokens = Some(5);
        let split = DatasetSplit::new(
            SplitName::RmTrain,
            vec![PreferenceExample::new("x", "p", "a", "b", Label::APreferred, meta).unwrap()],
        );
        let h = histogram(&[1.0, 2.0], &LogBins::length_ratio()).unwrap();
        let mut snapshots = Vec::new();
        for _ in 0..2 {
            write_beta_csv(dir.path(), &[(7, b.clone())]).unwrap();
            write_lenratio_csv(dir.path(), &[(7, "RLCD".into(), h.clone())]).unwrap();
            write_cost_csv(dir.path(), &[(7, cost_report(&[&split]))]).unwrap();
            write_accuracy_csv(
                dir.path().join("accuracy.csv"),
                &[AccuracyRow {
                    strategy: "RMBOOST".into(),
                    condition: "syn".into(),
                    accuracy: 0.75,
                }],
            )
            .unwrap();
            let names = ["beta_hist.csv", "beta_summary.csv", "lenratio_hist.csv", "lenratio_summary.csv", "cost.csv", "cost_ratios.csv", "accuracy.csv"];
            snapshots.push(names.map(|n| read(&dir.path().join(n))));
        }
        assert_eq!(snapshots[0], snapshots[1]);
        let s = &snapshots[0];
        assert!(s[0].starts_with("seed,strategy,bin_lo,bin_hi,count\n"));
        assert_eq!(s[0].lines().count(), 41);
        assert!(s[1].contains("7,RLAIF,1,0,"));
        assert!(s[4].contains("7,RLCD,1,10,5,15,true,15.0\n"));
        assert_eq!(s[6], "strategy,condition,accuracy\nRMBOOST,syn,0.75\n");
    }
}
