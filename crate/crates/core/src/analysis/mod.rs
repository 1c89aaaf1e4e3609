//! Evaluation reports: best-of-N selection, win rates, length-ratio and β
//! histograms, token costs, and their CSV emitters.

mod reports;

pub use reports::{
    write_accuracy_csv, write_beta_csv, write_cost_csv, write_lenratio_csv, write_winrate_csv, AccuracyRow,
    WinRateRow,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::{DatasetSplit, PreferenceExample, Strategy};
use crate::llm::{Verdict, TemplateFamily};
use crate::par;
use crate::rm::{score, Featurizer, RmError, RmParams};
use crate::sim::{utility, BetaRecord, BetaStrategy, SimWorldConfig, UTILITY_TIE_EPS};
use crate::strategies::{GenContext, Generated, Prompt, StrategyError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no candidates")]
    NoCandidates,
    #[error("expected {expected} candidates, got {got}")]
    CandidateCount { expected: usize, got: usize },
    #[error("selection lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid bins: {0}")]
    Bins(String),
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Index of the highest-scoring candidate; ties go to the lowest index.
pub fn best_of_n_select<S: AsRef<str>>(
    prompt: &str,
    candidates: &[S],
    params: &RmParams,
    featurizer: &Featurizer,
    n: usize,
) -> Result<usize, AnalysisError> {
    if candidates.is_empty() {
        return Err(AnalysisError::NoCandidates);
    }
    if candidates.len() != n {
        return Err(AnalysisError::CandidateCount {
            expected: n,
            got: candidates.len(),
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let s = score(params, &featurizer.featurize(prompt, c.as_ref())?)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Side-by-side rater of two responses to the same prompt.
pub trait PairRater: Sync {
    fn rate(&self, prompt: &Prompt, a: &str, b: &str) -> Result<Verdict, String>;

    fn rate_all(&self, items: &[(&Prompt, &str, &str)]) -> Vec<Result<Verdict, String>> {
        par::map(items, |(p, a, b)| self.rate(p, a, b))
    }
}

/// Exact utility comparison in the simulation world.
pub struct UtilityRater<'a> {
    pub world: &'a SimWorldConfig,
}

impl PairRater for UtilityRater<'_> {
    fn rate(&self, _prompt: &Prompt, a: &str, b: &str) -> Result<Verdict, String> {
        let ua = utility(&self.world.parse_response(a).map_err(|e| e.to_string())?, self.world);
        let ub = utility(&self.world.parse_response(b).map_err(|e| e.to_string())?, self.world);
        Ok(if (ua - ub).abs() <= UTILITY_TIE_EPS {
            Verdict::Same
        } else if ua > ub {
            Verdict::First
        } else {
            Verdict::Second
        })
    }
}

/// Side-by-side LLM judge using the RLAIF judge template of the context's
/// family.
pub struct JudgeRater<'a> {
    pub ctx: GenContext<'a>,
}

impl JudgeRater<'_> {
    fn generated(&self, text: &str) -> Result<Generated, String> {
        let sim = match self.ctx.world {
            Some(w) => Some(w.parse_response(text).map_err(|e| e.to_string())?),
            None => None,
        };
        Ok(Generated {
            text: text.to_string(),
            sim,
            tokens: crate::strategies::Tokens::ZERO,
        })
    }
}

impl PairRater for JudgeRater<'_> {
    fn rate(&self, prompt: &Prompt, a: &str, b: &str) -> Result<Verdict, String> {
        self.rate_all(&[(prompt, a, b)]).pop().expect("one item")
    }

    fn rate_all(&self, items: &[(&Prompt, &str, &str)]) -> Vec<Result<Verdict, String>> {
        let mut requests = Vec::new();
        let mut slot = Vec::with_capacity(items.len());
        for (p, a, b) in items {
            let req = self
                .generated(a)
                .and_then(|ga| Ok((ga, self.generated(b)?)))
                .and_then(|(ga, gb)| {
                    crate::strategies::judge_request(&self.ctx, p, &ga, &gb, "winrate/judge").map_err(|e| e.to_string())
                });
            match req {
                Ok(r) => {
                    slot.push(Ok(requests.len()));
                    requests.push(r);
                }
                Err(e) => slot.push(Err(e)),
            }
        }
        let results = match crate::llm::bulk_complete(&requests, self.ctx.backend, self.ctx.backend_config) {
            Ok(out) => out.results,
            Err(e) => return items.iter().map(|_| Err(e.to_string())).collect(),
        };
        slot.into_iter()
            .map(|s| {
                let i = s?;
                let c = results[i].as_ref().map_err(|e| e.to_string())?;
                crate::llm::parse_sbs_verdict(&c.text).map_err(|e| e.to_string())
            })
            .collect()
    }
}

impl JudgeRater<'_> {
    pub fn family(&self) -> TemplateFamily {
        self.ctx.family
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub n_comparisons: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Items the rater failed on; they are also counted in `ties`.
    pub rater_failures: usize,
    /// (wins + ties/2) / n; 0.5 when there are no comparisons.
    pub win_rate: f64,
}

/// Win rate of selections `a` over selections `b`, prompt by prompt.
pub fn win_rate<A: AsRef<str>, B: AsRef<str>>(
    prompts: &[Prompt],
    a: &[A],
    b: &[B],
    rater: &dyn PairRater,
) -> Result<WinRateReport, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    if prompts.len() != a.len() {
        return Err(AnalysisError::LengthMismatch(prompts.len(), a.len()));
    }
    let items: Vec<(&Prompt, &str, &str)> = prompts
        .iter()
        .zip(a.iter().zip(b))
        .map(|(p, (x, y))| (p, x.as_ref(), y.as_ref()))
        .collect();
    let mut report = WinRateReport {
        n_comparisons: items.len(),
        wins: 0,
        losses: 0,
        ties: 0,
        rater_failures: 0,
        win_rate: 0.5,
    };
    for ((p, _, _), v) in items.iter().zip(rater.rate_all(&items)) {
        match v {
            Ok(Verdict::First) => report.wins += 1,
            Ok(Verdict::Second) => report.losses += 1,
            Ok(Verdict::Same) => report.ties += 1,
            Err(e) => {
                log::warn!("rater failed on {}: {e}; counted as a tie", p.id);
                report.ties += 1;
                report.rater_failures += 1;
            }
        }
    }
    if report.n_comparisons > 0 {
        report.win_rate = (report.wins as f64 + report.ties as f64 / 2.0) / report.n_comparisons as f64;
    }
    Ok(report)
}

/// Log-spaced histogram bins over `[lo, hi]`. Values outside the range are
/// counted in the first or last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogBins {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl LogBins {
    pub fn length_ratio() -> Self {
        LogBins {
            lo: 1.0 / 16.0,
            hi: 16.0,
            n_bins: 20,
        }
    }

    pub fn beta() -> Self {
        LogBins {
            lo: 1.0 / 256.0,
            hi: 256.0,
            n_bins: 20,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) || self.n_bins == 0 {
            return Err(AnalysisError::Bins(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..=self.n_bins)
            .map(|i| (a + (b - a) * i as f64 / self.n_bins as f64).exp())
            .collect()
    }

    pub fn index(&self, x: f64) -> usize {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let t = (x.ln() - a) / (b - a) * self.n_bins as f64;
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t.floor() as usize).min(self.n_bins - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: usize,
    /// Quantiles of the raw values, not of the bins.
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    /// Index of the fullest bin (lowest on ties); `None` without data.
    pub mode_bin: Option<usize>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

pub fn histogram(values: &[f64], bins: &LogBins) -> Result<HistogramSummary, AnalysisError> {
    bins.validate()?;
    let mut counts = vec![0u64; bins.n_bins];
    for &v in values {
        counts[bins.index(v)] += 1;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mode_bin = if values.is_empty() {
        None
    } else {
        let max = *counts.iter().max().expect("n_bins >= 1");
        counts.iter().position(|c| *c == max)
    };
    Ok(HistogramSummary {
        bin_edges: bins.edges(),
        counts,
        n: values.len(),
        median: quantile(&sorted, 0.5),
        p25: quantile(&sorted, 0.25),
        p75: quantile(&sorted, 0.75),
        mode_bin,
    })
}

/// Length in whitespace tokens. A sim response renders one token per item,
/// so this is also its item count.
pub fn response_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// len(preferred)/len(rejected) per example; examples with an empty rejected
/// response are skipped with a warning.
pub fn length_ratios(examples: &[PreferenceExample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(examples.len());
    let mut skipped = Vec::new();
    for ex in examples {
        let rej = response_length(ex.rejected());
        if rej == 0 {
            skipped.push(ex.id.as_str());
            continue;
        }
        out.push(response_length(ex.preferred()) as f64 / rej as f64);
    }
    if !skipped.is_empty() {
        log::warn!(
            "{} of {} examples have an empty rejected response; skipped in length ratios (first: {})",
            skipped.len(),
            examples.len(),
            skipped[0]
        );
        log::debug!("skipped in length ratios: {}", skipped.join(", "));
    }
    out
}

pub fn length_ratio_stats(split: &DatasetSplit, bins: &LogBins) -> Result<HistogramSummary, AnalysisError> {
    histogram(&length_ratios(&split.examples), bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    /// Histogram of β on log-spaced bins; its quantiles are of β itself.
    pub hist: HistogramSummary,
    pub median_log_beta: f64,
    /// |median log β|: how far the typical example is from unbiased.
    pub d: f64,
    /// Interquartile range of log β.
    pub iqr_log_beta: f64,
    /// Records with β = 0 (edit the generator could not have made); they are
    /// counted in the first bin and as −∞ in log quantiles.
    pub n_zero: usize,
}

pub fn beta_summary(records: &[BetaRecord], bins: &LogBins) -> Result<BTreeMap<BetaStrategy, BetaSummary>, AnalysisError> {
    let mut by: BTreeMap<BetaStrategy, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(r.strategy).or_default().push(r.beta);
    }
    by.into_iter()
        .map(|(s, betas)| {
            let hist = histogram(&betas, bins)?;
            let mut logs: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
            logs.sort_by(f64::total_cmp);
            let median_log_beta = quantile(&logs, 0.5);
            Ok((
                s,
                BetaSummary {
                    hist,
                    median_log_beta,
                    d: median_log_beta.abs(),
                    iqr_log_beta: quantile(&logs, 0.75) - quantile(&logs, 0.25),
                    n_zero: betas.iter().filter(|b| **b == 0.0).count(),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub strategy: Strategy,
    pub n_examples: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    /// False when some example lacks token counts; the sums then cover only
    /// the examples that have them.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn row(&self, strategy: Strategy) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// total(a) / total(b); `None` if either is missing, incomplete, or b is 0.
    pub fn ratio(&self, a: Strategy, b: Strategy) -> Option<f64> {
        let (ra, rb) = (self.row(a)?, self.row(b)?);
        if !ra.complete || !rb.complete || rb.total_tokens == 0 {
            return None;
        }
        Some(ra.total_tokens as f64 / rb.total_tokens as f64)
    }

    /// Every ordered pair of distinct complete strategies with its ratio.
    pub fn ratios(&self) -> Vec<(Strategy, Strategy, f64)> {
        let mut out = Vec::new();
        for a in &self.rows {
            for b in &self.rows {
                if a.strategy != b.strategy {
                    if let Some(r) = self.ratio(a.strategy, b.strategy) {
                        out.push((a.strategy, b.strategy, r));
                    }
                }
            }
        }
        out
    }
}

/// Sums prompt and completion tokens per strategy, in order of first
/// appearance.
pub fn cost_report(splits: &[&DatasetSplit]) -> CostReport {
    let mut rows: Vec<CostRow> = Vec::new();
    for ex in splits.iter().flat_map(|s| &s.examples) {
        let strategy = ex.meta.strategy;
        let idx = match rows.iter().position(|r| r.strategy == strategy) {
            Some(i) => i,
            None => {
                rows.push(CostRow {
                    strategy,
                    n_examples: 0,
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    total_tokens: 0,
                    complete: true,
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.n_examples += 1;
        match (ex.meta.prompt_tokens, ex.meta.completion_tokens) {
            (Some(p), Some(c)) => {
                row.prompt_tokens += p;
                row.completion_tokens += c;
                row.total_tokens += p + c;
            }
            _ => row.complete = false,
        }
    }
    CostReport { rows }
}
