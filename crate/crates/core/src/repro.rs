//! Desk-scale reproduction in the simulation world: every strategy generates
//! from the same prompts, reward models are trained per strategy and
//! condition, and the analysis reports are written side by side.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::analysis::{
    beta_summary, best_of_n_select, cost_report, length_ratio_stats, win_rate, write_accuracy_csv, write_beta_csv,
    write_cost_csv, write_lenratio_csv, write_winrate_csv, AccuracyRow, AnalysisError, BetaSummary, CostReport,
    HistogramSummary, LogBins, UtilityRater, WinRateRow,
};
use crate::data::{mix_datasets, write_jsonl, DataError, DatasetSplit, PreferenceExample, SplitName, Strategy};
use crate::llm::{BackendConfig, BackendKind, LlmError, SimBackend, TemplateFamily};
use crate::rm::{evaluate_accuracy, train, Featurizer, RmError, TrainConfig, TrainOutcome};
use crate::seeds::{derive_seed, rng_for};
use crate::sim::{base_sample, compute_beta, BetaOptions, BetaRecord, BetaStrategy, SimError, SimWorldConfig};
use crate::strategies::{gen_sim_real, generate, GenContext, GenOutput, Prompt, StrategyConfig, StrategyError};

#[derive(Debug, thiserror::Error)]
pub enum ReproError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReproError {
    ReproError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeaturizerKind {
    SimAspect,
    TextNgram,
}

/// Reward-model features; the sim featurizer takes its world from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerConfig {
    pub kind: FeaturizerKind,
    pub sigma_obs: f64,
    pub ngram_n: usize,
    pub buckets: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            kind: FeaturizerKind::SimAspect,
            sigma_obs: 0.15,
            ngram_n: 3,
            buckets: 4096,
        }
    }
}

impl FeaturizerConfig {
    pub fn build(&self, world: &SimWorldConfig, seed: u64) -> Featurizer {
        match self.kind {
            FeaturizerKind::SimAspect => Featurizer::sim(world, self.sigma_obs, seed),
            FeaturizerKind::TextNgram => Featurizer::TextNgram {
                n: self.ngram_n,
                buckets: self.buckets,
            },
        }
    }
}

/// Sizes and switches of the multi-seed reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproConfig {
    pub n_seeds: usize,
    pub n_real: usize,
    /// Synthetic pairs per strategy. Every strategy first gets the same
    /// `n_syn` prompts; strategies that drop pairs are topped up from further
    /// shared prompts until they reach `n_syn`. Real splits are topped up the
    /// same way.
    pub n_syn: usize,
    /// Cap on top-up rounds before a split is left short.
    pub max_topup_rounds: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_bon_prompts: usize,
    pub bon_n: usize,
    /// Examples per strategy whose β is computed, taken from the front of the
    /// topped-up dataset.
    pub n_beta: usize,
    pub strategies: Vec<Strategy>,
    pub beta_bins: LogBins,
    pub length_bins: LogBins,
    /// Also write each generated split as JSONL under `seed_<seed>/`.
    pub write_datasets: bool,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            n_seeds: 5,
            n_real: 500,
            n_syn: 2000,
            max_topup_rounds: 20,
            n_val: 500,
            n_test: 2000,
            n_bon_prompts: 500,
            bon_n: 9,
            n_beta: 500,
            strategies: vec![Strategy::Rlaif, Strategy::WestOfN, Strategy::Rlcd, Strategy::Rmboost],
            beta_bins: LogBins::beta(),
            length_bins: LogBins::length_ratio(),
            write_datasets: false,
        }
    }
}

/// Optional file locations; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

/// Everything a run depends on. Each command writes the resolved form as
/// `resolved_config.json` next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub family: TemplateFamily,
    pub world: SimWorldConfig,
    pub backend: BackendConfig,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
    pub repro: ReproConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            family: TemplateFamily::QaFeedback,
            world: SimWorldConfig::reference(),
            backend: BackendConfig::sim(),
            strategy: StrategyConfig::default(),
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
            repro: ReproConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ReproError> {
        serde_json::from_str(text).map_err(|e| ReproError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ReproError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        RunConfig::from_json(&text).map_err(|e| io_err(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf, ReproError> {
        let path = dir.as_ref().join("resolved_config.json");
        std::fs::write(&path, self.to_json()).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), ReproError> {
        self.world.validate()?;
        self.backend.validate()?;
        self.train.validate()?;
        let r = &self.repro;
        if r.n_seeds == 0 || r.n_real == 0 || r.n_syn == 0 || r.n_val == 0 || r.n_test == 0 {
            return Err(ReproError::Config("repro sizes must be >= 1".into()));
        }
        if r.bon_n == 0 {
            return Err(ReproError::Config("bon_n must be >= 1".into()));
        }
        if r.strategies.contains(&Strategy::Real) || r.strategies.contains(&Strategy::RmboostSft) {
            return Err(ReproError::Config("repro strategies must be synthetic and need no SFT data".into()));
        }
        r.beta_bins.validate()?;
        r.length_bins.validate()?;
        Ok(())
    }

    /// Seed of replicate `i`.
    pub fn replicate_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, "sim-repro", &format!("replicate/{i}"))
    }
}

/// Row of `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seed: u64,
    pub condition: String,
    pub n_train: usize,
    pub accuracy: f64,
}

/// Everything one replicate produced.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub betas: BTreeMap<BetaStrategy, BetaSummary>,
    pub beta_records: Vec<BetaRecord>,
    pub win_rates: Vec<WinRateRow>,
    pub cost: CostReport,
    pub length_ratios: Vec<(String, HistogramSummary)>,
    /// Output of each strategy on the shared prompt set, before top-up.
    pub generated: BTreeMap<Strategy, GenOutput>,
    /// Training data of each strategy: exactly `n_syn` pairs unless top-up
    /// ran out of rounds.
    pub datasets: BTreeMap<Strategy, DatasetSplit>,
}

impl Replicate {
    pub fn accuracy(&self, strategy: &str, condition: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.condition == condition)
            .map(|r| r.accuracy)
    }

    pub fn win_rate(&self, a: &str, b: &str) -> Option<f64> {
        self.win_rates
            .iter()
            .find(|r| r.system_a == a && r.system_b == b)
            .map(|r| r.report.win_rate)
    }
}

pub const CONDITION_REAL: &str = "real";
pub const CONDITION_SYN: &str = "syn";
pub const CONDITION_MIXED: &str = "real+syn";

struct PromptSets {
    real: Vec<Prompt>,
    val: Vec<Prompt>,
    test: Vec<Prompt>,
    syn: Vec<Prompt>,
    bon: Vec<Prompt>,
    /// First index of the top-up prompt stream.
    topup_start: usize,
}

fn prompt_sets(r: &ReproConfig, world: &SimWorldConfig) -> PromptSets {
    let mut next = 0;
    let mut take = |n: usize| {
        let v: Vec<Prompt> = (next..next + n).map(|i| Prompt::sim(i, world)).collect();
        next += n;
        v
    };
    PromptSets {
        real: take(r.n_real),
        val: take(r.n_val),
        test: take(r.n_test),
        syn: take(r.n_syn),
        bon: take(r.n_bon_prompts),
        topup_start: next,
    }
}

/// Tops `examples` up to `target` with outputs of `gen` on fresh prompts
/// starting at index `next`; returns the next unused index.
fn fill_to<F>(
    examples: &mut Vec<PreferenceExample>,
    target: usize,
    mut next: usize,
    rounds: usize,
    world: &SimWorldConfig,
    mut gen: F,
) -> Result<usize, ReproError>
where
    F: FnMut(&[Prompt]) -> Result<Vec<PreferenceExample>, ReproError>,
{
    for _ in 0..rounds {
        if examples.len() >= target {
            break;
        }
        let short = target - examples.len();
        let prompts: Vec<Prompt> = (next..next + short).map(|i| Prompt::sim(i, world)).collect();
        next += short;
        examples.extend(gen(&prompts)?);
    }
    examples.truncate(target);
    if examples.len() < target {
        log::warn!("only {} of {target} pairs after {rounds} top-up rounds", examples.len());
    }
    Ok(next)
}

fn beta_strategy(s: Strategy) -> Option<BetaStrategy> {
    match s {
        Strategy::Rlaif => Some(BetaStrategy::Rlaif),
        Strategy::Rlcd => Some(BetaStrategy::Rlcd),
        Strategy::Rmboost => Some(BetaStrategy::Rmboost),
        _ => None,
    }
}

/// Runs one replicate of the reproduction with seed `seed`.
pub fn run_replicate(config: &RunConfig, seed: u64) -> Result<Replicate, ReproError> {
    let world = &config.world;
    let r = &config.repro;
    let sets = prompt_sets(r, world);
    let featurizer = config.featurizer.build(world, seed);
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    // Equal-utility pairs are dropped from real data too, so every split is
    // topped up to its nominal size from one shared prompt stream.
    let mut next = sets.topup_start;
    let mut real_split = |prompts: &[Prompt], target: usize, name: SplitName, stream: &str| -> Result<DatasetSplit, ReproError> {
        let real_seed = derive_seed(seed, "real", stream);
        let gen = |p: &[Prompt]| -> Result<Vec<PreferenceExample>, ReproError> { Ok(gen_sim_real(p, world, real_seed)?.examples) };
        let mut examples = gen(prompts)?;
        next = fill_to(&mut examples, target, next, r.max_topup_rounds, world, gen)?;
        Ok(DatasetSplit::new(name, examples))
    };
    let real = real_split(&sets.real, r.n_real, SplitName::RmTrain, "train")?;
    let val = real_split(&sets.val, r.n_val, SplitName::RmVal, "val")?;
    let test = real_split(&sets.test, r.n_test, SplitName::RmTest, "test")?;
    let syn_topup_start = next;

    let fit = |name: &str, condition: &str, data: &DatasetSplit| -> Result<(ComparisonRow, TrainOutcome), ReproError> {
        let out = train(data, &val, &featurizer, &train_cfg)?;
        let row = ComparisonRow {
            strategy: name.to_string(),
            seed,
            condition: condition.to_string(),
            n_train: data.len(),
            accuracy: evaluate_accuracy(&out.checkpoint.params(), &test, &featurizer)?,
        };
        Ok((row, out))
    };
    let (row, real_out) = fit(Strategy::Real.as_str(), CONDITION_REAL, &real)?;
    let mut rows = vec![row];
    let real_model = real_out.checkpoint.clone();
    let mut models: Vec<(String, TrainOutcome)> = vec![(Strategy::Real.as_str().to_string(), real_out)];

    let backend = SimBackend::new(world.clone());
    let backend_config = BackendConfig {
        kind: BackendKind::SimWorld,
        ..config.backend.clone()
    };
    let ctx = GenContext {
        backend: &backend,
        backend_config: &backend_config,
        family: TemplateFamily::QaFeedback,
        world: Some(world),
        seed,
    };
    let mut generated = BTreeMap::new();
    let mut datasets = BTreeMap::new();
    let mut beta_records = Vec::new();
    let mut length_ratios = vec![(Strategy::Real.as_str().to_string(), length_ratio_stats(&real, &r.length_bins)?)];
    for &s in &r.strategies {
        let strat_cfg = StrategyConfig {
            strategy: s,
            use_sft_response: false,
            ..config.strategy.clone()
        };
        let out = generate(&sets.syn, &ctx, &strat_cfg, Some(&real_model), None)?;
        let mut examples = out.examples.clone();
        fill_to(&mut examples, r.n_syn, syn_topup_start, r.max_topup_rounds, world, |p| {
            Ok(generate(p, &ctx, &strat_cfg, Some(&real_model), None)?.examples)
        })?;
        let split = DatasetSplit::new(SplitName::RmTrain, examples);
        if split.is_empty() {
            return Err(ReproError::Config(format!("{s} emitted no examples")));
        }
        let (row, model) = fit(s.as_str(), CONDITION_SYN, &split)?;
        rows.push(row);
        models.push((s.as_str().to_string(), model));
        let mixed = mix_datasets(&real, &split, derive_seed(seed, s.as_str(), "mix"))?;
        rows.push(fit(s.as_str(), CONDITION_MIXED, &mixed)?.0);
        if let Some(bs) = beta_strategy(s) {
            let opts = BetaOptions {
                no_aspect: !strat_cfg.aspects_enabled,
                label_prior: None,
            };
            for ex in split.examples.iter().take(r.n_beta) {
                beta_records.push(compute_beta(ex, bs, world, &opts)?);
            }
        }
        length_ratios.push((s.as_str().to_string(), length_ratio_stats(&split, &r.length_bins)?));
        generated.insert(s, out);
        datasets.insert(s, split);
    }
    let betas = beta_summary(&beta_records, &r.beta_bins)?;
    let cost = cost_report(
        &generated
            .values()
            .map(|o| DatasetSplit::new(SplitName::RmTrain, o.examples.clone()))
            .collect::<Vec<_>>()
            .iter()
            .collect::<Vec<_>>(),
    );

    // Best-of-N: every model picks among the same candidates.
    let candidates: Vec<Vec<String>> = sets
        .bon
        .iter()
        .map(|p| {
            let mut rng = rng_for(seed, &p.id, "bon/candidates");
            (0..r.bon_n).map(|_| base_sample(world, &mut rng).to_string()).collect()
        })
        .collect();
    let mut picks: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, m) in &models {
        let params = m.checkpoint.params();
        let mut chosen = Vec::with_capacity(candidates.len());
        for (p, c) in sets.bon.iter().zip(&candidates) {
            chosen.push(c[best_of_n_select(&p.text, c, &params, &featurizer, r.bon_n)?].as_str());
        }
        picks.insert(name.as_str(), chosen);
    }
    let rater = UtilityRater { world };
    let mut win_rates = Vec::new();
    let head = Strategy::Rmboost.as_str();
    if let Some(ours) = picks.get(head) {
        for (name, _) in &models {
            if name != head {
                win_rates.push(WinRateRow {
                    seed,
                    system_a: head.to_string(),
                    system_b: name.clone(),
                    report: win_rate(&sets.bon, ours, &picks[name.as_str()], &rater)?,
                });
            }
        }
    }

    Ok(Replicate {
        seed,
        rows,
        betas,
        beta_records,
        win_rates,
        cost,
        length_ratios,
        generated,
        datasets,
    })
}

#[derive(Debug, Clone)]
pub struct ReproOutput {
    pub replicates: Vec<Replicate>,
    pub accuracy: Vec<AccuracyRow>,
}

/// Runs every replicate and writes `comparison.csv`, `accuracy.csv` (mean
/// over seeds), `winrate.csv`, the β, length-ratio and cost reports, and
/// `resolved_config.json` into `out_dir`.
pub fn run_sim_repro(config: &RunConfig, out_dir: &Path) -> Result<ReproOutput, ReproError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    config.write_resolved(out_dir)?;
    let mut replicates = Vec::with_capacity(config.repro.n_seeds);
    for i in 0..config.repro.n_seeds {
        let seed = config.replicate_seed(i);
        log::info!("replicate {i} (seed {seed})");
        let rep = run_replicate(config, seed)?;
        if config.repro.write_datasets {
            let dir = out_dir.join(format!("seed_{seed}"));
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            for (s, split) in &rep.datasets {
                write_jsonl(split, dir.join(format!("{}.jsonl", s.as_str().to_ascii_lowercase())))?;
            }
        }
        replicates.push(rep);
    }

    let path = out_dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for row in replicates.iter().flat_map(|r| &r.rows) {
        w.serialize(row).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let mut accuracy: Vec<AccuracyRow> = Vec::new();
    for row in &replicates[0].rows {
        let vals: Vec<f64> = replicates
            .iter()
            .filter_map(|r| r.accuracy(&row.strategy, &row.condition))
            .collect();
        accuracy.push(AccuracyRow {
            strategy: row.strategy.clone(),
            condition: row.condition.clone(),
            accuracy: vals.iter().sum::<f64>() / vals.len() as f64,
        });
    }
    write_accuracy_csv(out_dir.join("accuracy.csv"), &accuracy)?;
    let win: Vec<WinRateRow> = replicates.iter().flat_map(|r| r.win_rates.clone()).collect();
    write_winrate_csv(out_dir.join("winrate.csv"), &win)?;
    let betas: Vec<_> = replicates.iter().map(|r| (r.seed, r.betas.clone())).collect();
    write_beta_csv(out_dir, &betas)?;
    let lens: Vec<_> = replicates
        .iter()
        .flat_map(|r| r.length_ratios.iter().map(move |(s, h)| (r.seed, s.clone(), h.clone())))
        .collect();
    write_lenratio_csv(out_dir, &lens)?;
    let costs: Vec<_> = replicates.iter().map(|r| (r.seed, r.cost.clone())).collect();
    write_cost_csv(out_dir, &costs)?;
    Ok(ReproOutput { replicates, accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            repro: ReproConfig {
                n_seeds: 2,
                n_real: 60,
                n_syn: 80,
                n_val: 40,
                n_test: 60,
                n_bon_prompts: 20,
                n_beta: 30,
                ..ReproConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_roundtrip_and_unknown_keys() {
        let c = small();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(RunConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"repro": {"n_seedz": 2}}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn validation() {
        let mut c = small();
        c.repro.strategies.push(Strategy::Real);
        assert!(c.validate().is_err());
        let mut c = small();
        c.repro.bon_n = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_run_writes_every_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sim_repro(&small(), dir.path()).unwrap();
        assert_eq!(out.replicates.len(), 2);
        let rep = &out.replicates[0];
        // REAL once, then syn and real+syn per strategy
        assert_eq!(rep.rows.len(), 1 + 2 * 4);
        assert_eq!(rep.win_rates.len(), 4);
        assert_eq!(rep.betas.len(), 3);
        for f in [
            "comparison.csv",
            "accuracy.csv",
            "winrate.csv",
            "beta_hist.csv",
            "beta_summary.csv",
            "lenratio_hist.csv",
            "lenratio_summary.csv",
            "cost.csv",
            "cost_ratios.csv",
            "resolved_config.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let cmp = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert!(cmp.starts_with("strategy,seed,condition,n_train,accuracy\n"));
        assert_eq!(cmp.lines().count(), 1 + 2 * 9);
        let resolved = RunConfig::load(dir.path().join("resolved_config.json")).unwrap();
        assert_eq!(resolved, small());
    }
}
