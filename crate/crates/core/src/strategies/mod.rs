//! Synthetic preference-pair generators.
//!
//! Every generator works stage-wise over a batch of prompts: all calls of one
//! stage go through [`bulk_complete`] together, and every random choice is
//! seeded from `(global seed, prompt id, stream)` so results do not depend on
//! scheduling. Failures never vanish silently; each one becomes a
//! [`DropRecord`].

mod contrast;
mod judge;
mod real;
mod rmboost;

pub use contrast::gen_rlcd;
pub use judge::{gen_rlaif, gen_west_of_n};
pub(crate) use judge::judge_request;
pub use real::gen_sim_real;
pub use rmboost::{gen_rmboost, quality_filter_judge, quality_filter_sim};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::data::{DataError, FilterVerdict, PreferenceExample, Strategy};
use crate::llm::{
    bulk_complete, extract_tag, BackendConfig, BulkReport, Completion, CompletionBackend,
    CompletionRequest, ItemError, LlmError, PromptTemplate, SimTask, TemplateFamily, TemplateKind,
};
use crate::seeds::derive_seed;
use crate::sim::{utility, Aspect, SimError, SimResponse, SimWorldConfig};

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid strategy config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelPolicy {
    AlwaysWorse,
    AlwaysBetter,
    Alternate,
}

impl FromStr for LabelPolicy {
    type Err = StrategyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "always-worse" | "worse" => Ok(LabelPolicy::AlwaysWorse),
            "always-better" | "better" => Ok(LabelPolicy::AlwaysBetter),
            "alternate" => Ok(LabelPolicy::Alternate),
            _ => Err(StrategyError::Config(format!("unknown label policy: {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AspectPicker {
    RandomSubset,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// West-of-N pool size.
    pub n_pool: usize,
    /// `false` selects the No-Aspect ablation.
    pub aspects_enabled: bool,
    /// `false` selects the No-Filtering ablation.
    pub filter_enabled: bool,
    pub label_choice_policy: LabelPolicy,
    pub aspect_picker: AspectPicker,
    pub use_sft_response: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategy: Strategy::Rmboost,
            n_pool: 4,
            aspects_enabled: true,
            filter_enabled: true,
            label_choice_policy: LabelPolicy::Alternate,
            aspect_picker: AspectPicker::RandomSubset,
            use_sft_response: false,
        }
    }
}

impl StrategyConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        StrategyConfig {
            strategy,
            use_sft_response: strategy == Strategy::RmboostSft,
            ..StrategyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.n_pool < 2 {
            return Err(StrategyError::Config("n_pool must be >= 2".into()));
        }
        if self.use_sft_response != (self.strategy == Strategy::RmboostSft) {
            return Err(StrategyError::Config(
                "use_sft_response must be set exactly for RMBOOST_SFT".into(),
            ));
        }
        if self.strategy == Strategy::Real {
            return Err(StrategyError::Config("REAL data is not generated by a strategy".into()));
        }
        Ok(())
    }
}

/// A generation input: an id, the text stored in emitted examples, and the
/// values of the family's prompt slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub slots: BTreeMap<String, String>,
}

impl Prompt {
    /// A synthetic QA-style prompt for the simulation world.
    pub fn sim(index: usize, world: &SimWorldConfig) -> Prompt {
        let facts: Vec<String> = (0..world.n_facts).map(|i| format!("fact{i}")).collect();
        let noise: Vec<String> = (0..world.n_distractors).map(|j| format!("noise{j}")).collect();
        let question = format!("Question {index}: which facts answer it?");
        let passages = format!("Relevant: {}. Unrelated: {}.", facts.join(" "), noise.join(" "));
        let reference = SimResponse::perfect(world.n_facts).to_string();
        let slots = [
            ("question", question.clone()),
            ("passages", passages),
            ("reference_response", reference),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Prompt {
            id: format!("sim-{index:05}"),
            text: question,
            slots,
        }
    }

    pub fn sim_batch(n: usize, world: &SimWorldConfig) -> Vec<Prompt> {
        (0..n).map(|i| Prompt::sim(i, world)).collect()
    }
}

/// Scores a response to a prompt; used by West-of-N.
pub trait ResponseScorer: Sync {
    fn score(&self, prompt: &str, response: &str) -> Result<f64, String>;
}

/// True sim-world utility.
pub struct UtilityScorer<'a> {
    pub world: &'a SimWorldConfig,
}

impl ResponseScorer for UtilityScorer<'_> {
    fn score(&self, _prompt: &str, response: &str) -> Result<f64, String> {
        let y = self.world.parse_response(response).map_err(|e| e.to_string())?;
        Ok(utility(&y, self.world))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropReason {
    /// The judge could not tell the responses apart.
    JudgeSame,
    TagMissing,
    VerdictParse,
    /// The backend kept failing for a call.
    Backend,
    /// A completion was not a valid sim response.
    ResponseParse,
    FilterRejected,
    /// Both responses are identical.
    Degenerate,
    /// Fewer than two pool members were generated.
    AllFailed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::JudgeSame => "JUDGE_SAME",
            DropReason::TagMissing => "TAG_MISSING",
            DropReason::VerdictParse => "VERDICT_PARSE",
            DropReason::Backend => "BACKEND",
            DropReason::ResponseParse => "RESPONSE_PARSE",
            DropReason::FilterRejected => "FILTER_REJECTED",
            DropReason::Degenerate => "DEGENERATE",
            DropReason::AllFailed => "ALL_FAILED",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub prompt_id: String,
    pub strategy: Strategy,
    pub reason: DropReason,
    pub detail: String,
    pub response_a: Option<String>,
    pub response_b: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenReport {
    pub n_prompts: usize,
    pub n_emitted: usize,
    pub drops: BTreeMap<DropReason, usize>,
    pub make_worse_attempts: usize,
    pub make_better_attempts: usize,
    pub calls: BulkReport,
}

impl GenReport {
    pub fn n_dropped(&self) -> usize {
        self.drops.values().sum()
    }

    fn absorb(&mut self, bulk: &BulkReport) {
        let c = &mut self.calls;
        c.n_requests += bulk.n_requests;
        c.n_failed += bulk.n_failed;
        c.attempts += bulk.attempts;
        c.prompt_tokens += bulk.prompt_tokens;
        c.completion_tokens += bulk.completion_tokens;
        c.missing_usage += bulk.missing_usage;
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenOutput {
    pub examples: Vec<PreferenceExample>,
    pub drops: Vec<DropRecord>,
    pub report: GenReport,
}

impl GenOutput {
    fn new(n_prompts: usize) -> Self {
        GenOutput {
            report: GenReport {
                n_prompts,
                ..GenReport::default()
            },
            ..GenOutput::default()
        }
    }

    fn drop(&mut self, record: DropRecord) {
        *self.report.drops.entry(record.reason).or_default() += 1;
        self.drops.push(record);
    }

    fn emit(&mut self, example: PreferenceExample) {
        self.report.n_emitted += 1;
        self.examples.push(example);
    }
}

/// Everything a generator needs besides the prompts.
pub struct GenContext<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub backend_config: &'a BackendConfig,
    pub family: TemplateFamily,
    /// Set when the backend is the simulation world; enables structured sim
    /// tasks and the utility-based quality filter.
    pub world: Option<&'a SimWorldConfig>,
    pub seed: u64,
}

/// Token usage of the calls behind one example; `None` once any call did
/// not report usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokens {
    pub prompt: Option<u64>,
    pub completion: Option<u64>,
}

impl Tokens {
    pub const ZERO: Tokens = Tokens {
        prompt: Some(0),
        completion: Some(0),
    };

    pub fn add(self, c: &Completion) -> Tokens {
        Tokens {
            prompt: self.prompt.zip(c.prompt_tokens).map(|(a, b)| a + b),
            completion: self.completion.zip(c.completion_tokens).map(|(a, b)| a + b),
        }
    }

    pub fn plus(self, other: Tokens) -> Tokens {
        Tokens {
            prompt: self.prompt.zip(other.prompt).map(|(a, b)| a + b),
            completion: self.completion.zip(other.completion).map(|(a, b)| a + b),
        }
    }
}

/// One parsed response.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Generated {
    pub text: String,
    pub sim: Option<SimResponse>,
    pub tokens: Tokens,
}

impl<'a> GenContext<'a> {
    pub fn template(&self, kind: TemplateKind) -> PromptTemplate {
        PromptTemplate::builtin(self.family, kind)
    }

    pub(crate) fn seed_for(&self, prompt: &Prompt, stream: &str) -> u64 {
        derive_seed(self.seed, &prompt.id, stream)
    }

    pub(crate) fn request(
        &self,
        prompt_text: String,
        judge: bool,
        seed: u64,
        task: SimTask,
    ) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt_text,
            temperature: if judge {
                self.backend_config.judge_temperature
            } else {
                self.backend_config.generation_temperature
            },
            max_tokens: self.backend_config.max_tokens,
            seed,
            sim_task: self.world.map(|_| task),
        }
    }

    pub(crate) fn run(
        &self,
        requests: &[CompletionRequest],
        out: &mut GenOutput,
    ) -> Result<Vec<Result<Completion, ItemError>>, StrategyError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let bulk = bulk_complete(requests, self.backend, self.backend_config)?;
        out.report.absorb(&bulk.report);
        Ok(bulk.results)
    }

    /// Extracts the `<response>` of a generation call and, in sim mode,
    /// checks it is a valid response of the world.
    pub(crate) fn parse_generation(
        &self,
        result: &Result<Completion, ItemError>,
    ) -> Result<Generated, (DropReason, String)> {
        let c = result
            .as_ref()
            .map_err(|e| (DropReason::Backend, e.to_string()))?;
        let text = extract_tag(&c.text, "response").map_err(|e| (DropReason::TagMissing, e.to_string()))?;
        let sim = match self.world {
            Some(w) => Some(
                w.parse_response(&text)
                    .map_err(|e| (DropReason::ResponseParse, e.to_string()))?,
            ),
            None => None,
        };
        Ok(Generated {
            text,
            sim,
            tokens: Tokens::ZERO.add(c),
        })
    }

    /// Slot values of the prompt plus `extra`.
    pub(crate) fn slots(&self, prompt: &Prompt, extra: &[(&str, &str)]) -> BTreeMap<String, String> {
        let mut slots = prompt.slots.clone();
        for (k, v) in extra {
            slots.insert(k.to_string(), v.to_string());
        }
        slots
    }
}

/// Template bullet name of each sim aspect in the QA Feedback family, whose
/// guideline aspects the sim world models.
pub fn sim_aspect_bullet(a: Aspect) -> &'static str {
    match a {
        Aspect::Completeness => "Completeness",
        Aspect::Factuality => "Factuality and Faithfulness",
        Aspect::Relevance => "Relevance and Coherence",
    }
}

pub(crate) fn drop_record(
    prompt: &Prompt,
    strategy: Strategy,
    reason: DropReason,
    detail: impl Into<String>,
    a: Option<&str>,
    b: Option<&str>,
) -> DropRecord {
    DropRecord {
        prompt_id: prompt.id.clone(),
        strategy,
        reason,
        detail: detail.into(),
        response_a: a.map(str::to_string),
        response_b: b.map(str::to_string),
    }
}

pub(crate) fn apply_tokens(example: &mut PreferenceExample, tokens: Tokens) {
    example.meta.prompt_tokens = tokens.prompt;
    example.meta.completion_tokens = tokens.completion;
}

/// Runs the generator selected by `config.strategy`.
///
/// `scorer` is required for West-of-N, `sft_responses` (keyed by prompt id)
/// for RMBoost with SFT responses.
pub fn generate(
    prompts: &[Prompt],
    ctx: &GenContext<'_>,
    config: &StrategyConfig,
    scorer: Option<&dyn ResponseScorer>,
    sft_responses: Option<&BTreeMap<String, String>>,
) -> Result<GenOutput, StrategyError> {
    config.validate()?;
    check_unique_ids(prompts)?;
    match config.strategy {
        Strategy::Rlaif => gen_rlaif(prompts, ctx),
        Strategy::WestOfN => {
            let scorer = scorer.ok_or_else(|| StrategyError::Config("WEST_OF_N needs a scorer".into()))?;
            gen_west_of_n(prompts, ctx, scorer, config.n_pool)
        }
        Strategy::Rlcd => gen_rlcd(prompts, ctx),
        Strategy::Rmboost | Strategy::RmboostSft => gen_rmboost(prompts, ctx, config, sft_responses),
        Strategy::Real => unreachable!("rejected by validate"),
    }
}

fn check_unique_ids(prompts: &[Prompt]) -> Result<(), StrategyError> {
    let mut seen = BTreeSet::new();
    let dups: BTreeSet<String> = prompts
        .iter()
        .filter(|p| !seen.insert(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if dups.is_empty() {
        Ok(())
    } else {
        Err(DataError::DuplicateIds(dups.into_iter().collect()).into())
    }
}

/// Checks the provenance fields every emitted example must carry.
pub fn check_provenance(example: &PreferenceExample) -> Result<(), String> {
    example.validate().map_err(|e| e.to_string())?;
    if example.meta.prompt_tokens.is_none() || example.meta.completion_tokens.is_none() {
        return Err(format!("{}: token counts missing", example.id));
    }
    if example.meta.strategy.is_rmboost() && example.meta.corrupted_aspects.is_empty() {
        return Err(format!("{}: corrupted_aspects missing", example.id));
    }
    if example.meta.filter_verdict == FilterVerdict::Dropped {
        return Err(format!("{}: emitted despite a DROPPED verdict", example.id));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::llm::SimBackend;

    pub fn fast_backend() -> BackendConfig {
        BackendConfig {
            max_parallel: 4,
            backoff_ms: 1,
            ..BackendConfig::sim()
        }
    }

    pub fn sim_run<T>(world: &SimWorldConfig, seed: u64, f: impl FnOnce(&GenContext<'_>) -> T) -> T {
        let backend = SimBackend::new(world.clone());
        let cfg = fast_backend();
        let ctx = GenContext {
            backend: &backend,
            backend_config: &cfg,
            family: TemplateFamily::QaFeedback,
            world: Some(world),
            seed,
        };
        f(&ctx)
    }
}
