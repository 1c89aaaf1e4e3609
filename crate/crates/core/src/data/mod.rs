//! Preference records, dataset splits and the utilities that build them.

mod construct;
mod jsonl;

pub use construct::{all_pairs_from_scores, flip_augment, mix_datasets, pair_from_scores, Paired};
pub use jsonl::{read_jsonl, read_sft_jsonl, write_jsonl, write_sft_jsonl};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

pub const DEFAULT_GAP_THRESHOLD: f64 = 1.5;
pub const FLIP_SUFFIX: &str = "#flip";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field: {field}")]
    MissingField { line: usize, field: String },
    #[error("line {line}: unknown value {value:?} for field {field}")]
    UnknownEnumValue {
        line: usize,
        field: String,
        value: String,
    },
    #[error("invalid example {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("{0}")]
    Empty(String),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    APreferred,
    BPreferred,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::APreferred => Label::BPreferred,
            Label::BPreferred => Label::APreferred,
        }
    }

    pub const NAMES: [&'static str; 2] = ["A_PREFERRED", "B_PREFERRED"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Rlaif,
    WestOfN,
    Rlcd,
    Rmboost,
    RmboostSft,
    Real,
}

impl Strategy {
    pub const NAMES: [&'static str; 6] = [
        "RLAIF",
        "WEST_OF_N",
        "RLCD",
        "RMBOOST",
        "RMBOOST_SFT",
        "REAL",
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Rlaif => "RLAIF",
            Strategy::WestOfN => "WEST_OF_N",
            Strategy::Rlcd => "RLCD",
            Strategy::Rmboost => "RMBOOST",
            Strategy::RmboostSft => "RMBOOST_SFT",
            Strategy::Real => "REAL",
        }
    }

    pub fn is_rmboost(self) -> bool {
        matches!(self, Strategy::Rmboost | Strategy::RmboostSft)
    }

    /// Strategies whose label comes from a predictor rather than construction.
    pub fn predicts_label(self) -> bool {
        matches!(self, Strategy::Rlaif | Strategy::WestOfN)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterVerdict {
    Kept,
    Dropped,
    Unchecked,
}

impl FilterVerdict {
    pub const NAMES: [&'static str; 3] = ["KEPT", "DROPPED", "UNCHECKED"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationMeta {
    pub strategy: Strategy,
    pub label_is_noisy: bool,
    pub corrupted_aspects: Vec<String>,
    pub filter_verdict: FilterVerdict,
    /// `None` when the producer did not account tokens.
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub seed: u64,
}

impl GenerationMeta {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        GenerationMeta {
            strategy,
            label_is_noisy: strategy.predicts_label(),
            corrupted_aspects: Vec::new(),
            filter_verdict: FilterVerdict::Unchecked,
            prompt_tokens: None,
            completion_tokens: None,
            seed,
        }
    }

    pub fn total_tokens(&self) -> Option<u64> {
        Some(self.prompt_tokens? + self.completion_tokens?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceExample {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    pub label: Label,
    pub meta: GenerationMeta,
}

impl PreferenceExample {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        response_a: impl Into<String>,
        response_b: impl Into<String>,
        label: Label,
        meta: GenerationMeta,
    ) -> Result<Self, DataError> {
        let ex = PreferenceExample {
            id: id.into(),
            prompt: prompt.into(),
            response_a: response_a.into(),
            response_b: response_b.into(),
            label,
            meta,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason: &str| DataError::Invalid {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.response_a == self.response_b {
            return Err(invalid("response_a and response_b are identical"));
        }
        if !self.meta.corrupted_aspects.is_empty() && !self.meta.strategy.is_rmboost() {
            return Err(invalid("corrupted_aspects set on a non-RMBoost example"));
        }
        if self.meta.label_is_noisy && !self.meta.strategy.predicts_label() {
            return Err(invalid("label_is_noisy set on a constructed-label example"));
        }
        Ok(())
    }

    pub fn preferred(&self) -> &str {
        match self.label {
            Label::APreferred => &self.response_a,
            Label::BPreferred => &self.response_b,
        }
    }

    pub fn rejected(&self) -> &str {
        match self.label {
            Label::APreferred => &self.response_b,
            Label::BPreferred => &self.response_a,
        }
    }

    /// Response-swapped, label-flipped twin.
    pub fn flipped(&self) -> PreferenceExample {
        PreferenceExample {
            id: format!("{}{}", self.id, FLIP_SUFFIX),
            prompt: self.prompt.clone(),
            response_a: self.response_b.clone(),
            response_b: self.response_a.clone(),
            label: self.label.flipped(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitName {
    SftTrain,
    SftVal,
    RmTrain,
    RmVal,
    RmTest,
}

/// SFT-route record: a prompt with its reference response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftRecord {
    pub id: String,
    pub prompt: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<PreferenceExample>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, examples: Vec<PreferenceExample>) -> Self {
        DatasetSplit { name, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftSplit {
    pub name: SplitName,
    pub records: Vec<SftRecord>,
}

/// Checks that no id appears in more than one split (or twice in one).
pub fn check_disjoint<'a, I>(splits: I) -> Result<(), DataError>
where
    I: IntoIterator<Item = &'a DatasetSplit>,
{
    let mut seen = std::collections::BTreeSet::new();
    let mut dups = std::collections::BTreeSet::new();
    for split in splits {
        for ex in &split.examples {
            if !seen.insert(ex.id.as_str()) {
                dups.insert(ex.id.clone());
            }
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(DataError::DuplicateIds(dups.into_iter().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub prompt_id: String,
    pub text: String,
    pub overall_score: f64,
}

#[cfg(test)]
pub(crate) fn example(id: &str, a: &str, b: &str, label: Label) -> PreferenceExample {
    PreferenceExample::new(id, "p", a, b, label, GenerationMeta::new(Strategy::Real, 0)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_responses_rejected() {
        let err = PreferenceExample::new(
            "x",
            "p",
            "same",
            "same",
            Label::APreferred,
            GenerationMeta::new(Strategy::Real, 0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("identical"));
    }

    #[test]
    fn meta_invariants() {
        let mut meta = GenerationMeta::new(Strategy::Rlcd, 0);
        assert!(!meta.label_is_noisy);
        meta.corrupted_aspects.push("factuality".into());
        assert!(PreferenceExample::new("x", "p", "a", "b", Label::APreferred, meta).is_err());

        let mut meta = GenerationMeta::new(Strategy::Real, 0);
        meta.label_is_noisy = true;
        assert!(PreferenceExample::new("x", "p", "a", "b", Label::APreferred, meta).is_err());

        assert!(GenerationMeta::new(Strategy::Rlaif, 0).label_is_noisy);
        assert!(GenerationMeta::new(Strategy::WestOfN, 0).label_is_noisy);
    }

    #[test]
    fn disjointness() {
        let s1 = DatasetSplit::new(SplitName::RmTrain, vec![example("e1", "a", "b", Label::APreferred)]);
        let s2 = DatasetSplit::new(SplitName::RmVal, vec![example("e1", "c", "d", Label::APreferred)]);
        let s3 = DatasetSplit::new(SplitName::RmTest, vec![example("e2", "c", "d", Label::APreferred)]);
        assert!(check_disjoint([&s1, &s3]).is_ok());
        assert!(matches!(check_disjoint([&s1, &s2]), Err(DataError::DuplicateIds(ids)) if ids == vec!["e1".to_string()]));
    }
}
