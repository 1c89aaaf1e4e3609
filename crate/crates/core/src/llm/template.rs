use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::LlmError;

/// Dataset family a builtin template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    QaFeedback,
    UltraFeedback,
    Tldr,
}

impl TemplateFamily {
    pub const ALL: [TemplateFamily; 3] = [
        TemplateFamily::QaFeedback,
        TemplateFamily::UltraFeedback,
        TemplateFamily::Tldr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateFamily::QaFeedback => "qa_feedback",
            TemplateFamily::UltraFeedback => "ultra_feedback",
            TemplateFamily::Tldr => "tldr",
        }
    }

    /// Names of the evaluation aspects listed in the family's guideline.
    pub fn aspect_names(self) -> &'static [&'static str] {
        match self {
            TemplateFamily::QaFeedback => &[
                "Relevance and Coherence",
                "Factuality and Faithfulness",
                "Completeness",
            ],
            TemplateFamily::UltraFeedback => &[
                "Honesty",
                "Truthfulness",
                "Faithful to input",
                "Helpfulness",
                "Verbalized Calibration",
            ],
            TemplateFamily::Tldr => &["Coherence", "Accuracy", "Coverage"],
        }
    }

    /// Slots describing the prompt itself (everything but the responses).
    pub fn prompt_slots(self) -> &'static [&'static str] {
        match self {
            TemplateFamily::QaFeedback => &["question", "passages", "reference_response"],
            TemplateFamily::UltraFeedback => &["system_prompt", "instruction"],
            TemplateFamily::Tldr => &["post"],
        }
    }

    /// Slot names of the two candidates in the judge template.
    pub fn judge_slots(self) -> (&'static str, &'static str) {
        match self {
            TemplateFamily::Tldr => ("first_summary", "second_summary"),
            _ => ("first_response", "second_response"),
        }
    }
}

impl fmt::Display for TemplateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateFamily {
    type Err = LlmError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "qa_feedback" | "qa" => Ok(TemplateFamily::QaFeedback),
            "ultra_feedback" | "ultra" => Ok(TemplateFamily::UltraFeedback),
            "tldr" => Ok(TemplateFamily::Tldr),
            _ => Err(LlmError::Template(format!("unknown template family: {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    RlaifJudge,
    RlcdPositive,
    RlcdNegative,
    RmboostFirst,
    RmboostConditional,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::RlaifJudge,
        TemplateKind::RlcdPositive,
        TemplateKind::RlcdNegative,
        TemplateKind::RmboostFirst,
        TemplateKind::RmboostConditional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::RlaifJudge => "rlaif_judge",
            TemplateKind::RlcdPositive => "rlcd_positive",
            TemplateKind::RlcdNegative => "rlcd_negative",
            TemplateKind::RmboostFirst => "rmboost_first",
            TemplateKind::RmboostConditional => "rmboost_conditional",
        }
    }

    pub fn output_tag(self) -> &'static str {
        match self {
            TemplateKind::RlaifJudge => "final_answer",
            _ => "response",
        }
    }
}

macro_rules! builtin_body {
    ($family:literal) => {
        [
            include_str!(concat!("../../assets/templates/", $family, "/rlaif_judge.txt")),
            include_str!(concat!("../../assets/templates/", $family, "/rlcd_positive.txt")),
            include_str!(concat!("../../assets/templates/", $family, "/rlcd_negative.txt")),
            include_str!(concat!("../../assets/templates/", $family, "/rmboost_first.txt")),
            include_str!(concat!("../../assets/templates/", $family, "/rmboost_conditional.txt")),
        ]
    };
}

const QA_BODIES: [&str; 5] = builtin_body!("qa_feedback");
const ULTRA_BODIES: [&str; 5] = builtin_body!("ultra_feedback");
const TLDR_BODIES: [&str; 5] = builtin_body!("tldr");

// Rewrites turning the "produce a worse response" conditional prompt into its
// "produce a better response" counterpart. Applied in order.
const MAKE_BETTER_REWRITES: [(&str, &str); 11] = [
    ("a good response, and aim to produce another response worse than the given good response",
     "a bad response, and aim to produce another response better than the given bad response"),
    ("a good response and aim to produce another response worse than the given good response",
     "a bad response and aim to produce another response better than the given bad response"),
    ("and a good response. After that", "and a bad response. After that"),
    ("worse than the good response", "better than the bad response"),
    ("worse than the first response", "better than the first response"),
    ("Below is the good response.", "Below is the bad response."),
    ("<good_response>", "<bad_response>"),
    ("</good_response>", "</bad_response>"),
    ("and the good response carefully", "and the bad response carefully"),
    ("Put your generated bad response", "Put your generated good response"),
    ("Put your generated bad summary", "Put your generated good summary"),
];

const ASPECT_HEADER: &str = "from the following aspects:";

fn parse_slots(body: &str) -> Result<BTreeSet<String>, LlmError> {
    let mut slots = BTreeSet::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| LlmError::Template("unterminated {{ placeholder".into()))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(LlmError::Template(format!("bad placeholder name: {name:?}")));
        }
        slots.insert(name.to_string());
        rest = &after[end + 2..];
    }
    Ok(slots)
}

fn aspect_bullet_name(line: &str) -> Option<&str> {
    let rest = line.trim_start().strip_prefix("- (")?;
    let end = rest.find("):")?;
    Some(&rest[..end])
}

/// A prompt body with `{{slot}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_slots: BTreeSet<String>,
    pub expected_output_tag: String,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        expected_output_tag: impl Into<String>,
    ) -> Result<Self, LlmError> {
        let body = body.into();
        let required_slots = parse_slots(&body)?;
        Ok(PromptTemplate {
            name: name.into(),
            body,
            required_slots,
            expected_output_tag: expected_output_tag.into(),
        })
    }

    pub fn builtin(family: TemplateFamily, kind: TemplateKind) -> PromptTemplate {
        let bodies = match family {
            TemplateFamily::QaFeedback => &QA_BODIES,
            TemplateFamily::UltraFeedback => &ULTRA_BODIES,
            TemplateFamily::Tldr => &TLDR_BODIES,
        };
        let idx = TemplateKind::ALL.iter().position(|k| *k == kind).unwrap();
        PromptTemplate::new(
            format!("{}/{}", family.as_str(), kind.as_str()),
            bodies[idx],
            kind.output_tag(),
        )
        .expect("builtin templates are well formed")
    }

    /// Substitutes every placeholder. Slot values are inserted verbatim and
    /// never re-scanned for placeholders.
    pub fn render<K, V>(&self, slots: &BTreeMap<K, V>) -> Result<String, LlmError>
    where
        K: AsRef<str> + Ord,
        V: AsRef<str>,
    {
        let given: BTreeMap<&str, &str> = slots.iter().map(|(k, v)| (k.as_ref(), v.as_ref())).collect();
        if let Some(missing) = self.required_slots.iter().find(|s| !given.contains_key(s.as_str())) {
            return Err(LlmError::MissingSlot(missing.clone()));
        }
        if let Some(extra) = given.keys().find(|k| !self.required_slots.contains(**k)) {
            return Err(LlmError::ExtraSlot(extra.to_string()));
        }
        let mut out = String::with_capacity(self.body.len() + given.values().map(|v| v.len()).sum::<usize>());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").expect("validated at construction");
            out.push_str(given[&after[..end]]);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Names of the `- (Name): ...` aspect bullets in the body.
    pub fn aspect_names(&self) -> Vec<&str> {
        self.body.lines().filter_map(aspect_bullet_name).collect()
    }

    /// Keeps only the aspect bullets named in `keep`.
    pub fn with_aspects<S: AsRef<str>>(&self, keep: &[S]) -> Result<PromptTemplate, LlmError> {
        let present = self.aspect_names();
        if keep.is_empty() {
            return Err(LlmError::Template("aspect subset must be nonempty".into()));
        }
        for k in keep {
            if !present.contains(&k.as_ref()) {
                return Err(LlmError::Template(format!(
                    "{} has no aspect named {:?}",
                    self.name,
                    k.as_ref()
                )));
            }
        }
        let body = self.rewrite_lines(|line| match aspect_bullet_name(line) {
            Some(name) => keep.iter().any(|k| k.as_ref() == name),
            None => true,
        });
        Ok(PromptTemplate {
            name: format!("{}[aspects]", self.name),
            body,
            ..self.clone()
        })
    }

    /// Drops the aspect list and the aspect selection step, leaving a plain
    /// good/bad response instruction.
    pub fn without_aspects(&self) -> PromptTemplate {
        let mut body = self.rewrite_lines(|line| {
            aspect_bullet_name(line).is_none()
                && !line.trim_end().ends_with(ASPECT_HEADER)
                && !line.starts_with("Step 1: Select a few aspects")
        });
        body = body
            .replace("Step 2: Generate", "Step 1: Generate")
            .replace(" in terms of above selected aspects", "")
            .replace(" for some aspects", "");
        PromptTemplate {
            name: format!("{}[no_aspects]", self.name),
            body,
            ..self.clone()
        }
    }

    /// Turns a make-worse conditional template into its make-better form.
    pub fn make_better(&self) -> Result<PromptTemplate, LlmError> {
        let mut body = self.body.clone();
        let mut hits = 0;
        for (from, to) in MAKE_BETTER_REWRITES {
            if body.contains(from) {
                hits += 1;
                body = body.replace(from, to);
            }
        }
        if hits == 0 {
            return Err(LlmError::Template(format!("{} is not a conditional template", self.name)));
        }
        Ok(PromptTemplate {
            name: format!("{}[better]", self.name),
            body,
            ..self.clone()
        })
    }

    fn rewrite_lines(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut out = String::with_capacity(self.body.len());
        for line in self.body.split_inclusive('\n') {
            if keep(line.trim_end_matches('\n')) {
                out.push_str(line);
            }
        }
        out
    }
}
