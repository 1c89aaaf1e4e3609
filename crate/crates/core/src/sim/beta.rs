//! Exact re-weighting factors of synthetic preference data.
//!
//! β compares the density of a synthetic example with its density under the
//! clean, human-labelled process. Training on synthetic data minimises the
//! clean risk re-weighted by β, so β ≡ 1 means no bias.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::world::{
    exact_base_prob, exact_cond_prob, exact_contrast_prob, judge_flip_prob, true_pref_prob,
    ContrastSign, EditDirection, EditSpec,
};
use super::{AspectSet, SimError, SimResponse, SimWorldConfig};
use crate::data::{Label, PreferenceExample, FLIP_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BetaStrategy {
    Rlaif,
    Rlcd,
    Rmboost,
}

impl BetaStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            BetaStrategy::Rlaif => "RLAIF",
            BetaStrategy::Rlcd => "RLCD",
            BetaStrategy::Rmboost => "RMBOOST",
        }
    }
}

impl fmt::Display for BetaStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// CSV row `example_id,strategy,beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub example_id: String,
    pub strategy: BetaStrategy,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BetaOptions {
    /// The RMBoost example was generated under the No-Aspect ablation.
    pub no_aspect: bool,
    /// Synthetic label prior Pr(l) of the observed label. `None` means the
    /// data is flip-augmented, so Pr(l) and Pr*(l|x,y₁,y₂) cancel.
    pub label_prior: Option<f64>,
}

/// β for an observed judge label: Σ_l Pr*(l)·Q(l̃|l) / Pr*(l̃) under a
/// symmetric flip channel with flip probability `flip`.
pub fn rlaif_beta(p_observed: f64, flip: f64) -> f64 {
    let numerator = p_observed * (1.0 - flip) + (1.0 - p_observed) * flip;
    numerator / p_observed
}

fn support_err(id: &str, what: &str) -> SimError {
    SimError::SupportMismatch {
        id: id.to_string(),
        what: what.to_string(),
    }
}

fn checked_ratio(num: f64, den: f64, id: &str, what: &str) -> Result<f64, SimError> {
    if !(den > 0.0) {
        return Err(support_err(id, what));
    }
    Ok(num / den)
}

/// Undoes flip augmentation so that slot A again holds the first response.
fn canonical(example: &PreferenceExample) -> (String, &str, &str, Label) {
    match example.id.strip_suffix(FLIP_SUFFIX) {
        Some(orig) => (
            orig.to_string(),
            example.response_b.as_str(),
            example.response_a.as_str(),
            example.label.flipped(),
        ),
        None => (
            example.id.clone(),
            example.response_a.as_str(),
            example.response_b.as_str(),
            example.label,
        ),
    }
}

/// Exact β of one generated example.
///
/// Slot conventions follow the generators: RLAIF keeps the sampled order,
/// RLCD's preferred response is the positive-prompt one, and RMBoost holds the
/// first response in slot A with the edited one in slot B.
pub fn compute_beta(
    example: &PreferenceExample,
    strategy: BetaStrategy,
    config: &SimWorldConfig,
    opts: &BetaOptions,
) -> Result<BetaRecord, SimError> {
    let (id, a_text, b_text, label) = canonical(example);
    let y_a = config.parse_response(a_text)?;
    let y_b = config.parse_response(b_text)?;
    let true_prob_of_label = |y1: &SimResponse, y2: &SimResponse, l: Label| {
        let p = true_pref_prob(y1, y2, config);
        match l {
            Label::APreferred => p,
            Label::BPreferred => 1.0 - p,
        }
    };
    let prior_term = |id: &str| -> Result<f64, SimError> {
        match opts.label_prior {
            None => Ok(1.0),
            Some(prior) => checked_ratio(
                prior,
                true_prob_of_label(&y_a, &y_b, label),
                id,
                "Pr*(l|x,y1,y2)",
            ),
        }
    };

    let beta = match strategy {
        BetaStrategy::Rlaif => {
            let p_obs = true_prob_of_label(&y_a, &y_b, label);
            if !(p_obs > 0.0) {
                return Err(support_err(&id, "Pr*(observed label)"));
            }
            rlaif_beta(p_obs, judge_flip_prob(&y_a, &y_b, config))
        }
        BetaStrategy::Rlcd => {
            let (pos, neg) = match label {
                Label::APreferred => (&y_a, &y_b),
                Label::BPreferred => (&y_b, &y_a),
            };
            let num = exact_contrast_prob(pos, ContrastSign::Positive, config)
                * exact_contrast_prob(neg, ContrastSign::Negative, config);
            let den = exact_base_prob(pos, config) * exact_base_prob(neg, config);
            checked_ratio(num, den, &id, "Pr(y|x)")? * prior_term(&id)?
        }
        BetaStrategy::Rmboost => {
            let direction = EditDirection::from_label(label);
            let spec = if opts.no_aspect {
                EditSpec::no_aspect(direction)
            } else {
                EditSpec::new(direction, AspectSet::parse(&example.meta.corrupted_aspects)?)
            };
            let num = exact_cond_prob(&y_a, &spec, &y_b, config)?;
            checked_ratio(num, exact_base_prob(&y_b, config), &id, "Pr(y2|x)")? * prior_term(&id)?
        }
    };
    Ok(BetaRecord {
        example_id: id,
        strategy,
        beta,
    })
}
