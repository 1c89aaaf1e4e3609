//! A small, fully enumerable generation world.
//!
//! Responses cover a handful of facts (each rendered correctly or not) and may
//! include distractors. Every generator here (base, contrastive, conditional
//! edit) and the judge are product-Bernoulli or Bradley-Terry objects, so the
//! exact probability of any response or label is computable and the
//! re-weighting factors of each synthetic-data strategy can be evaluated in
//! closed form.

mod beta;
mod response;
mod world;

pub use beta::{compute_beta, rlaif_beta, BetaOptions, BetaRecord, BetaStrategy};
pub use response::{
    enumerate_responses, Aspect, AspectSet, AspectVector, FactState, SimResponse, MAX_SLOTS,
};
pub use world::{
    aspect_scores, base_sample, conditional_sample, contrast_sample, exact_base_prob,
    exact_cond_prob, exact_contrast_prob, judge_flip_prob, judge_label, true_label,
    true_pref_prob, utility, ContrastSign, EditDirection, EditSpec, ResponseDist,
};

use serde::{Deserialize, Serialize};

pub const PROB_FLOOR: f64 = 0.02;
pub const PROB_CEIL: f64 = 0.98;
/// Utility gaps at or below this are ties; utilities are sums of ratios, so
/// equal values can differ in the last bits.
pub const UTILITY_TIE_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown aspect name: {0}")]
    UnknownAspect(String),
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse sim response: {0}")]
    ParseResponse(String),
    #[error("support mismatch for {id}: {what} has zero probability")]
    SupportMismatch { id: String, what: String },
    #[error("conditional edit needs at least one aspect")]
    NoAspects,
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimWorldConfig {
    /// K: relevant facts per prompt.
    pub n_facts: usize,
    /// D: distractor slots.
    pub n_distractors: usize,
    pub p_cov: f64,
    pub p_acc: f64,
    pub p_dis: f64,
    pub utility_weights: AspectVector,
    /// γ of the Bradley-Terry comparator.
    pub pref_sharpness: f64,
    /// ε_max: judge flip probability at zero utility gap.
    pub judge_eps_max: f64,
    /// τ: utility-gap scale over which judge errors decay.
    pub judge_tau: f64,
    /// δ: per-element edit rate of conditional generation.
    pub edit_strength: f64,
    /// η: probability that a conditional edit leaves the response unchanged.
    pub edit_failure: f64,
    /// c: contrastive prompt shift.
    pub contrast_shift: f64,
    pub seed: u64,
}

impl Default for SimWorldConfig {
    fn default() -> Self {
        SimWorldConfig::reference()
    }
}

impl SimWorldConfig {
    /// The reference noise configuration used by the reproduction runs.
    pub fn reference() -> Self {
        SimWorldConfig {
            n_facts: 3,
            n_distractors: 3,
            p_cov: 0.6,
            p_acc: 0.75,
            p_dis: 0.3,
            utility_weights: AspectVector::new(0.4, 0.2, 0.4),
            pref_sharpness: 6.0,
            judge_eps_max: 0.3,
            judge_tau: 0.25,
            edit_strength: 0.25,
            edit_failure: 0.1,
            contrast_shift: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(1..=4).contains(&self.n_facts) {
            return bad(format!("n_facts must be in 1..=4, got {}", self.n_facts));
        }
        if !(1..=4).contains(&self.n_distractors) {
            return bad(format!(
                "n_distractors must be in 1..=4, got {}",
                self.n_distractors
            ));
        }
        for (name, p) in [("p_cov", self.p_cov), ("p_acc", self.p_acc), ("p_dis", self.p_dis)] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} must be in (0,1), got {p}"));
            }
        }
        let w = self.utility_weights.to_array();
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return bad("utility_weights must be finite and >= 0".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("utility_weights must sum to 1, got {:?}", w));
        }
        if !(self.pref_sharpness > 0.0 && self.pref_sharpness.is_finite()) {
            return bad("pref_sharpness must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.judge_eps_max) {
            return bad("judge_eps_max must be in [0,1]".into());
        }
        if !(self.judge_tau > 0.0) {
            return bad("judge_tau must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.edit_strength) {
            return bad("edit_strength must be in [0,1)".into());
        }
        if !(0.0..=1.0).contains(&self.edit_failure) {
            return bad("edit_failure must be in [0,1]".into());
        }
        if !(0.0..0.5).contains(&self.contrast_shift) {
            return bad("contrast_shift must be in [0,0.5)".into());
        }
        Ok(())
    }

    pub fn base_dist(&self) -> ResponseDist {
        ResponseDist {
            p_cov: clamp_prob(self.p_cov),
            p_acc: clamp_prob(self.p_acc),
            p_dis: clamp_prob(self.p_dis),
        }
    }

    /// Maximum possible item count, used to normalise length features.
    pub fn max_len(&self) -> usize {
        self.n_facts + self.n_distractors
    }

    pub fn responses(&self) -> Vec<SimResponse> {
        enumerate_responses(self.n_facts, self.n_distractors)
    }

    /// Parses a response text and checks it fits this world.
    pub fn parse_response(&self, text: &str) -> Result<SimResponse, SimError> {
        let r: SimResponse = text.parse()?;
        if !r.fits(self.n_facts, self.n_distractors) {
            return Err(SimError::ParseResponse(format!(
                "{text:?} uses slots outside K={}, D={}",
                self.n_facts, self.n_distractors
            )));
        }
        Ok(r)
    }
}
