use rand::Rng;

use super::response::{AspectSet, AspectVector, FactState, SimResponse};
use super::{clamp_prob, SimError, SimWorldConfig};
use crate::data::Label;

pub fn aspect_scores(r: &SimResponse, config: &SimWorldConfig) -> AspectVector {
    let covered = r.n_covered() as f64;
    let distractors = r.n_distractors() as f64;
    let completeness = covered / config.n_facts as f64;
    let factuality = if r.n_covered() == 0 {
        1.0
    } else {
        r.n_correct() as f64 / covered
    };
    let relevance = if covered + distractors == 0.0 {
        0.0
    } else {
        covered / (covered + distractors)
    };
    AspectVector::new(completeness, factuality, relevance)
}

pub fn utility(r: &SimResponse, config: &SimWorldConfig) -> f64 {
    config.utility_weights.dot(aspect_scores(r, config))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that `y1` is truly preferred over `y2`.
pub fn true_pref_prob(y1: &SimResponse, y2: &SimResponse, config: &SimWorldConfig) -> f64 {
    sigmoid(config.pref_sharpness * (utility(y1, config) - utility(y2, config)))
}

/// ε(Δu) = ε_max · exp(−|Δu| / τ).
pub fn judge_flip_prob(y1: &SimResponse, y2: &SimResponse, config: &SimWorldConfig) -> f64 {
    let gap = (utility(y1, config) - utility(y2, config)).abs();
    config.judge_eps_max * (-gap / config.judge_tau).exp()
}

/// Draws the ground-truth label for the pair (`y1` in slot A).
pub fn true_label<R: Rng + ?Sized>(
    y1: &SimResponse,
    y2: &SimResponse,
    config: &SimWorldConfig,
    rng: &mut R,
) -> Label {
    if rng.gen::<f64>() < true_pref_prob(y1, y2, config) {
        Label::APreferred
    } else {
        Label::BPreferred
    }
}

/// Draws a true label, then flips it with probability ε(Δu).
pub fn judge_label<R: Rng + ?Sized>(
    y1: &SimResponse,
    y2: &SimResponse,
    config: &SimWorldConfig,
    rng: &mut R,
) -> Label {
    let label = true_label(y1, y2, config, rng);
    if rng.gen::<f64>() < judge_flip_prob(y1, y2, config) {
        label.flipped()
    } else {
        label
    }
}

/// Product-Bernoulli response distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseDist {
    pub p_cov: f64,
    pub p_acc: f64,
    pub p_dis: f64,
}

impl ResponseDist {
    pub fn sample<R: Rng + ?Sized>(&self, config: &SimWorldConfig, rng: &mut R) -> SimResponse {
        let mut r = SimResponse::default();
        for i in 0..config.n_facts {
            if rng.gen::<f64>() < self.p_cov {
                let state = if rng.gen::<f64>() < self.p_acc {
                    FactState::Correct
                } else {
                    FactState::Wrong
                };
                r.set_fact(i, state);
            }
        }
        for j in 0..config.n_distractors {
            if rng.gen::<f64>() < self.p_dis {
                r.set_distractor(j, true);
            }
        }
        r
    }

    pub fn prob(&self, r: &SimResponse, config: &SimWorldConfig) -> f64 {
        if !r.fits(config.n_facts, config.n_distractors) {
            return 0.0;
        }
        let mut p = 1.0;
        for i in 0..config.n_facts {
            p *= match r.fact(i) {
                FactState::Absent => 1.0 - self.p_cov,
                FactState::Correct => self.p_cov * self.p_acc,
                FactState::Wrong => self.p_cov * (1.0 - self.p_acc),
            };
        }
        for j in 0..config.n_distractors {
            p *= if r.has_distractor(j) {
                self.p_dis
            } else {
                1.0 - self.p_dis
            };
        }
        p
    }
}

pub fn base_sample<R: Rng + ?Sized>(config: &SimWorldConfig, rng: &mut R) -> SimResponse {
    config.base_dist().sample(config, rng)
}

pub fn exact_base_prob(r: &SimResponse, config: &SimWorldConfig) -> f64 {
    config.base_dist().prob(r, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContrastSign {
    Positive,
    Negative,
}

impl ContrastSign {
    /// Shifted distribution: `+c` on coverage and accuracy and `−c` on
    /// distractors for the positive prompt, mirrored for the negative one.
    pub fn dist(self, config: &SimWorldConfig) -> ResponseDist {
        let c = match self {
            ContrastSign::Positive => config.contrast_shift,
            ContrastSign::Negative => -config.contrast_shift,
        };
        ResponseDist {
            p_cov: clamp_prob(clamp_prob(config.p_cov) + c),
            p_acc: clamp_prob(clamp_prob(config.p_acc) + c),
            p_dis: clamp_prob(clamp_prob(config.p_dis) - c),
        }
    }
}

pub fn contrast_sample<R: Rng + ?Sized>(
    sign: ContrastSign,
    config: &SimWorldConfig,
    rng: &mut R,
) -> SimResponse {
    sign.dist(config).sample(config, rng)
}

pub fn exact_contrast_prob(r: &SimResponse, sign: ContrastSign, config: &SimWorldConfig) -> f64 {
    sign.dist(config).prob(r, config)
}

/// Direction of a preference-conditioned edit of the first response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditDirection {
    MakeWorse,
    MakeBetter,
}

impl EditDirection {
    /// Label of the resulting pair with the original in slot A.
    pub fn label(self) -> Label {
        match self {
            EditDirection::MakeWorse => Label::APreferred,
            EditDirection::MakeBetter => Label::BPreferred,
        }
    }

    pub fn from_label(label: Label) -> Self {
        match label {
            Label::APreferred => EditDirection::MakeWorse,
            Label::BPreferred => EditDirection::MakeBetter,
        }
    }
}

/// What a conditional generation call is asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EditSpec {
    pub direction: EditDirection,
    pub aspects: AspectSet,
    /// No-Aspect ablation: the instruction names no aspects, so every aspect
    /// is edited at half strength.
    pub no_aspect: bool,
}

impl EditSpec {
    pub fn new(direction: EditDirection, aspects: AspectSet) -> Self {
        EditSpec {
            direction,
            aspects,
            no_aspect: false,
        }
    }

    pub fn no_aspect(direction: EditDirection) -> Self {
        EditSpec {
            direction,
            aspects: AspectSet::ALL,
            no_aspect: true,
        }
    }

    fn resolve(&self, config: &SimWorldConfig) -> Result<(AspectSet, f64), SimError> {
        if self.no_aspect {
            Ok((AspectSet::ALL, config.edit_strength / 2.0))
        } else if self.aspects.is_empty() {
            Err(SimError::NoAspects)
        } else {
            Ok((self.aspects, config.edit_strength))
        }
    }
}

/// Per-element edit rates for one resolved edit.
struct EditRates {
    direction: EditDirection,
    completeness: f64,
    factuality: f64,
    relevance: f64,
}

impl EditRates {
    fn new(spec: &EditSpec, config: &SimWorldConfig) -> Result<Self, SimError> {
        let (aspects, delta) = spec.resolve(config)?;
        let rate = |a| if aspects.contains(a) { delta } else { 0.0 };
        Ok(EditRates {
            direction: spec.direction,
            completeness: rate(super::Aspect::Completeness),
            factuality: rate(super::Aspect::Factuality),
            relevance: rate(super::Aspect::Relevance),
        })
    }

    /// Transition probability of one fact from `from` to `to`.
    fn fact_transition(&self, from: FactState, to: FactState) -> f64 {
        use FactState::*;
        let (dc, df) = (self.completeness, self.factuality);
        match self.direction {
            // covered facts are dropped; surviving correct renderings corrupted
            EditDirection::MakeWorse => match (from, to) {
                (Absent, Absent) => 1.0,
                (Absent, _) => 0.0,
                (Correct, Absent) => dc,
                (Correct, Wrong) => (1.0 - dc) * df,
                (Correct, Correct) => (1.0 - dc) * (1.0 - df),
                (Wrong, Absent) => dc,
                (Wrong, Wrong) => 1.0 - dc,
                (Wrong, Correct) => 0.0,
            },
            // absent facts are added (rendered correctly); wrong ones fixed
            EditDirection::MakeBetter => match (from, to) {
                (Absent, Correct) => dc,
                (Absent, Absent) => 1.0 - dc,
                (Absent, Wrong) => 0.0,
                (Wrong, Correct) => df,
                (Wrong, Wrong) => 1.0 - df,
                (Wrong, Absent) => 0.0,
                (Correct, Correct) => 1.0,
                (Correct, _) => 0.0,
            },
        }
    }

    fn distractor_transition(&self, from: bool, to: bool) -> f64 {
        let dr = self.relevance;
        match (self.direction, from, to) {
            (EditDirection::MakeWorse, false, true) => dr,
            (EditDirection::MakeWorse, false, false) => 1.0 - dr,
            (EditDirection::MakeWorse, true, to) => f64::from(u8::from(to)),
            (EditDirection::MakeBetter, true, false) => dr,
            (EditDirection::MakeBetter, true, true) => 1.0 - dr,
            (EditDirection::MakeBetter, false, to) => f64::from(u8::from(!to)),
        }
    }
}

/// Samples the second response given the first: with probability η the edit
/// fails and `y1` is returned unchanged; otherwise each element is edited
/// independently.
pub fn conditional_sample<R: Rng + ?Sized>(
    y1: &SimResponse,
    spec: &EditSpec,
    config: &SimWorldConfig,
    rng: &mut R,
) -> Result<SimResponse, SimError> {
    let rates = EditRates::new(spec, config)?;
    if rng.gen::<f64>() < config.edit_failure {
        return Ok(*y1);
    }
    let mut y2 = *y1;
    for i in 0..config.n_facts {
        match (spec.direction, y1.fact(i)) {
            (EditDirection::MakeWorse, FactState::Absent) => {}
            (EditDirection::MakeWorse, state) => {
                if rng.gen::<f64>() < rates.completeness {
                    y2.set_fact(i, FactState::Absent);
                } else if state == FactState::Correct && rng.gen::<f64>() < rates.factuality {
                    y2.set_fact(i, FactState::Wrong);
                }
            }
            (EditDirection::MakeBetter, FactState::Absent) => {
                if rng.gen::<f64>() < rates.completeness {
                    y2.set_fact(i, FactState::Correct);
                }
            }
            (EditDirection::MakeBetter, FactState::Wrong) => {
                if rng.gen::<f64>() < rates.factuality {
                    y2.set_fact(i, FactState::Correct);
                }
            }
            (EditDirection::MakeBetter, FactState::Correct) => {}
        }
    }
    for j in 0..config.n_distractors {
        let present = y1.has_distractor(j);
        let flip = match spec.direction {
            EditDirection::MakeWorse => !present,
            EditDirection::MakeBetter => present,
        };
        if flip && rng.gen::<f64>() < rates.relevance {
            y2.set_distractor(j, !present);
        }
    }
    Ok(y2)
}

/// Exact probability of `y2` under [`conditional_sample`] given `y1`.
pub fn exact_cond_prob(
    y1: &SimResponse,
    spec: &EditSpec,
    y2: &SimResponse,
    config: &SimWorldConfig,
) -> Result<f64, SimError> {
    let rates = EditRates::new(spec, config)?;
    if !y2.fits(config.n_facts, config.n_distractors) {
        return Ok(0.0);
    }
    let mut edited = 1.0;
    for i in 0..config.n_facts {
        edited *= rates.fact_transition(y1.fact(i), y2.fact(i));
    }
    for j in 0..config.n_distractors {
        edited *= rates.distractor_transition(y1.has_distractor(j), y2.has_distractor(j));
    }
    let unchanged = if y1 == y2 { 1.0 } else { 0.0 };
    Ok(config.edit_failure * unchanged + (1.0 - config.edit_failure) * edited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Aspect, AspectVector};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(k: usize, d: usize) -> SimWorldConfig {
        SimWorldConfig {
            n_facts: k,
            n_distractors: d,
            ..SimWorldConfig::reference()
        }
    }

    #[test]
    fn perfect_and_empty_aspects() {
        let c = cfg(3, 3);
        let perfect = SimResponse::perfect(3);
        assert_eq!(aspect_scores(&perfect, &c), AspectVector::new(1.0, 1.0, 1.0));
        assert_abs_diff_eq!(utility(&perfect, &c), 1.0, epsilon = 1e-12);
        assert_eq!(
            aspect_scores(&SimResponse::default(), &c),
            AspectVector::new(0.0, 1.0, 0.0)
        );
    }

    #[test]
    fn hand_evaluated_aspects() {
        // K=2, covered={f1} wrong, distractors={d1}
        let mut c = cfg(2, 2);
        c.utility_weights = AspectVector::new(0.5, 0.3, 0.2);
        let r = "fact0:wrong noise0".parse::<SimResponse>().unwrap();
        assert_eq!(aspect_scores(&r, &c), AspectVector::new(0.5, 0.0, 0.5));
        assert_abs_diff_eq!(utility(&r, &c), 0.5 * 0.5 + 0.5 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn pref_prob_anchors() {
        let c = cfg(3, 3);
        let a = SimResponse::perfect(3);
        assert_eq!(true_pref_prob(&a, &a, &c), 0.5);

        // γ=4, Δu=0.25 → σ(1)
        let mut c4 = cfg(2, 2);
        c4.pref_sharpness = 4.0;
        c4.utility_weights = AspectVector::new(1.0, 0.0, 0.0);
        let y1 = "fact0 fact1".parse::<SimResponse>().unwrap(); // completeness 1
        let mut c4k4 = c4.clone();
        c4k4.n_facts = 4;
        let y1b = "fact0 fact1 fact2".parse::<SimResponse>().unwrap(); // 0.75
        let y2b = "fact0 fact1".parse::<SimResponse>().unwrap(); // 0.5
        assert_abs_diff_eq!(true_pref_prob(&y1b, &y2b, &c4k4), 0.731_058_578_630_004_9, epsilon = 1e-12);

        let mut sharp = c4.clone();
        sharp.pref_sharpness = 1e4;
        let y2 = "fact0".parse::<SimResponse>().unwrap();
        assert!(true_pref_prob(&y1, &y2, &sharp) > 1.0 - 1e-12);
    }

    #[test]
    fn flip_prob_anchors() {
        let mut c = cfg(2, 2);
        c.utility_weights = AspectVector::new(1.0, 0.0, 0.0);
        c.judge_eps_max = 0.3;
        c.judge_tau = 0.25;
        let y = "fact0".parse::<SimResponse>().unwrap();
        assert_eq!(judge_flip_prob(&y, &y, &c), 0.3);
        let mut k4 = c.clone();
        k4.n_facts = 4;
        let y1 = "fact0 fact1".parse::<SimResponse>().unwrap();
        assert_abs_diff_eq!(judge_flip_prob(&y1, &y, &k4), 0.110_363_832_351_432_7, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_judge_matches_true_draws() {
        let mut c = cfg(3, 3);
        c.judge_eps_max = 0.0;
        let y1 = SimResponse::perfect(3);
        let y2 = "fact0:wrong noise1".parse::<SimResponse>().unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            // judge consumes one extra uniform for the flip decision
            let t = true_label(&y1, &y2, &c, &mut r1);
            let _: f64 = r1.gen();
            assert_eq!(judge_label(&y1, &y2, &c, &mut r2), t);
        }
    }

    #[test]
    fn base_prob_hand_values() {
        let mut c = cfg(1, 1);
        c.p_cov = 0.8;
        c.p_acc = 0.9;
        c.p_dis = 0.3;
        let r = "fact0".parse::<SimResponse>().unwrap();
        assert_abs_diff_eq!(exact_base_prob(&r, &c), 0.504, epsilon = 1e-15);

        c.p_cov = 0.5;
        c.p_acc = 0.5;
        c.p_dis = 0.5;
        for r in c.responses() {
            let expect = if r.n_covered() == 0 { 0.25 } else { 0.125 };
            assert_abs_diff_eq!(exact_base_prob(&r, &c), expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn contrast_shift() {
        let mut c = cfg(3, 3);
        c.p_cov = 0.5;
        c.contrast_shift = 0.2;
        let pos = ContrastSign::Positive.dist(&c);
        assert_abs_diff_eq!(pos.p_cov, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(ContrastSign::Negative.dist(&c).p_cov, 0.3, epsilon = 1e-15);

        c.contrast_shift = 0.0;
        for r in c.responses() {
            assert_eq!(exact_contrast_prob(&r, ContrastSign::Positive, &c), exact_base_prob(&r, &c));
        }
    }

    #[test]
    fn contrast_clamped() {
        let mut c = cfg(2, 2);
        c.p_acc = 0.9;
        c.p_dis = 0.05;
        c.contrast_shift = 0.3;
        let pos = ContrastSign::Positive.dist(&c);
        assert_eq!(pos.p_acc, 0.98);
        assert_eq!(pos.p_dis, 0.02);
    }

    #[test]
    fn positive_contrast_has_higher_mean_utility() {
        for shift in [0.05, 0.2, 0.45] {
            let mut c = cfg(3, 3);
            c.contrast_shift = shift;
            let mean = |s| -> f64 {
                c.responses()
                    .iter()
                    .map(|r| exact_contrast_prob(r, s, &c) * utility(r, &c))
                    .sum()
            };
            assert!(mean(ContrastSign::Positive) > mean(ContrastSign::Negative));
        }
    }

    #[test]
    fn no_edit_limits() {
        let mut c = cfg(3, 3);
        c.edit_strength = 0.0;
        let y1 = "fact0 fact1:wrong noise2".parse::<SimResponse>().unwrap();
        let spec = EditSpec::new(EditDirection::MakeWorse, AspectSet::ALL);
        assert_eq!(exact_cond_prob(&y1, &spec, &y1, &c).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(conditional_sample(&y1, &spec, &c, &mut rng).unwrap(), y1);
        }

        let mut c = cfg(3, 3);
        c.edit_failure = 1.0;
        assert_eq!(exact_cond_prob(&y1, &spec, &y1, &c).unwrap(), 1.0);
        for _ in 0..100 {
            assert_eq!(conditional_sample(&y1, &spec, &c, &mut rng).unwrap(), y1);
        }
    }

    #[test]
    fn binomial_corruption_count() {
        // two correct renderings, δ=0.5, η=0, factuality only
        let mut c = cfg(2, 2);
        c.edit_strength = 0.5;
        c.edit_failure = 0.0;
        let y1 = "fact0 fact1".parse::<SimResponse>().unwrap();
        let spec = EditSpec::new(EditDirection::MakeWorse, AspectSet::EMPTY.with(Aspect::Factuality));
        let one_corrupted: f64 = c
            .responses()
            .iter()
            .filter(|y2| y2.covered == y1.covered && y2.n_correct() == 1)
            .map(|y2| exact_cond_prob(&y1, &spec, y2, &c).unwrap())
            .sum();
        assert_abs_diff_eq!(one_corrupted, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_aspect_set_is_an_error() {
        let c = cfg(2, 2);
        let spec = EditSpec::new(EditDirection::MakeWorse, AspectSet::EMPTY);
        let y = SimResponse::default();
        assert!(matches!(exact_cond_prob(&y, &spec, &y, &c), Err(SimError::NoAspects)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(conditional_sample(&y, &spec, &c, &mut rng).is_err());
    }
}
