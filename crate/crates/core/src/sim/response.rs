use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::SimError;

pub const MAX_SLOTS: usize = 8;

/// One enumerable response: which facts it covers, which of those are
/// rendered correctly, and which distractor slots it includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SimResponse {
    pub covered: u8,
    pub correct: u8,
    pub distractors: u8,
}

/// Per-fact state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactState {
    Absent,
    Correct,
    Wrong,
}

impl FactState {
    pub const ALL: [FactState; 3] = [FactState::Absent, FactState::Correct, FactState::Wrong];
}

impl SimResponse {
    pub fn new(covered: u8, correct: u8, distractors: u8) -> Result<Self, SimError> {
        if correct & !covered != 0 {
            return Err(SimError::ParseResponse(format!(
                "correct mask {correct:#b} not a subset of covered {covered:#b}"
            )));
        }
        Ok(SimResponse {
            covered,
            correct,
            distractors,
        })
    }

    pub fn perfect(n_facts: usize) -> Self {
        let all = low_mask(n_facts);
        SimResponse {
            covered: all,
            correct: all,
            distractors: 0,
        }
    }

    pub fn fact(&self, i: usize) -> FactState {
        let bit = 1u8 << i;
        if self.covered & bit == 0 {
            FactState::Absent
        } else if self.correct & bit != 0 {
            FactState::Correct
        } else {
            FactState::Wrong
        }
    }

    pub fn set_fact(&mut self, i: usize, state: FactState) {
        let bit = 1u8 << i;
        match state {
            FactState::Absent => {
                self.covered &= !bit;
                self.correct &= !bit;
            }
            FactState::Correct => {
                self.covered |= bit;
                self.correct |= bit;
            }
            FactState::Wrong => {
                self.covered |= bit;
                self.correct &= !bit;
            }
        }
    }

    pub fn has_distractor(&self, j: usize) -> bool {
        self.distractors & (1u8 << j) != 0
    }

    pub fn set_distractor(&mut self, j: usize, on: bool) {
        if on {
            self.distractors |= 1u8 << j;
        } else {
            self.distractors &= !(1u8 << j);
        }
    }

    pub fn n_covered(&self) -> u32 {
        self.covered.count_ones()
    }

    pub fn n_correct(&self) -> u32 {
        self.correct.count_ones()
    }

    pub fn n_distractors(&self) -> u32 {
        self.distractors.count_ones()
    }

    /// Number of rendered items, equal to the whitespace token count of the
    /// text form.
    pub fn len_items(&self) -> u32 {
        self.n_covered() + self.n_distractors()
    }

    pub fn fits(&self, n_facts: usize, n_distractors: usize) -> bool {
        self.covered & !low_mask(n_facts) == 0 && self.distractors & !low_mask(n_distractors) == 0
    }
}

pub(crate) fn low_mask(n: usize) -> u8 {
    if n >= 8 {
        u8::MAX
    } else {
        (1u8 << n) - 1
    }
}

/// Text form: `fact<i>` for a correct rendering, `fact<i>:wrong` for an
/// incorrect one, `noise<j>` for a distractor; items separated by one space.
impl fmt::Display for SimResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            Ok(())
        };
        for i in 0..MAX_SLOTS {
            match self.fact(i) {
                FactState::Absent => {}
                FactState::Correct => {
                    sep(f)?;
                    write!(f, "fact{i}")?;
                }
                FactState::Wrong => {
                    sep(f)?;
                    write!(f, "fact{i}:wrong")?;
                }
            }
        }
        for j in 0..MAX_SLOTS {
            if self.has_distractor(j) {
                sep(f)?;
                write!(f, "noise{j}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for SimResponse {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut r = SimResponse::default();
        let bad = |tok: &str| SimError::ParseResponse(format!("unrecognized item {tok:?}"));
        for tok in s.split_whitespace() {
            let index = |digits: &str| -> Result<usize, SimError> {
                let i: usize = digits.parse().map_err(|_| bad(tok))?;
                if i >= MAX_SLOTS {
                    return Err(bad(tok));
                }
                Ok(i)
            };
            if let Some(rest) = tok.strip_prefix("fact") {
                let (digits, wrong) = match rest.strip_suffix(":wrong") {
                    Some(d) => (d, true),
                    None => (rest, false),
                };
                let i = index(digits)?;
                if r.fact(i) != FactState::Absent {
                    return Err(bad(tok));
                }
                r.set_fact(i, if wrong { FactState::Wrong } else { FactState::Correct });
            } else if let Some(digits) = tok.strip_prefix("noise") {
                let j = index(digits)?;
                if r.has_distractor(j) {
                    return Err(bad(tok));
                }
                r.set_distractor(j, true);
            } else {
                return Err(bad(tok));
            }
        }
        Ok(r)
    }
}

/// Every valid response for `n_facts` facts and `n_distractors` slots, in a
/// fixed order (3^K · 2^D responses).
pub fn enumerate_responses(n_facts: usize, n_distractors: usize) -> Vec<SimResponse> {
    let n_fact_states = 3usize.pow(n_facts as u32);
    let mut out = Vec::with_capacity(n_fact_states << n_distractors);
    for code in 0..n_fact_states {
        let mut base = SimResponse::default();
        let mut c = code;
        for i in 0..n_facts {
            base.set_fact(i, FactState::ALL[c % 3]);
            c /= 3;
        }
        for d in 0..(1u16 << n_distractors) {
            out.push(SimResponse {
                distractors: d as u8,
                ..base
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Completeness,
    Factuality,
    Relevance,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Completeness, Aspect::Factuality, Aspect::Relevance];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Completeness => "completeness",
            Aspect::Factuality => "factuality",
            Aspect::Relevance => "relevance",
        }
    }

    fn bit(self) -> u8 {
        match self {
            Aspect::Completeness => 1,
            Aspect::Factuality => 2,
            Aspect::Relevance => 4,
        }
    }
}

impl FromStr for Aspect {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "completeness" => Ok(Aspect::Completeness),
            "factuality" => Ok(Aspect::Factuality),
            "relevance" => Ok(Aspect::Relevance),
            _ => Err(SimError::UnknownAspect(s.to_string())),
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of [`Aspect::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AspectSet(u8);

impl AspectSet {
    pub const EMPTY: AspectSet = AspectSet(0);
    pub const ALL: AspectSet = AspectSet(7);

    pub fn from_bits(bits: u8) -> Self {
        AspectSet(bits & 7)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, a: Aspect) -> bool {
        self.0 & a.bit() != 0
    }

    pub fn with(self, a: Aspect) -> Self {
        AspectSet(self.0 | a.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Aspect> {
        Aspect::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    pub fn names(self) -> Vec<String> {
        self.iter().map(|a| a.name().to_string()).collect()
    }

    /// Parses aspect names; any unknown name is an error.
    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self, SimError> {
        names
            .iter()
            .try_fold(AspectSet::EMPTY, |set, n| Ok(set.with(n.as_ref().parse()?)))
    }

    /// All seven nonempty subsets, in bit order.
    pub fn nonempty_subsets() -> impl Iterator<Item = AspectSet> {
        (1u8..8).map(AspectSet)
    }
}

impl FromIterator<Aspect> for AspectSet {
    fn from_iter<I: IntoIterator<Item = Aspect>>(iter: I) -> Self {
        iter.into_iter().fold(AspectSet::EMPTY, AspectSet::with)
    }
}

/// Per-aspect scores in fixed order (completeness, factuality, relevance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectVector {
    pub completeness: f64,
    pub factuality: f64,
    pub relevance: f64,
}

impl AspectVector {
    pub fn new(completeness: f64, factuality: f64, relevance: f64) -> Self {
        AspectVector {
            completeness,
            factuality,
            relevance,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.completeness, self.factuality, self.relevance]
    }

    pub fn dot(self, other: AspectVector) -> f64 {
        self.completeness * other.completeness
            + self.factuality * other.factuality
            + self.relevance * other.relevance
    }

    pub fn get(self, a: Aspect) -> f64 {
        match a {
            Aspect::Completeness => self.completeness,
            Aspect::Factuality => self.factuality,
            Aspect::Relevance => self.relevance,
        }
    }
}
