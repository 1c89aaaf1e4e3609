use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

use super::{
    DataError, DatasetSplit, GenerationMeta, Label, PreferenceExample, ScoredResponse, SftRecord,
    Strategy,
};

/// Output of score-gap pairing.
#[derive(Debug, Clone, PartialEq)]
pub enum Paired {
    Pair(PreferenceExample),
    Sft(SftRecord),
}

fn extreme_index(responses: &[ScoredResponse], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, r) in responses.iter().enumerate().skip(1) {
        if better(r.overall_score, responses[best].overall_score) {
            best = i;
        }
    }
    best
}

/// Pairs the best- and worst-scored responses of one prompt when their score
/// gap reaches `gap_threshold`; otherwise routes the best response to SFT.
///
/// Ties on the max or min score resolve to the lowest index.
pub fn pair_from_scores(
    prompt: &str,
    responses: &[ScoredResponse],
    gap_threshold: f64,
) -> Result<Paired, DataError> {
    if responses.is_empty() {
        return Err(DataError::Empty("pair_from_scores: no responses".into()));
    }
    if !(gap_threshold > 0.0) {
        return Err(DataError::Empty(format!(
            "pair_from_scores: gap_threshold must be > 0, got {gap_threshold}"
        )));
    }
    if let Some(bad) = responses.iter().find(|r| !r.overall_score.is_finite()) {
        return Err(DataError::Invalid {
            id: bad.prompt_id.clone(),
            reason: "non-finite overall_score".into(),
        });
    }
    let best = extreme_index(responses, |a, b| a > b);
    let worst = extreme_index(responses, |a, b| a < b);
    let hi = &responses[best];
    let lo = &responses[worst];
    let gap = hi.overall_score - lo.overall_score;
    // tolerate representation error so that e.g. 6.0 - 4.5 counts as 1.5
    if gap + 1e-9 >= gap_threshold && hi.text != lo.text {
        let ex = PreferenceExample::new(
            hi.prompt_id.clone(),
            prompt,
            hi.text.clone(),
            lo.text.clone(),
            Label::APreferred,
            GenerationMeta::new(Strategy::Real, 0),
        )?;
        Ok(Paired::Pair(ex))
    } else {
        Ok(Paired::Sft(SftRecord {
            id: hi.prompt_id.clone(),
            prompt: prompt.to_string(),
            reference: hi.text.clone(),
        }))
    }
}

/// Every pair of responses with strictly different scores, higher-scored in
/// slot A. Equal-score pairs are dropped.
pub fn all_pairs_from_scores(prompt: &str, responses: &[ScoredResponse]) -> Vec<PreferenceExample> {
    let mut out = Vec::new();
    for i in 0..responses.len() {
        for j in (i + 1)..responses.len() {
            let (ri, rj) = (&responses[i], &responses[j]);
            if ri.overall_score == rj.overall_score || ri.text == rj.text {
                continue;
            }
            let (hi, lo) = if ri.overall_score > rj.overall_score {
                (ri, rj)
            } else {
                (rj, ri)
            };
            let id = format!("{}/{}-{}", ri.prompt_id, i, j);
            if let Ok(ex) = PreferenceExample::new(
                id,
                prompt,
                hi.text.clone(),
                lo.text.clone(),
                Label::APreferred,
                GenerationMeta::new(Strategy::Real, 0),
            ) {
                out.push(ex);
            }
        }
    }
    out
}

/// Interleaves every example with its swapped-response, flipped-label twin.
pub fn flip_augment(split: &DatasetSplit) -> DatasetSplit {
    let mut examples = Vec::with_capacity(split.examples.len() * 2);
    for ex in &split.examples {
        examples.push(ex.clone());
        examples.push(ex.flipped());
    }
    DatasetSplit {
        name: split.name,
        examples,
    }
}

/// Concatenates `real` and `synthetic`, then shuffles deterministically.
pub fn mix_datasets(
    real: &DatasetSplit,
    synthetic: &DatasetSplit,
    shuffle_seed: u64,
) -> Result<DatasetSplit, DataError> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for ex in real.examples.iter().chain(&synthetic.examples) {
        if !seen.insert(ex.id.as_str()) {
            dups.insert(ex.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(DataError::DuplicateIds(dups.into_iter().collect()));
    }
    let mut examples: Vec<_> = real
        .examples
        .iter()
        .chain(&synthetic.examples)
        .cloned()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    examples.shuffle(&mut rng);
    Ok(DatasetSplit {
        name: real.name,
        examples,
    })
}
