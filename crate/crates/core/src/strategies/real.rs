use super::{drop_record, DropReason, GenOutput, Prompt, StrategyError};
use crate::data::{GenerationMeta, PreferenceExample, Strategy};
use crate::seeds::rng_for;
use crate::sim::{base_sample, true_label, utility, SimWorldConfig, UTILITY_TIE_EPS};

/// Stand-in for human-labelled data: two independent base samples labelled
/// by a draw from the true preference model. Pairs with equal utility are
/// dropped, as score-gap pairing would.
pub fn gen_sim_real(prompts: &[Prompt], world: &SimWorldConfig, seed: u64) -> Result<GenOutput, StrategyError> {
    let strategy = Strategy::Real;
    let mut out = GenOutput::new(prompts.len());
    for p in prompts {
        let mut rng = rng_for(seed, &p.id, "real");
        let a = base_sample(world, &mut rng);
        let b = base_sample(world, &mut rng);
        if (utility(&a, world) - utility(&b, world)).abs() <= UTILITY_TIE_EPS {
            out.drop(drop_record(p, strategy, DropReason::Degenerate, "equal utility", Some(&a.to_string()), Some(&b.to_string())));
            continue;
        }
        let label = true_label(&a, &b, world, &mut rng);
        out.emit(PreferenceExample::new(
            format!("real:{}", p.id),
            &p.text,
            a.to_string(),
            b.to_string(),
            label,
            GenerationMeta::new(strategy, seed),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::true_pref_prob;

    #[test]
    fn labels_follow_true_preferences() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(4000, &world);
        let out = gen_sim_real(&prompts, &world, 1).unwrap();
        let (mut a_pref, mut expected, mut var) = (0.0, 0.0, 0.0);
        for ex in &out.examples {
            let a = world.parse_response(&ex.response_a).unwrap();
            let b = world.parse_response(&ex.response_b).unwrap();
            let q = true_pref_prob(&a, &b, &world);
            a_pref += f64::from(u8::from(ex.label == crate::data::Label::APreferred));
            expected += q;
            var += q * (1.0 - q);
        }
        assert!((a_pref - expected).abs() <= 3.0 * var.sqrt());
        assert_eq!(out.examples, gen_sim_real(&prompts, &world, 1).unwrap().examples);
    }
}
