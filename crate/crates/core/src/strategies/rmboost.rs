use rand::Rng;
use std::collections::BTreeMap;

use super::judge::{judge_outcome, judge_request};
use super::{
    apply_tokens, drop_record, sim_aspect_bullet, AspectPicker, DropReason, GenContext, GenOutput,
    Generated, LabelPolicy, Prompt, StrategyConfig, StrategyError, Tokens,
};
use crate::data::{FilterVerdict, GenerationMeta, PreferenceExample};
use crate::llm::{PromptTemplate, SimTask, TemplateKind};
use crate::seeds::rng_for;
use crate::sim::{utility, Aspect, AspectSet, EditDirection, EditSpec, SimWorldConfig, UTILITY_TIE_EPS};

/// Sim-mode quality filter: keep iff the intended preferred response has
/// strictly higher true utility (beyond rounding).
pub fn quality_filter_sim(example: &PreferenceExample, world: &SimWorldConfig) -> Result<FilterVerdict, StrategyError> {
    let good = world.parse_response(example.preferred())?;
    let bad = world.parse_response(example.rejected())?;
    Ok(if utility(&good, world) - utility(&bad, world) > UTILITY_TIE_EPS {
        FilterVerdict::Kept
    } else {
        FilterVerdict::Dropped
    })
}

/// Text-mode quality filter: keep iff the side-by-side judge agrees with the
/// intended label. A `the_same` verdict or any judge failure drops the pair.
///
/// Returns one `(verdict, reason, judge tokens)` per example.
pub fn quality_filter_judge(
    items: &[(&Prompt, &PreferenceExample)],
    ctx: &GenContext<'_>,
) -> Result<Vec<(FilterVerdict, Option<String>, Tokens)>, StrategyError> {
    let mut requests = Vec::with_capacity(items.len());
    for (p, ex) in items {
        let a = Generated {
            text: ex.response_a.clone(),
            sim: ctx.world.map(|w| w.parse_response(&ex.response_a)).transpose()?,
            tokens: Tokens::ZERO,
        };
        let b = Generated {
            text: ex.response_b.clone(),
            sim: ctx.world.map(|w| w.parse_response(&ex.response_b)).transpose()?,
            tokens: Tokens::ZERO,
        };
        requests.push(judge_request(ctx, p, &a, &b, "filter/judge")?);
    }
    let mut scratch = GenOutput::default();
    let results = ctx.run(&requests, &mut scratch)?;
    Ok(items
        .iter()
        .zip(&results)
        .map(|((_, ex), r)| match judge_outcome(r) {
            Ok((label, c)) if label == ex.label => (FilterVerdict::Kept, None, Tokens::ZERO.add(c)),
            Ok((_, c)) => (FilterVerdict::Dropped, Some("judge disagrees with intended label".into()), Tokens::ZERO.add(c)),
            Err((reason, detail)) => {
                let tokens = r.as_ref().map_or(Tokens::ZERO, |c| Tokens::ZERO.add(c));
                (FilterVerdict::Dropped, Some(format!("{reason}: {detail}")), tokens)
            }
        })
        .collect())
}

fn direction_for(index: usize, config: &StrategyConfig) -> EditDirection {
    if config.use_sft_response {
        // the SFT response is the preferred one
        return EditDirection::MakeWorse;
    }
    match config.label_choice_policy {
        LabelPolicy::AlwaysWorse => EditDirection::MakeWorse,
        LabelPolicy::AlwaysBetter => EditDirection::MakeBetter,
        LabelPolicy::Alternate if index.is_multiple_of(2) => EditDirection::MakeWorse,
        LabelPolicy::Alternate => EditDirection::MakeBetter,
    }
}

/// Aspect names for the prompt: sim aspect names in sim mode, the family's
/// guideline names otherwise.
fn pick_aspects(ctx: &GenContext<'_>, prompt: &Prompt, picker: AspectPicker) -> Vec<String> {
    let all: Vec<String> = match ctx.world {
        Some(_) => Aspect::ALL.iter().map(|a| a.name().to_string()).collect(),
        None => ctx.family.aspect_names().iter().map(|s| s.to_string()).collect(),
    };
    match picker {
        AspectPicker::All => all,
        AspectPicker::RandomSubset => {
            let mut rng = rng_for(ctx.seed, &prompt.id, "rmboost/aspects");
            let bits: u32 = rng.gen_range(1..(1u32 << all.len()));
            all.into_iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, a)| a)
                .collect()
        }
    }
}

struct Plan {
    direction: EditDirection,
    aspects: Vec<String>,
    template: PromptTemplate,
    spec: EditSpec,
}

fn plan(ctx: &GenContext<'_>, prompt: &Prompt, index: usize, config: &StrategyConfig) -> Result<Plan, StrategyError> {
    let direction = direction_for(index, config);
    let base = ctx.template(TemplateKind::RmboostConditional);
    let (aspects, template, spec) = if config.aspects_enabled {
        let aspects = pick_aspects(ctx, prompt, config.aspect_picker);
        let (bullets, set) = match ctx.world {
            Some(_) => {
                let set = AspectSet::parse(&aspects)?;
                (set.iter().map(sim_aspect_bullet).collect::<Vec<_>>(), set)
            }
            None => (aspects.iter().map(String::as_str).collect(), AspectSet::ALL),
        };
        (aspects.clone(), base.with_aspects(&bullets)?, EditSpec::new(direction, set))
    } else {
        (
            pick_aspects(ctx, prompt, AspectPicker::All),
            base.without_aspects(),
            EditSpec::no_aspect(direction),
        )
    };
    let template = match direction {
        EditDirection::MakeWorse => template,
        EditDirection::MakeBetter => template.make_better()?,
    };
    Ok(Plan {
        direction,
        aspects,
        template,
        spec,
    })
}

/// RMBoost: a first response (sampled, or the SFT response), a predetermined
/// label, and a second response generated conditioned on both. The first
/// response sits in slot A.
pub fn gen_rmboost(
    prompts: &[Prompt],
    ctx: &GenContext<'_>,
    config: &StrategyConfig,
    sft_responses: Option<&BTreeMap<String, String>>,
) -> Result<GenOutput, StrategyError> {
    config.validate()?;
    let strategy = config.strategy;
    let tag = if config.use_sft_response { "rmboost_sft" } else { "rmboost" };
    let mut out = GenOutput::new(prompts.len());

    let plans = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| plan(ctx, p, i, config))
        .collect::<Result<Vec<_>, _>>()?;
    for pl in &plans {
        match pl.direction {
            EditDirection::MakeWorse => out.report.make_worse_attempts += 1,
            EditDirection::MakeBetter => out.report.make_better_attempts += 1,
        }
    }

    // Step 1: first responses.
    let firsts: Vec<Result<Generated, (DropReason, String)>> = if config.use_sft_response {
        let sft = sft_responses.ok_or_else(|| StrategyError::Config("RMBOOST_SFT needs SFT responses".into()))?;
        prompts
            .iter()
            .map(|p| {
                let text = sft
                    .get(&p.id)
                    .ok_or_else(|| StrategyError::Config(format!("no SFT response for prompt {}", p.id)))?;
                let sim = match ctx.world {
                    Some(w) => match w.parse_response(text) {
                        Ok(y) => Some(y),
                        Err(e) => return Ok(Err((DropReason::ResponseParse, e.to_string()))),
                    },
                    None => None,
                };
                Ok(Ok(Generated {
                    text: text.clone(),
                    sim,
                    tokens: Tokens::ZERO,
                }))
            })
            .collect::<Result<_, StrategyError>>()?
    } else {
        let first = ctx.template(TemplateKind::RmboostFirst);
        let requests = prompts
            .iter()
            .map(|p| Ok(ctx.request(first.render(&p.slots)?, false, ctx.seed_for(p, "rmboost/y1"), SimTask::Base)))
            .collect::<Result<Vec<_>, StrategyError>>()?;
        ctx.run(&requests, &mut out)?
            .iter()
            .map(|r| ctx.parse_generation(r))
            .collect()
    };

    // Steps 2-4: conditional second responses.
    let mut pending = Vec::new();
    let mut requests = Vec::new();
    for ((p, pl), y1) in prompts.iter().zip(&plans).zip(firsts) {
        let y1 = match y1 {
            Ok(g) => g,
            Err((reason, detail)) => {
                out.drop(drop_record(p, strategy, reason, detail, None, None));
                continue;
            }
        };
        let text = pl.template.render(&ctx.slots(p, &[("good_response", &y1.text)]))?;
        requests.push(ctx.request(
            text,
            false,
            ctx.seed_for(p, &format!("{tag}/y2")),
            SimTask::Conditional {
                first: y1.sim.unwrap_or_default(),
                spec: pl.spec,
            },
        ));
        pending.push((p, pl, y1));
    }
    let seconds = ctx.run(&requests, &mut out)?;

    let mut built = Vec::new();
    for ((p, pl, y1), r) in pending.into_iter().zip(&seconds) {
        let y2 = match ctx.parse_generation(r) {
            Ok(g) => g,
            Err((reason, detail)) => {
                out.drop(drop_record(p, strategy, reason, detail, Some(&y1.text), None));
                continue;
            }
        };
        if y2.text == y1.text {
            out.drop(drop_record(p, strategy, DropReason::Degenerate, "second response equals the first", Some(&y1.text), Some(&y2.text)));
            continue;
        }
        let mut meta = GenerationMeta::new(strategy, ctx.seed);
        meta.corrupted_aspects = pl.aspects.clone();
        let tokens = y1.tokens.plus(y2.tokens);
        let mut ex = PreferenceExample::new(
            format!("{tag}:{}", p.id),
            &p.text,
            y1.text,
            y2.text,
            pl.direction.label(),
            meta,
        )?;
        apply_tokens(&mut ex, tokens);
        built.push((p, ex));
    }

    // Step 5: quality filter.
    if !config.filter_enabled {
        for (_, ex) in built {
            out.emit(ex);
        }
        return Ok(out);
    }
    let verdicts: Vec<(FilterVerdict, Option<String>, Tokens)> = match ctx.world {
        Some(w) => built
            .iter()
            .map(|(_, ex)| Ok((quality_filter_sim(ex, w)?, Some("no utility margin".to_string()), Tokens::ZERO)))
            .collect::<Result<_, StrategyError>>()?,
        None => {
            let items: Vec<_> = built.iter().map(|(p, ex)| (*p, ex)).collect();
            quality_filter_judge(&items, ctx)?
        }
    };
    for ((p, mut ex), (verdict, reason, judge_tokens)) in built.into_iter().zip(verdicts) {
        match verdict {
            FilterVerdict::Kept => {
                ex.meta.filter_verdict = FilterVerdict::Kept;
                let tokens = Tokens {
                    prompt: ex.meta.prompt_tokens,
                    completion: ex.meta.completion_tokens,
                }
                .plus(judge_tokens);
                apply_tokens(&mut ex, tokens);
                out.emit(ex);
            }
            _ => out.drop(drop_record(
                p,
                strategy,
                DropReason::FilterRejected,
                reason.unwrap_or_default(),
                Some(&ex.response_a),
                Some(&ex.response_b),
            )),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Strategy};
    use crate::llm::{BackendError, Completion, CompletionBackend, CompletionRequest, TemplateFamily};
    use crate::sim::{exact_cond_prob, SimResponse};
    use crate::strategies::testutil::{fast_backend, sim_run};
    use crate::strategies::check_provenance;

    fn cfg(policy: LabelPolicy, filter: bool) -> StrategyConfig {
        StrategyConfig {
            label_choice_policy: policy,
            filter_enabled: filter,
            ..StrategyConfig::default()
        }
    }

    #[test]
    fn exact_edits_never_raise_utility() {
        let world = SimWorldConfig {
            edit_failure: 0.0,
            ..SimWorldConfig::reference()
        };
        let prompts = Prompt::sim_batch(500, &world);
        let out = sim_run(&world, 1, |ctx| gen_rmboost(&prompts, ctx, &cfg(LabelPolicy::AlwaysWorse, false), None)).unwrap();
        assert!(out.examples.len() > 200);
        for ex in &out.examples {
            let y1 = world.parse_response(&ex.response_a).unwrap();
            let y2 = world.parse_response(&ex.response_b).unwrap();
            assert!(utility(&y2, &world) <= utility(&y1, &world) + 1e-12);
            assert_eq!(ex.label, Label::APreferred);
            assert!(!ex.meta.label_is_noisy);
            check_provenance(ex).unwrap();
        }
    }

    #[test]
    fn unchanged_second_response_rate_matches_enumeration() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(3000, &world);
        let config = cfg(LabelPolicy::Alternate, false);
        let out = sim_run(&world, 2, |ctx| {
            let o = gen_rmboost(&prompts, ctx, &config, None).unwrap();
            // recover each attempt's first response and edit spec
            let mut expected = 0.0;
            let mut var = 0.0;
            for (i, p) in prompts.iter().enumerate() {
                let pl = plan(ctx, p, i, &config).unwrap();
                let id = format!("rmboost:{}", p.id);
                let y1 = o
                    .examples
                    .iter()
                    .find(|e| e.id == id)
                    .map(|e| e.response_a.clone())
                    .or_else(|| o.drops.iter().find(|d| d.prompt_id == p.id).and_then(|d| d.response_a.clone()))
                    .unwrap();
                let y1: SimResponse = y1.parse().unwrap();
                let q = exact_cond_prob(&y1, &pl.spec, &y1, &world).unwrap();
                expected += q;
                var += q * (1.0 - q);
            }
            (o, expected, var)
        });
        let (o, expected, var) = out;
        let same = o.report.drops.get(&DropReason::Degenerate).copied().unwrap_or(0) as f64;
        assert!((same - expected).abs() <= 3.0 * var.sqrt(), "same {same} expected {expected}");
        // η alone contributes at least η·n unchanged pairs
        assert!(same >= 0.1 * 3000.0 - 3.0 * (3000.0f64 * 0.09).sqrt());
    }

    #[test]
    fn alternate_policy_splits_attempts_evenly() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(200, &world);
        let out = sim_run(&world, 3, |ctx| gen_rmboost(&prompts, ctx, &cfg(LabelPolicy::Alternate, true), None)).unwrap();
        assert_eq!(out.report.make_worse_attempts, 100);
        assert_eq!(out.report.make_better_attempts, 100);
        assert!(out.examples.iter().any(|e| e.label == Label::BPreferred));
    }

    #[test]
    fn filter_lowers_label_error_rate() {
        let world = SimWorldConfig {
            edit_failure: 0.2,
            ..SimWorldConfig::reference()
        };
        let prompts = Prompt::sim_batch(1000, &world);
        let error_rate = |filter: bool| {
            let out = sim_run(&world, 4, |ctx| gen_rmboost(&prompts, ctx, &cfg(LabelPolicy::Alternate, filter), None)).unwrap();
            let wrong = out
                .examples
                .iter()
                .filter(|ex| quality_filter_sim(ex, &world).unwrap() == FilterVerdict::Dropped)
                .count();
            (wrong as f64 / out.examples.len() as f64, out)
        };
        let (pre, _) = error_rate(false);
        let (post, out) = error_rate(true);
        assert!(pre > 0.0);
        assert!(post < pre);
        assert_eq!(post, 0.0);
        assert!(out.examples.iter().all(|e| e.meta.filter_verdict == FilterVerdict::Kept));
        assert!(out.report.drops[&DropReason::FilterRejected] > 0);
    }

    #[test]
    fn sft_response_is_kept_verbatim() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(50, &world);
        let sft: BTreeMap<String, String> = prompts.iter().map(|p| (p.id.clone(), "fact0 fact1 fact2".to_string())).collect();
        let config = StrategyConfig::for_strategy(Strategy::RmboostSft);
        let out = sim_run(&world, 5, |ctx| gen_rmboost(&prompts, ctx, &config, Some(&sft))).unwrap();
        assert!(!out.examples.is_empty());
        for ex in &out.examples {
            assert_eq!(ex.preferred(), "fact0 fact1 fact2");
            assert_eq!(ex.meta.strategy, Strategy::RmboostSft);
        }
        // only the conditional calls are made
        assert_eq!(out.report.calls.n_requests, 50);
    }

    #[test]
    fn no_aspect_records_every_aspect() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(40, &world);
        let config = StrategyConfig {
            aspects_enabled: false,
            ..StrategyConfig::default()
        };
        let out = sim_run(&world, 6, |ctx| gen_rmboost(&prompts, ctx, &config, None)).unwrap();
        for ex in &out.examples {
            assert_eq!(ex.meta.corrupted_aspects, vec!["completeness", "factuality", "relevance"]);
        }
    }

    #[test]
    fn random_subsets_cover_all_nonempty_choices() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(700, &world);
        let counts = sim_run(&world, 7, |ctx| {
            let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
            for p in &prompts {
                *counts.entry(pick_aspects(ctx, p, AspectPicker::RandomSubset)).or_default() += 1;
            }
            counts
        });
        assert_eq!(counts.len(), 7);
        // uniform: each subset expected 100 times, sd ≈ 9.3
        assert!(counts.values().all(|c| (*c as f64 - 100.0).abs() < 40.0), "{counts:?}");
    }

    #[test]
    fn deterministic_across_parallelism() {
        let world = SimWorldConfig::reference();
        let prompts = Prompt::sim_batch(100, &world);
        let a = sim_run(&world, 8, |ctx| gen_rmboost(&prompts, ctx, &StrategyConfig::default(), None)).unwrap();
        let backend = crate::llm::SimBackend::new(world.clone());
        let serial = crate::llm::BackendConfig {
            max_parallel: 1,
            ..fast_backend()
        };
        let ctx = GenContext {
            backend: &backend,
            backend_config: &serial,
            family: TemplateFamily::QaFeedback,
            world: Some(&world),
            seed: 8,
        };
        let b = gen_rmboost(&prompts, &ctx, &StrategyConfig::default(), None).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.drops, b.drops);
    }

    /// Text backend that echoes canned responses and a fixed verdict.
    struct Scripted {
        verdict: &'static str,
    }

    impl CompletionBackend for Scripted {
        fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
            let text = if req.prompt.contains("<final_answer></final_answer>") {
                format!("thinking... <final_answer>{}</final_answer>", self.verdict)
            } else if req.prompt.contains("Below is the bad response.") {
                format!("<response>better {}</response>", req.seed % 1000)
            } else if req.prompt.contains("Below is the good response.") {
                format!("<response>worse {}</response>", req.seed % 1000)
            } else {
                format!("<response>first {}</response>", req.seed % 1000)
            };
            Ok(Completion {
                prompt_tokens: Some(crate::llm::whitespace_tokens(&req.prompt)),
                completion_tokens: Some(crate::llm::whitespace_tokens(&text)),
                text,
            })
        }
    }

    fn text_prompts(n: usize) -> Vec<Prompt> {
        (0..n)
            .map(|i| Prompt {
                id: format!("t{i}"),
                text: format!("post {i}"),
                slots: [("post".to_string(), format!("post body {i}"))].into_iter().collect(),
            })
            .collect()
    }

    fn text_run(verdict: &'static str, n: usize) -> GenOutput {
        let backend = Scripted { verdict };
        let bc = fast_backend();
        let ctx = GenContext {
            backend: &backend,
            backend_config: &bc,
            family: TemplateFamily::Tldr,
            world: None,
            seed: 1,
        };
        gen_rmboost(&text_prompts(n), &ctx, &StrategyConfig::default(), None).unwrap()
    }

    #[test]
    fn text_mode_filter_keeps_agreeing_judgements() {
        // judge always says first: MAKE_WORSE pairs agree, MAKE_BETTER pairs do not
        let out = text_run("first_summary", 10);
        assert_eq!(out.examples.len(), 5);
        assert!(out.examples.iter().all(|e| e.label == Label::APreferred));
        assert!(out.examples.iter().all(|e| e.response_b.starts_with("worse")));
        assert_eq!(out.report.drops[&DropReason::FilterRejected], 5);
        for ex in &out.examples {
            check_provenance(ex).unwrap();
            let aspects = TemplateFamily::Tldr.aspect_names();
            assert!(ex.meta.corrupted_aspects.iter().all(|a| aspects.contains(&a.as_str())));
        }
    }

    #[test]
    fn text_mode_same_verdict_drops_everything() {
        let out = text_run("the_same", 6);
        assert!(out.examples.is_empty());
        assert_eq!(out.report.drops[&DropReason::FilterRejected], 6);
    }
}
