use super::{
    apply_tokens, drop_record, DropReason, GenContext, GenOutput, Generated, Prompt, ResponseScorer,
    StrategyError, Tokens,
};
use crate::data::{GenerationMeta, Label, PreferenceExample, Strategy};
use crate::llm::{parse_sbs_verdict, Completion, ItemError, LlmError, SimTask, TemplateKind, Verdict};

/// Maps a judge completion to a label for (first, second), or a drop reason.
pub(crate) fn judge_outcome(result: &Result<Completion, ItemError>) -> Result<(Label, &Completion), (DropReason, String)> {
    let c = result
        .as_ref()
        .map_err(|e| (DropReason::Backend, e.to_string()))?;
    match parse_sbs_verdict(&c.text) {
        Ok(Verdict::First) => Ok((Label::APreferred, c)),
        Ok(Verdict::Second) => Ok((Label::BPreferred, c)),
        Ok(Verdict::Same) => Err((DropReason::JudgeSame, "judge answered the_same".into())),
        Err(e @ LlmError::TagNotFound(_)) => Err((DropReason::TagMissing, e.to_string())),
        Err(e) => Err((DropReason::VerdictParse, e.to_string())),
    }
}

/// Renders the side-by-side judge prompt for `first` vs `second`.
pub(crate) fn judge_request(
    ctx: &GenContext<'_>,
    prompt: &Prompt,
    first: &Generated,
    second: &Generated,
    stream: &str,
) -> Result<crate::llm::CompletionRequest, StrategyError> {
    let (sa, sb) = ctx.family.judge_slots();
    let text = ctx
        .template(TemplateKind::RlaifJudge)
        .render(&ctx.slots(prompt, &[(sa, &first.text), (sb, &second.text)]))?;
    Ok(ctx.request(
        text,
        true,
        ctx.seed_for(prompt, stream),
        SimTask::Judge {
            first: first.sim.unwrap_or_default(),
            second: second.sim.unwrap_or_default(),
        },
    ))
}

/// RLAIF: two independent samples labelled by the side-by-side judge.
pub fn gen_rlaif(prompts: &[Prompt], ctx: &GenContext<'_>) -> Result<GenOutput, StrategyError> {
    let strategy = Strategy::Rlaif;
    let mut out = GenOutput::new(prompts.len());
    let first = ctx.template(TemplateKind::RmboostFirst);
    let mut requests = Vec::with_capacity(prompts.len() * 2);
    for p in prompts {
        let text = first.render(&p.slots)?;
        for stream in ["rlaif/y1", "rlaif/y2"] {
            requests.push(ctx.request(text.clone(), false, ctx.seed_for(p, stream), SimTask::Base));
        }
    }
    let results = ctx.run(&requests, &mut out)?;

    let mut pending = Vec::new();
    let mut judge_requests = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let pair = (
            ctx.parse_generation(&results[2 * i]),
            ctx.parse_generation(&results[2 * i + 1]),
        );
        let (a, b) = match pair {
            (Ok(a), Ok(b)) => (a, b),
            (Err((reason, detail)), _) | (_, Err((reason, detail))) => {
                out.drop(drop_record(p, strategy, reason, detail, None, None));
                continue;
            }
        };
        if a.text == b.text {
            out.drop(drop_record(p, strategy, DropReason::Degenerate, "identical samples", Some(&a.text), Some(&b.text)));
            continue;
        }
        judge_requests.push(judge_request(ctx, p, &a, &b, "rlaif/judge")?);
        pending.push((p, a, b));
    }
    let verdicts = ctx.run(&judge_requests, &mut out)?;

    for ((p, a, b), verdict) in pending.into_iter().zip(&verdicts) {
        match judge_outcome(verdict) {
            Ok((label, c)) => {
                let tokens = a.tokens.plus(b.tokens).add(c);
                let mut ex = PreferenceExample::new(
                    format!("rlaif:{}", p.id),
                    &p.text,
                    a.text,
                    b.text,
                    label,
                    GenerationMeta::new(strategy, ctx.seed),
                )?;
                apply_tokens(&mut ex, tokens);
                out.emit(ex);
            }
            Err((reason, detail)) => {
                out.drop(drop_record(p, strategy, reason, detail, Some(&a.text), Some(&b.text)));
            }
        }
    }
    Ok(out)
}

/// West-of-N: the best and worst of `n_pool` samples under `scorer`, kept in
/// pool order. Ties resolve to the lowest pool index.
pub fn gen_west_of_n(
    prompts: &[Prompt],
    ctx: &GenContext<'_>,
    scorer: &dyn ResponseScorer,
    n_pool: usize,
) -> Result<GenOutput, StrategyError> {
    let strategy = Strategy::WestOfN;
    if n_pool < 2 {
        return Err(StrategyError::Config("n_pool must be >= 2".into()));
    }
    let mut out = GenOutput::new(prompts.len());
    let first = ctx.template(TemplateKind::RmboostFirst);
    let mut requests = Vec::with_capacity(prompts.len() * n_pool);
    for p in prompts {
        let text = first.render(&p.slots)?;
        for k in 0..n_pool {
            requests.push(ctx.request(text.clone(), false, ctx.seed_for(p, &format!("won/y{k}")), SimTask::Base));
        }
    }
    let results = ctx.run(&requests, &mut out)?;

    for (i, p) in prompts.iter().enumerate() {
        let pool = &results[i * n_pool..(i + 1) * n_pool];
        let tokens = pool
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .fold(Tokens::ZERO, |t, c| t.add(c));
        let mut scored: Vec<(usize, Generated, f64)> = Vec::new();
        let mut last_err = String::new();
        for (k, r) in pool.iter().enumerate() {
            match ctx.parse_generation(r) {
                Ok(g) => match scorer.score(&p.text, &g.text) {
                    Ok(s) if s.is_finite() => scored.push((k, g, s)),
                    Ok(s) => last_err = format!("non-finite score {s}"),
                    Err(e) => last_err = e,
                },
                Err((_, detail)) => last_err = detail,
            }
        }
        if scored.len() < 2 {
            out.drop(drop_record(p, strategy, DropReason::AllFailed, last_err, None, None));
            continue;
        }
        let mut best = 0;
        let mut worst = 0;
        for j in 1..scored.len() {
            if scored[j].2 > scored[best].2 {
                best = j;
            }
            if scored[j].2 < scored[worst].2 {
                worst = j;
            }
        }
        let (hi, lo) = (&scored[best], &scored[worst]);
        if hi.1.text == lo.1.text {
            out.drop(drop_record(p, strategy, DropReason::Degenerate, "pool has no score spread", Some(&hi.1.text), None));
            continue;
        }
        let (a, b, label) = if hi.0 < lo.0 {
            (hi, lo, Label::APreferred)
        } else {
            (lo, hi, Label::BPreferred)
        };
        let mut ex = PreferenceExample::new(
            format!("won:{}", p.id),
            &p.text,
            a.1.text.clone(),
            b.1.text.clone(),
            label,
            GenerationMeta::new(strategy, ctx.seed),
        )?;
        apply_tokens(&mut ex, tokens);
        out.emit(ex);
    }
    Ok(out)
}
