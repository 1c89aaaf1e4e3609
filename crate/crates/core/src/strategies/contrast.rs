use super::{apply_tokens, drop_record, DropReason, GenContext, GenOutput, Prompt, StrategyError};
use crate::data::{GenerationMeta, Label, PreferenceExample, Strategy};
use crate::llm::{SimTask, TemplateKind};
use crate::sim::ContrastSign;

/// RLCD: one response from the positive prompt, one from the negative
/// prompt, labelled by prompt identity. The positive response sits in slot A.
pub fn gen_rlcd(prompts: &[Prompt], ctx: &GenContext<'_>) -> Result<GenOutput, StrategyError> {
    let strategy = Strategy::Rlcd;
    let mut out = GenOutput::new(prompts.len());
    let pos = ctx.template(TemplateKind::RlcdPositive);
    let neg = ctx.template(TemplateKind::RlcdNegative);
    let mut requests = Vec::with_capacity(prompts.len() * 2);
    for p in prompts {
        requests.push(ctx.request(
            pos.render(&p.slots)?,
            false,
            ctx.seed_for(p, "rlcd/pos"),
            SimTask::Contrast(ContrastSign::Positive),
        ));
        requests.push(ctx.request(
            neg.render(&p.slots)?,
            false,
            ctx.seed_for(p, "rlcd/neg"),
            SimTask::Contrast(ContrastSign::Negative),
        ));
    }
    let results = ctx.run(&requests, &mut out)?;
    for (i, p) in prompts.iter().enumerate() {
        let pair = (
            ctx.parse_generation(&results[2 * i]),
            ctx.parse_generation(&results[2 * i + 1]),
        );
        let (good, bad) = match pair {
            (Ok(g), Ok(b)) => (g, b),
            (Err((reason, detail)), _) | (_, Err((reason, detail))) => {
                out.drop(drop_record(p, strategy, reason, detail, None, None));
                continue;
            }
        };
        if good.text == bad.text {
            out.drop(drop_record(p, strategy, DropReason::Degenerate, "identical samples", Some(&good.text), Some(&bad.text)));
            continue;
        }
        let tokens = good.tokens.plus(bad.tokens);
        let mut ex = PreferenceExample::new(
            format!("rlcd:{}", p.id),
            &p.text,
            good.text,
            bad.text,
            Label::APreferred,
            GenerationMeta::new(strategy, ctx.seed),
        )?;
        apply_tokens(&mut ex, tokens);
        out.emit(ex);
    }
    Ok(out)
}
