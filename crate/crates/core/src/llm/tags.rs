use super::LlmError;

/// Content of the first `<tag>…</tag>` pair plus the number of further pairs
/// that were ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub content: String,
    pub extra_pairs: usize,
}

fn find_pair<'a>(text: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some((&text[start..start + len], &text[start + len + close.len()..]))
}

/// Returns the trimmed content of the first `<tag>…</tag>` pair. Later pairs
/// are counted and logged but otherwise ignored.
pub fn extract_tag_detailed(text: &str, tag: &str) -> Result<Extracted, LlmError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let (content, mut rest) =
        find_pair(text, &open, &close).ok_or_else(|| LlmError::TagNotFound(tag.to_string()))?;
    let mut extra_pairs = 0;
    while let Some((_, r)) = find_pair(rest, &open, &close) {
        extra_pairs += 1;
        rest = r;
    }
    if extra_pairs > 0 {
        log::warn!("<{tag}> appears {} times; using the first", extra_pairs + 1);
    }
    Ok(Extracted {
        content: content.trim().to_string(),
        extra_pairs,
    })
}

pub fn extract_tag(text: &str, tag: &str) -> Result<String, LlmError> {
    extract_tag_detailed(text, tag).map(|e| e.content)
}

/// Side-by-side judge decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    First,
    Second,
    Same,
}

/// Parses the `<final_answer>` of a judge completion.
pub fn parse_sbs_verdict(text: &str) -> Result<Verdict, LlmError> {
    let raw = extract_tag(text, "final_answer")?;
    let norm: String = raw
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    match norm.as_str() {
        "first_response" | "first_summary" => Ok(Verdict::First),
        "second_response" | "second_summary" => Ok(Verdict::Second),
        "the_same" => Ok(Verdict::Same),
        _ => Err(LlmError::Verdict(raw)),
    }
}
