//! Locate brace-delimited structured content inside free-form model output.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no structured content found")]
    NoStructuredContent,
}

/// A candidate structured region of the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub text: String,
    /// Byte offset of `text` in the original output.
    pub offset: usize,
    /// Came from a ``` fenced region.
    pub fenced: bool,
    /// `"name": {...}, "name": {...}` entries without enclosing braces.
    pub bare_entries: bool,
}

impl Block {
    /// A block that is exactly `text`, e.g. a document already known to be structured.
    pub fn whole(text: &str) -> Self {
        Block { text: text.to_string(), offset: 0, fenced: false, bare_entries: false }
    }
}

/// Maximal balanced `{...}` regions, fenced regions preferred, in source order.
pub fn extract_structured_block(text: &str) -> Result<Vec<Block>, ExtractError> {
    let mut fenced = Vec::new();
    for (start, end) in fenced_regions(text) {
        fenced.extend(scan(text, start, end, true));
    }
    if !fenced.is_empty() {
        return Ok(fenced);
    }
    let blocks = scan(text, 0, text.len(), false);
    if blocks.is_empty() {
        return Err(ExtractError::NoStructuredContent);
    }
    Ok(blocks)
}

/// Byte ranges of the contents of ``` fences. An unclosed fence runs to the end.
fn fenced_regions(text: &str) -> Vec<(usize, usize)> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            match open {
                None => open = Some(line_start + line.len()),
                Some(start) => {
                    regions.push((start, line_start));
                    open = None;
                }
            }
        }
        line_start += line.len();
    }
    if let Some(start) = open {
        regions.push((start, text.len()));
    }
    regions
}

fn scan(text: &str, from: usize, to: usize, fenced: bool) -> Vec<Block> {
    let region = &text[from..to];
    let spans = balanced_spans(region);
    group_entries(region, &spans)
        .into_iter()
        .map(|(start, end, bare)| Block {
            text: region[start..end].to_string(),
            offset: from + start,
            fenced,
            bare_entries: bare,
        })
        .collect()
}

/// Outermost completed `{...}` spans (end exclusive) plus whether each nests
/// braces, and whether any brace was left open.
fn brace_scan(s: &str) -> (Vec<(usize, usize, bool)>, bool) {
    let bytes = s.as_bytes();
    let mut stack: Vec<usize> = Vec::new();
    let mut completed: Vec<(usize, usize)> = Vec::new();
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    let mut last_sig: u8 = b'{';
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
                last_sig = b;
            }
            continue;
        }
        if stack.is_empty() {
            if b == b'{' {
                stack.push(i);
                last_sig = b'{';
            }
            continue;
        }
        match b {
            b'"' => quote = Some(b'"'),
            // apostrophes only open strings where a key or value may start
            b'\'' if matches!(last_sig, b'{' | b'[' | b',' | b':') => quote = Some(b'\''),
            b'{' => stack.push(i),
            b'}' => {
                let start = stack.pop().expect("non-empty stack");
                completed.push((start, i + 1));
            }
            _ => {}
        }
        if !b.is_ascii_whitespace() {
            last_sig = b;
        }
    }
    (outermost(completed), !stack.is_empty())
}

/// True when some `{` outside a string is never closed, e.g. cut-off output.
pub fn has_unclosed_brace(s: &str) -> bool {
    brace_scan(s).1
}

fn balanced_spans(s: &str) -> Vec<(usize, usize, bool)> {
    brace_scan(s).0
}

fn outermost(mut completed: Vec<(usize, usize)>) -> Vec<(usize, usize, bool)> {
    // keep only spans not contained in another completed span
    completed.sort_by_key(|&(start, end)| (start, std::cmp::Reverse(end)));
    let mut out: Vec<(usize, usize, bool)> = Vec::new();
    for (start, end) in completed {
        match out.last_mut() {
            Some(last) if start < last.1 => last.2 = true,
            _ => out.push((start, end, false)),
        }
    }
    out
}

/// Merge runs of `key: {...}` spans into bare-entry blocks.
fn group_entries(s: &str, spans: &[(usize, usize, bool)]) -> Vec<(usize, usize, bool)> {
    let mut out: Vec<(usize, usize, bool)> = Vec::new();
    let mut prev_end = 0;
    let mut prev_was_entry = false;
    for &(start, end, nested) in spans {
        match entry_key_start(s, prev_end, start, nested) {
            Some(key_start) => {
                let joined = prev_was_entry
                    && s[prev_end..key_start].chars().all(|c| c.is_whitespace() || c == ',');
                match out.last_mut() {
                    Some(last) if joined => last.1 = end,
                    _ => out.push((key_start, end, true)),
                }
                prev_was_entry = true;
            }
            None => {
                out.push((start, end, false));
                prev_was_entry = false;
            }
        }
        prev_end = end;
    }
    out
}

/// If the span at `brace` is preceded by `key:`, return where the key starts.
/// Quoted keys always count; bare keys only when they sit alone on their
/// line and the block is a flat record.
fn entry_key_start(s: &str, floor: usize, brace: usize, nested: bool) -> Option<usize> {
    let before = s[floor..brace].trim_end();
    let before = before.strip_suffix(':')?.trim_end();
    let head_end = floor + before.len();
    if let Some(q) = before.chars().last().filter(|c| *c == '"' || *c == '\'') {
        let inner = &before[..before.len() - 1];
        let open = inner.rfind(q)?;
        let key = &inner[open + 1..];
        if key.contains('\n') || key.trim().is_empty() {
            return None;
        }
        return Some(floor + open);
    }
    if nested {
        return None;
    }
    let line_start = before.rfind(['\n', ',', '{', '}']).map_or(0, |i| i + 1);
    let key = before[line_start..].trim();
    let bare_ok = !key.is_empty()
        && key.len() <= 64
        && key.chars().all(|c| c.is_alphanumeric() || c == ' ' || c == '_' || c == '-');
    if !bare_ok {
        return None;
    }
    let key_offset = before[line_start..].find(key).expect("key is a substring");
    let key_start = floor + line_start + key_offset;
    debug_assert!(key_start < head_end + 1);
    Some(key_start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefers_fenced_block() {
        let text = "Here is the plan:\n```json\n{\"apple\": {\"state\": \"intact\"}}\n```\nAlso {\"x\": 1}";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert!(blocks[0].fenced);
        assert_eq!(blocks[0].text, "{\"apple\": {\"state\": \"intact\"}}");
        assert_eq!(&text[blocks[0].offset..blocks[0].offset + blocks[0].text.len()], blocks[0].text);
    }

    #[test]
    fn bare_appendix_document_is_one_block() {
        let text = "\"apple\": {\n  \"color\": \"red\",\n  \"state\": \"intact\"\n},\n\"plate 1\": {\n  \"state\": \"dirty\"\n}\n";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert!(blocks[0].bare_entries);
        assert_eq!(blocks[0].text, text.trim_end());
    }

    #[test]
    fn prose_colon_is_not_a_key() {
        let text = "The plan: {\"apple\": {\"state\": \"intact\"}}";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert!(!blocks[0].bare_entries);
        assert_eq!(blocks[0].text, "{\"apple\": {\"state\": \"intact\"}}");
    }

    #[test]
    fn no_braces() {
        assert_eq!(extract_structured_block("no objects found."), Err(ExtractError::NoStructuredContent));
        assert_eq!(extract_structured_block(""), Err(ExtractError::NoStructuredContent));
        assert_eq!(extract_structured_block("{ never closed"), Err(ExtractError::NoStructuredContent));
    }

    #[test]
    fn multiple_blocks_in_order() {
        let text = "First {\"a\": {}} then {\"b\": {}} done } stray";
        let blocks = extract_structured_block(text).unwrap();
        let texts: Vec<_> = blocks.iter().map(|b| b.text.as_str()).collect();
        assert_eq!(texts, ["{\"a\": {}}", "{\"b\": {}}"]);
    }

    #[test]
    fn unclosed_outer_keeps_inner_blocks() {
        let text = "{ \"plans\": {\"apple\": {\"state\": \"intact\"}}";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].text, "\"plans\": {\"apple\": {\"state\": \"intact\"}}");
        assert!(blocks[0].bare_entries);
    }

    #[test]
    fn braces_inside_strings_are_ignored() {
        let text = "{\"note\": \"use } carefully\", \"apple\": {\"state\": \"intact\"}}";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].text, text);
    }

    #[test]
    fn apostrophes_in_prose_do_not_open_strings() {
        let text = "Here's what I'd do: {'apple': {'state': 'intact'}} and that's it";
        let blocks = extract_structured_block(text).unwrap();
        assert_eq!(blocks[0].text, "{'apple': {'state': 'intact'}}");
    }
}
