//! Machine-readable fenced blocks inside free-text model responses.

use serde::de::DeserializeOwned;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block<'a> {
    /// Info string after the opening fence, e.g. `json`; may be empty.
    pub lang: &'a str,
    pub body: &'a str,
}

/// Closed ```` ``` ```` blocks in order of appearance. An unclosed trailing
/// fence is not a block.
pub fn fenced_blocks(text: &str) -> Vec<Block<'_>> {
    let mut blocks = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim();
        match open {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    open = Some((info.trim(), offset));
                }
            }
            Some((lang, body_start)) if trimmed == "```" => {
                let body = text[body_start..start].strip_suffix('\n').unwrap_or(&text[body_start..start]);
                blocks.push(Block { lang, body });
                open = None;
            }
            Some(_) => {}
        }
    }
    blocks
}

/// The last `json` (or untagged) block that deserializes as `T`.
pub fn last_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let mut last_err = None;
    for b in fenced_blocks(text).into_iter().rev() {
        if !(b.lang.is_empty() || b.lang.eq_ignore_ascii_case("json")) {
            continue;
        }
        match serde_json::from_str(b.body) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = last_err.or(Some(e.to_string())),
        }
    }
    Err(last_err.unwrap_or_else(|| "no fenced json block".into()))
}

/// The last non-empty block tagged `lang` (case-insensitive; `py` counts as
/// `python`).
pub fn last_code<'a>(text: &'a str, lang: &str) -> Option<&'a str> {
    let matches = |tag: &str| tag.eq_ignore_ascii_case(lang) || (lang == "python" && tag.eq_ignore_ascii_case("py"));
    fenced_blocks(text)
        .into_iter()
        .rev()
        .find(|b| matches(b.lang) && !b.body.trim().is_empty())
        .map(|b| b.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_blocks_with_info_strings() {
        let text = "Intro\n```json\n[1, 2]\n```\nmiddle\n```python\ndef f():\n    return 1\n```\n";
        let blocks = fenced_blocks(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], Block { lang: "json", body: "[1, 2]" });
        assert_eq!(blocks[1].body, "def f():\n    return 1");
    }

    #[test]
    fn last_well_formed_json_wins() {
        let text = "```json\n[1]\n```\n```json\n[2]\n```\n```json\n[3,\n```\n```json\n[4\n";
        assert_eq!(last_json::<Vec<u32>>(text).unwrap(), vec![2]);
        assert!(last_json::<Vec<u32>>("no blocks").is_err());
        assert!(last_json::<Vec<u32>>("```json\n{\"a\": 1}\n```").is_err());
    }

    #[test]
    fn code_blocks_by_language() {
        let text = "```python\ndef a(): pass\n```\n```\nplain\n```\n```py\ndef b(): pass\n```\n```python\n\n```";
        assert_eq!(last_code(text, "python"), Some("def b(): pass"));
        assert_eq!(last_code(text, "rust"), None);
    }

    #[test]
    fn unclosed_fence_is_ignored() {
        let text = "```python\ndef a(): pass\n```\n```python\ndef b(";
        assert_eq!(last_code(text, "python"), Some("def a(): pass"));
    }
}
