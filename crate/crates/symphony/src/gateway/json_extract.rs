//! Extraction of the first JSON object embedded in free-form model output.

use serde_json::Value;

use crate::gateway::GatewayError;

/// Finds the first balanced `{...}` in `text` that parses as JSON, skipping
/// prose, code fences and anything else around it. Candidates that balance
/// but fail to parse are skipped in favour of later ones.
pub fn extract_json(text: &str) -> Result<Value, GatewayError> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(open) = text[start..].find('{') {
        let open = start + open;
        if let Some(end) = balanced_end(bytes, open) {
            if let Ok(value) = serde_json::from_str::<Value>(&text[open..=end]) {
                if value.is_object() {
                    return Ok(value);
                }
            }
        }
        start = open + 1;
    }
    Err(GatewayError::NoJsonFound)
}

/// Index of the closing brace matching the brace at `open`, honouring string
/// literals and escapes.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_bare_object() {
        let v = extract_json(r#"{"agent": "Grounding Agent"}"#).unwrap();
        assert_eq!(v["agent"], "Grounding Agent");
    }

    #[test]
    fn extracts_from_code_fence_and_prose() {
        let text = "Sure, here is my decision:\n```json\n{\"credible\": true, \"comment\": null}\n```\nLet me know.";
        let v = extract_json(text).unwrap();
        assert_eq!(v["credible"], true);
    }

    #[test]
    fn first_valid_object_wins() {
        let text = r#"{"a": 1} and later {"b": 2}"#;
        let v = extract_json(text).unwrap();
        assert_eq!(v["a"], 1);
    }

    #[test]
    fn unparseable_candidate_is_skipped() {
        let text = "{not json at all} but then {\"ok\": 3}";
        let v = extract_json(text).unwrap();
        assert_eq!(v["ok"], 3);
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_the_scanner() {
        let text = r#"{"note": "uses { and } and \" quotes", "n": 7}"#;
        let v = extract_json(text).unwrap();
        assert_eq!(v["n"], 7);
    }

    #[test]
    fn no_object_is_an_error() {
        assert!(matches!(extract_json("no json here"), Err(GatewayError::NoJsonFound)));
        assert!(matches!(extract_json("[1, 2, 3]"), Err(GatewayError::NoJsonFound)));
    }
}
